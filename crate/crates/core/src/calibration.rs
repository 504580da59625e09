//! Global pixel-wise RAW-to-RAW calibration maps.
//!
//! A map sends a source pixel's feature row `φ(p)` to a target pixel by
//! right-multiplication, `q ≈ φ(p) · M`. Three feature sets are supported:
//!
//! * `linear4`: the four packed channels, `M` is 4×4;
//! * `rgb3`: `(r, (gr + gb)/2, b)`, `M` is 3×3, and the mapped green is
//!   written to both green planes;
//! * `quad14`: squares, pairwise products and linear terms
//!   (see [`quad_expand`]), `M` is 14×4.
//!
//! Fitting solves the least-squares problem through an SVD of the design
//! matrix rather than the normal equations; the quadratic design is badly
//! conditioned when pixel values span a narrow range.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::raw::{RawFrame, CHANNELS};

/// Length of the quadratic feature row.
pub const QUAD_FEATURES: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    Linear4,
    Rgb3,
    Quad14,
}

impl CalibrationKind {
    /// `(rows, cols)` of the matrix.
    pub fn shape(self) -> (usize, usize) {
        match self {
            CalibrationKind::Linear4 => (4, 4),
            CalibrationKind::Rgb3 => (3, 3),
            CalibrationKind::Quad14 => (QUAD_FEATURES, 4),
        }
    }

    pub fn feature_dim(self) -> usize {
        self.shape().0
    }

    /// Feature row of a source pixel.
    pub fn features(self, p: &[f64; CHANNELS]) -> Vec<f64> {
        match self {
            CalibrationKind::Linear4 => p.to_vec(),
            CalibrationKind::Rgb3 => green_averaged(p).to_vec(),
            CalibrationKind::Quad14 => quad_expand(p).to_vec(),
        }
    }

    /// Regression target of a target pixel.
    fn targets(self, p: &[f64; CHANNELS]) -> Vec<f64> {
        match self {
            CalibrationKind::Rgb3 => green_averaged(p).to_vec(),
            _ => p.to_vec(),
        }
    }
}

fn green_averaged(p: &[f64; CHANNELS]) -> [f64; 3] {
    [p[0], 0.5 * (p[1] + p[2]), p[3]]
}

/// `[r², gr², gb², b², r·gr, r·gb, r·b, gr·gb, gr·b, gb·b, r, gr, gb, b]`
pub fn quad_expand(p: &[f64; CHANNELS]) -> [f64; QUAD_FEATURES] {
    let [r, gr, gb, b] = *p;
    [
        r * r,
        gr * gr,
        gb * gb,
        b * b,
        r * gr,
        r * gb,
        r * b,
        gr * gb,
        gr * b,
        gb * b,
        r,
        gr,
        gb,
        b,
    ]
}

/// A fitted global calibration map.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationMap {
    pub kind: CalibrationKind,
    /// Row-major, `kind.shape()`.
    pub matrix: Vec<Vec<f64>>,
    pub source_camera: String,
    pub target_camera: String,
}

impl CalibrationMap {
    pub fn new(
        kind: CalibrationKind,
        matrix: Vec<Vec<f64>>,
        source_camera: impl Into<String>,
        target_camera: impl Into<String>,
    ) -> Result<Self> {
        let map = Self {
            kind,
            matrix,
            source_camera: source_camera.into(),
            target_camera: target_camera.into(),
        };
        map.validate()?;
        Ok(map)
    }

    /// Identity-like map: linear terms pass through, everything else zero.
    pub fn identity(kind: CalibrationKind) -> Self {
        let (rows, cols) = kind.shape();
        let offset = rows - cols;
        let matrix = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| if r == c + offset { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            kind,
            matrix,
            source_camera: String::new(),
            target_camera: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.kind.shape();
        if self.matrix.len() != rows || self.matrix.iter().any(|r| r.len() != cols) {
            return Err(Error::format(format!(
                "{:?} map needs a {rows}x{cols} matrix",
                self.kind
            )));
        }
        if self.matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::format("calibration matrix holds non-finite values"));
        }
        Ok(())
    }

    /// Map one pixel without clamping.
    pub fn map_pixel(&self, p: &[f64; CHANNELS]) -> [f64; CHANNELS] {
        let phi = self.kind.features(p);
        let cols = self.kind.shape().1;
        let mut out = vec![0.0; cols];
        for (f, row) in phi.iter().zip(&self.matrix) {
            for (o, m) in out.iter_mut().zip(row) {
                *o += f * m;
            }
        }
        match self.kind {
            CalibrationKind::Rgb3 => [out[0], out[1], out[1], out[2]],
            _ => [out[0], out[1], out[2], out[3]],
        }
    }
}

/// Least-squares fit of `tgt ≈ φ(src) · M`.
pub fn fit_calibration(
    src: &[[f64; CHANNELS]],
    tgt: &[[f64; CHANNELS]],
    kind: CalibrationKind,
) -> Result<CalibrationMap> {
    if src.len() != tgt.len() {
        return Err(Error::invalid(format!(
            "{} source pixels but {} target pixels",
            src.len(),
            tgt.len()
        )));
    }
    let (f, o) = kind.shape();
    let n = src.len();
    if n < f {
        return Err(Error::invalid(format!(
            "{kind:?} needs at least {f} samples, got {n}"
        )));
    }
    let design = DMatrix::from_fn(n, f, |i, j| kind.features(&src[i])[j]);
    let rhs = DMatrix::from_fn(n, o, |i, j| kind.targets(&tgt[i])[j]);

    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * n.max(f) as f64 * f64::EPSILON;
    if smax == 0.0 || svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::numerical(format!(
            "rank-deficient {kind:?} design matrix"
        )));
    }
    let solution = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::numerical(e.to_string()))?;
    let matrix = (0..f)
        .map(|r| (0..o).map(|c| solution[(r, c)]).collect())
        .collect();
    CalibrationMap::new(kind, matrix, "", "")
}

/// Fit a map between two aligned frames of equal shape.
pub fn fit_calibration_frames(
    src: &RawFrame,
    tgt: &RawFrame,
    kind: CalibrationKind,
) -> Result<CalibrationMap> {
    src.ensure_same_shape(tgt)?;
    let mut map = fit_calibration(&src.pixels(), &tgt.pixels(), kind)?;
    map.source_camera = src.meta.camera_id.clone();
    map.target_camera = tgt.meta.camera_id.clone();
    Ok(map)
}

/// Apply `map` to every pixel; results are clamped to `[0, 1]`.
pub fn apply_calibration(map: &CalibrationMap, frame: &RawFrame) -> Result<RawFrame> {
    map.validate()?;
    let (w, h) = frame.dims();
    let mut planes: [Vec<f32>; CHANNELS] = std::array::from_fn(|_| Vec::with_capacity(w * h));
    for y in 0..h {
        for x in 0..w {
            let q = map.map_pixel(&frame.pixel(x, y));
            for c in 0..CHANNELS {
                planes[c].push(q[c].clamp(0.0, 1.0) as f32);
            }
        }
    }
    let planes: Vec<Plane> = planes
        .into_iter()
        .map(|d| Plane::new(w, h, d))
        .collect::<Result<_>>()?;
    let mut meta = frame.meta.clone();
    if !map.target_camera.is_empty() {
        meta.camera_id = map.target_camera.clone();
    }
    RawFrame::new(planes.try_into().expect("four planes"), meta)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    kind: CalibrationKind,
    matrix: Vec<Vec<f64>>,
    source_camera: String,
    target_camera: String,
}

pub fn map_to_json(map: &CalibrationMap) -> String {
    let file = MapFile {
        kind: map.kind,
        matrix: map.matrix.clone(),
        source_camera: map.source_camera.clone(),
        target_camera: map.target_camera.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("map serializes");
    s.push('\n');
    s
}

pub fn map_from_json(text: &str) -> Result<CalibrationMap> {
    let file: MapFile =
        serde_json::from_str(text).map_err(|e| Error::format(format!("calibration map: {e}")))?;
    CalibrationMap::new(
        file.kind,
        file.matrix,
        file.source_camera,
        file.target_camera,
    )
}

pub fn save_map(map: &CalibrationMap, path: &Path) -> Result<()> {
    fs::write(path, map_to_json(map))?;
    Ok(())
}

pub fn load_map(path: &Path) -> Result<CalibrationMap> {
    map_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::CameraMeta;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pixels(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 4]> {
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn residual_rms(map: &CalibrationMap, src: &[[f64; 4]], tgt: &[[f64; 4]]) -> f64 {
        let mut ss = 0.0;
        let mut n = 0usize;
        for (s, t) in src.iter().zip(tgt) {
            let q = map.map_pixel(s);
            let t = map.kind.targets(t);
            let q = map.kind.targets(&q);
            for (a, b) in q.iter().zip(&t) {
                ss += (a - b).powi(2);
                n += 1;
            }
        }
        (ss / n as f64).sqrt()
    }

    #[test]
    fn quad_expand_examples() {
        assert_eq!(
            quad_expand(&[1.0, 0.0, 0.0, 0.0]),
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(quad_expand(&[0.0; 4]), [0.0; 14]);
        assert_eq!(quad_expand(&[1.0; 4]), [1.0; 14]);
        let q = quad_expand(&[2.0, 3.0, 5.0, 7.0]);
        assert_eq!(&q[10..], &[2.0, 3.0, 5.0, 7.0]);
        assert_eq!(q[8], 21.0);
    }

    proptest! {
        #[test]
        fn quad_expand_is_homogeneous_by_parts(
            p in prop::array::uniform4(-2.0f64..2.0),
            s in -3.0f64..3.0,
        ) {
            let a = quad_expand(&p);
            let b = quad_expand(&p.map(|v| v * s));
            for i in 0..10 {
                prop_assert!((b[i] - s * s * a[i]).abs() <= 1e-12 * (1.0 + b[i].abs()));
            }
            for i in 10..14 {
                prop_assert!((b[i] - s * a[i]).abs() <= 1e-12 * (1.0 + b[i].abs()));
            }
        }
    }

    #[test]
    fn exact_linear4_map_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = random_pixels(&mut rng, 20);
        let gen = CalibrationMap::new(
            CalibrationKind::Linear4,
            random_matrix(&mut rng, 4, 4),
            "a",
            "b",
        )
        .unwrap();
        let tgt: Vec<[f64; 4]> = src.iter().map(|p| gen.map_pixel(p)).collect();
        let fit = fit_calibration(&src, &tgt, CalibrationKind::Linear4).unwrap();
        for (r1, r2) in fit.matrix.iter().zip(&gen.matrix) {
            for (a, b) in r1.iter().zip(r2) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_is_recovered_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_pixels(&mut rng, 60);
        for kind in [
            CalibrationKind::Linear4,
            CalibrationKind::Rgb3,
            CalibrationKind::Quad14,
        ] {
            let fit = fit_calibration(&src, &src, kind).unwrap();
            let id = CalibrationMap::identity(kind);
            for (r1, r2) in fit.matrix.iter().zip(&id.matrix) {
                for (a, b) in r1.iter().zip(r2) {
                    assert!((a - b).abs() < 1e-9, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn quad14_synthetic_map_fits_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_pixels(&mut rng, 200);
        let gen = CalibrationMap::new(
            CalibrationKind::Quad14,
            random_matrix(&mut rng, 14, 4),
            "",
            "",
        )
        .unwrap();
        let tgt: Vec<[f64; 4]> = src.iter().map(|p| gen.map_pixel(p)).collect();
        let fit = fit_calibration(&src, &tgt, CalibrationKind::Quad14).unwrap();
        assert!(residual_rms(&fit, &src, &tgt) < 1e-8);
    }

    #[test]
    fn rgb3_duplicates_green() {
        let m = CalibrationMap::new(
            CalibrationKind::Rgb3,
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 0.5, 0.0],
                vec![0.0, 0.0, 2.0],
            ],
            "",
            "",
        )
        .unwrap();
        assert_eq!(
            m.map_pixel(&[0.125, 0.25, 0.5, 0.375]),
            [0.125, 0.1875, 0.1875, 0.75]
        );
    }

    #[test]
    fn insufficient_or_degenerate_samples_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_pixels(&mut rng, 10);
        assert!(matches!(
            fit_calibration(&src, &src, CalibrationKind::Quad14),
            Err(Error::InvalidInput(_))
        ));
        // Every pixel gray: channels are collinear.
        let gray: Vec<[f64; 4]> = (0..30).map(|i| [i as f64 / 30.0; 4]).collect();
        assert!(matches!(
            fit_calibration(&gray, &gray, CalibrationKind::Linear4),
            Err(Error::Numerical(_))
        ));
        assert!(fit_calibration(&src, &src[..9], CalibrationKind::Linear4).is_err());
    }

    #[test]
    fn fit_is_least_squares_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = random_pixels(&mut rng, 80);
        let tgt = random_pixels(&mut rng, 80);
        for kind in [
            CalibrationKind::Linear4,
            CalibrationKind::Rgb3,
            CalibrationKind::Quad14,
        ] {
            let fit = fit_calibration(&src, &tgt, kind).unwrap();
            let best = residual_rms(&fit, &src, &tgt);
            for _ in 0..50 {
                let mut probe = fit.clone();
                for row in &mut probe.matrix {
                    for v in row {
                        *v += rng.random_range(-1e-3..1e-3);
                    }
                }
                assert!(residual_rms(&probe, &src, &tgt) >= best - 1e-15);
            }
        }
    }

    #[test]
    fn fit_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let src = random_pixels(&mut rng, 100);
        let tgt = random_pixels(&mut rng, 100);
        let a = fit_calibration(&src, &tgt, CalibrationKind::Quad14).unwrap();
        let mut idx: Vec<usize> = (0..100).collect();
        idx.reverse();
        idx.swap(3, 70);
        let s2: Vec<_> = idx.iter().map(|&i| src[i]).collect();
        let t2: Vec<_> = idx.iter().map(|&i| tgt[i]).collect();
        let b = fit_calibration(&s2, &t2, CalibrationKind::Quad14).unwrap();
        for (r1, r2) in a.matrix.iter().zip(&b.matrix) {
            for (x, y) in r1.iter().zip(r2) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    fn frame(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RawFrame {
        RawFrame::new(
            std::array::from_fn(|_| Plane::from_fn(w, h, |_, _| rng.random::<f32>())),
            CameraMeta::normalized("src"),
        )
        .unwrap()
    }

    #[test]
    fn apply_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = frame(6, 5, &mut rng);
        assert_eq!(
            apply_calibration(&CalibrationMap::identity(CalibrationKind::Linear4), &f).unwrap(),
            f
        );
        let zero =
            CalibrationMap::new(CalibrationKind::Quad14, vec![vec![0.0; 4]; 14], "", "").unwrap();
        let z = apply_calibration(&zero, &f).unwrap();
        assert!(z
            .planes()
            .iter()
            .all(|p| p.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn apply_clamps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = frame(4, 4, &mut rng);
        let mut m = CalibrationMap::identity(CalibrationKind::Linear4);
        m.matrix[0][0] = 10.0;
        m.matrix[1][1] = -10.0;
        let g = apply_calibration(&m, &f).unwrap();
        assert!(g
            .plane(0)
            .as_slice()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        assert!(g.plane(1).as_slice().iter().all(|&v| v == 0.0 || v <= 1.0));
    }

    #[test]
    fn map_json_round_trip_and_schema() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = CalibrationMap::new(
            CalibrationKind::Quad14,
            random_matrix(&mut rng, 14, 4),
            "a",
            "b",
        )
        .unwrap();
        let text = map_to_json(&m);
        assert!(text.contains("\"quad14\""));
        assert_eq!(map_from_json(&text).unwrap(), m);
        let bad = text.replace("\"quad14\"", "\"rgb3\"");
        assert!(matches!(map_from_json(&bad), Err(Error::Format(_))));
        assert!(map_from_json(r#"{"kind":"linear4","matrix":[],"source_camera":"a"}"#).is_err());
    }
}
