//! Planar homography estimation: normalized DLT and seeded RANSAC.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Match;
use crate::error::{Error, Result};

/// 3×3 projective transform mapping frame-A points to frame-B points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    /// Scale so `H[2][2] = 1` when that entry is nonzero.
    pub fn normalized(m: Matrix3<f64>) -> Self {
        let s = m[(2, 2)];
        if s != 0.0 {
            Homography(m / s)
        } else {
            Homography(m)
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        std::array::from_fn(|i| self.0[(i / 3, i % 3)])
    }

    pub fn from_row_major(v: &[f64; 9]) -> Self {
        Homography(Matrix3::from_row_slice(v))
    }

    pub fn inverse(&self) -> Option<Homography> {
        self.0.try_inverse().map(Homography::normalized)
    }

    pub fn project(&self, p: (f64, f64)) -> (f64, f64) {
        project(&self.0, p)
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Homography::from_row_major(&<[f64; 9]>::deserialize(d)?))
    }
}

fn project(m: &Matrix3<f64>, (x, y): (f64, f64)) -> (f64, f64) {
    let v = m * Vector3::new(x, y, 1.0);
    (v.x / v.z, v.y / v.z)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// RMS of forward and backward transfer distances, in pixels:
/// `sqrt((|H·a − b|² + |H⁻¹·b − a|²) / 2)`.
pub fn symmetric_transfer_error(h: &Homography, h_inv: &Homography, m: &Match) -> f64 {
    let f = dist(h.project(m.point_a), m.point_b);
    let b = dist(h_inv.project(m.point_b), m.point_a);
    let e = ((f * f + b * b) / 2.0).sqrt();
    if e.is_finite() {
        e
    } else {
        f64::INFINITY
    }
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance from it to √2.
fn normalizing_transform(pts: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    if mean_dist <= f64::EPSILON {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(
        s,
        0.0,
        -s * cx,
        0.0,
        s,
        -s * cy,
        0.0,
        0.0,
        1.0,
    ))
}

/// Twice the signed triangle area.
fn cross(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// True when some three of the four points are (nearly) collinear.
fn has_collinear_triple(pts: &[(f64, f64); 4]) -> bool {
    let scale = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| dist(*a, *b)))
        .fold(0.0, f64::max);
    if scale <= f64::EPSILON {
        return true;
    }
    let tol = 1e-6 * scale * scale;
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    TRIPLES
        .iter()
        .any(|&(i, j, k)| cross(pts[i], pts[j], pts[k]).abs() <= tol)
}

/// Normalized direct linear transform over all given correspondences (≥ 4).
pub fn estimate_homography_dlt(matches: &[Match]) -> Result<Homography> {
    if matches.len() < 4 {
        return Err(Error::invalid(format!(
            "homography needs at least 4 correspondences, got {}",
            matches.len()
        )));
    }
    let pa: Vec<(f64, f64)> = matches.iter().map(|m| m.point_a).collect();
    let pb: Vec<(f64, f64)> = matches.iter().map(|m| m.point_b).collect();
    let (ta, tb) = match (normalizing_transform(&pa), normalizing_transform(&pb)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::numerical(
                "degenerate configuration: coincident points",
            ))
        }
    };
    let n = matches.len();
    // At least 9 rows so the SVD yields the full right singular basis.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in pa.iter().zip(&pb).enumerate() {
        let (x, y) = project(&ta, *p);
        let (u, v) = project(&tb, *q);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::numerical("SVD did not converge"))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, second) = (order[0], order[1]);
    // A one-dimensional null space is required; a second near-zero singular
    // value means the points do not pin down a unique homography.
    if sv[second] <= 1e-10 * sv.max() {
        return Err(Error::numerical(
            "degenerate configuration: rank-deficient DLT system",
        ));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tb_inv = tb
        .try_inverse()
        .ok_or_else(|| Error::numerical("singular normalization"))?;
    let m = tb_inv * hn * ta;
    if m.determinant().abs() <= f64::EPSILON * m.norm().powi(3) {
        return Err(Error::numerical(
            "degenerate configuration: singular homography",
        ));
    }
    Ok(Homography::normalized(m))
}

/// RANSAC settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold on the symmetric transfer error, in pixels.
    pub threshold_px: f64,
    pub max_iters: usize,
    pub min_inliers: usize,
    /// Early exit once the sampled consensus is this likely to be outlier-free.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold_px: 2.0,
            max_iters: 2000,
            min_inliers: 12,
            confidence: 0.999,
        }
    }
}

/// Fitted model plus the inlier mask under it.
#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn consensus(h: &Homography, matches: &[Match], threshold: f64) -> Option<(Vec<bool>, usize, f64)> {
    let h_inv = h.inverse()?;
    let mut mask = Vec::with_capacity(matches.len());
    let mut count = 0;
    let mut err_sum = 0.0;
    for m in matches {
        let e = symmetric_transfer_error(h, &h_inv, m);
        let ok = e <= threshold;
        if ok {
            count += 1;
            err_sum += e;
        }
        mask.push(ok);
    }
    Some((mask, count, err_sum))
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let p_good = inlier_ratio.powi(4);
    if p_good <= 0.0 {
        return f64::INFINITY;
    }
    if p_good >= 1.0 {
        return 0.0;
    }
    (1.0 - confidence).ln() / (1.0 - p_good).ln()
}

/// Robust homography from putative matches.
///
/// Minimal 4-point samples drawn from a ChaCha stream seeded with `seed`;
/// samples with a collinear triple in either image are skipped. The best
/// consensus set is refitted with the DLT and the inlier mask recomputed
/// under the refitted model (keeping the better of the two models).
pub fn ransac_homography(matches: &[Match], cfg: &RansacConfig, seed: u64) -> Result<RansacResult> {
    if matches.len() < 4 {
        return Err(Error::invalid(format!(
            "RANSAC needs at least 4 matches, got {}",
            matches.len()
        )));
    }
    if !(cfg.threshold_px > 0.0) || cfg.max_iters == 0 {
        return Err(Error::invalid(
            "RANSAC threshold and iteration budget must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = matches.len();
    let mut best: Option<(Homography, Vec<bool>, usize, f64)> = None;
    let mut degenerate = 0usize;
    let mut iters = 0usize;
    let mut budget = cfg.max_iters as f64;
    while (iters as f64) < budget.min(cfg.max_iters as f64) {
        iters += 1;
        let idx = sample(&mut rng, n, 4);
        let pick: [usize; 4] = std::array::from_fn(|i| idx.index(i));
        let pa = pick.map(|i| matches[i].point_a);
        let pb = pick.map(|i| matches[i].point_b);
        if has_collinear_triple(&pa) || has_collinear_triple(&pb) {
            degenerate += 1;
            continue;
        }
        let subset: Vec<Match> = pick.iter().map(|&i| matches[i]).collect();
        let Ok(h) = estimate_homography_dlt(&subset) else {
            degenerate += 1;
            continue;
        };
        let Some((mask, count, err)) = consensus(&h, matches, cfg.threshold_px) else {
            continue;
        };
        let better = match &best {
            None => count > 0,
            Some((_, _, bc, be)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            budget = required_iterations(count as f64 / n as f64, cfg.confidence).max(1.0);
            best = Some((h, mask, count, err));
        }
    }
    let Some((h, mask, count, err)) = best else {
        if degenerate == iters {
            return Err(Error::numerical(
                "degenerate configuration: every sample was collinear",
            ));
        }
        return Err(Error::numerical("RANSAC found no consensus"));
    };
    let (mut h, mut mask, mut count) = (h, mask, count);
    if count >= 4 {
        let inliers: Vec<Match> = matches
            .iter()
            .zip(&mask)
            .filter(|(_, &ok)| ok)
            .map(|(m, _)| *m)
            .collect();
        if let Ok(refit) = estimate_homography_dlt(&inliers) {
            if let Some((m2, c2, e2)) = consensus(&refit, matches, cfg.threshold_px) {
                if c2 > count || (c2 == count && e2 <= err) {
                    h = refit;
                    mask = m2;
                    count = c2;
                }
            }
        }
    }
    if count < cfg.min_inliers.max(4) {
        return Err(Error::numerical(format!(
            "best model has {count} inliers, need {}",
            cfg.min_inliers.max(4)
        )));
    }
    Ok(RansacResult {
        homography: h,
        inliers: mask,
        iterations: iters,
    })
}
