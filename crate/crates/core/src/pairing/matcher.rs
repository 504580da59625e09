//! Feature matching: a pluggable interface, a corner/NCC baseline and a
//! matcher backed by externally computed correspondences.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Match;
use crate::error::{Error, Result};
use crate::plane::Plane;

/// Source of putative correspondences between two grayscale planes.
pub trait Matcher: Sync {
    /// Smallest plane side the matcher can work with.
    fn min_size(&self) -> usize;

    fn match_planes(&self, a: &Plane, b: &Plane) -> Result<Vec<Match>>;
}

/// Harris corners described by zero-mean, unit-norm square patches and
/// matched by normalized cross-correlation with a ratio test and a mutual
/// nearest-neighbour check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CornerNccMatcher {
    pub max_corners: usize,
    pub harris_k: f64,
    /// Corners must exceed this fraction of the strongest response.
    pub relative_threshold: f64,
    /// Descriptor patch is `(2r + 1)²`.
    pub patch_radius: usize,
    /// Keep a match when `1 − ncc₁ < ratio · (1 − ncc₂)`.
    pub ratio: f64,
    pub min_ncc: f64,
}

impl Default for CornerNccMatcher {
    fn default() -> Self {
        Self {
            max_corners: 500,
            harris_k: 0.04,
            relative_threshold: 0.01,
            patch_radius: 7,
            ratio: 0.8,
            min_ncc: 0.5,
        }
    }
}

// Gaussian window (σ = 1) for the structure tensor.
const WINDOW: [f64; 5] = [
    0.054_488_684_549_642_9,
    0.244_201_342_003_233_6,
    0.402_619_946_894_247,
    0.244_201_342_003_233_6,
    0.054_488_684_549_642_9,
];
const ABS_RESPONSE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

fn sobel_xy(p: &Plane) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = p.dims();
    let g = |x: isize, y: isize| p.get_clamped(x, y) as f64;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let y = y as isize;
            let mut gx = Vec::with_capacity(w);
            let mut gy = Vec::with_capacity(w);
            for x in 0..w as isize {
                gx.push(
                    g(x + 1, y - 1) + 2.0 * g(x + 1, y) + g(x + 1, y + 1)
                        - g(x - 1, y - 1)
                        - 2.0 * g(x - 1, y)
                        - g(x - 1, y + 1),
                );
                gy.push(
                    g(x - 1, y + 1) + 2.0 * g(x, y + 1) + g(x + 1, y + 1)
                        - g(x - 1, y - 1)
                        - 2.0 * g(x, y - 1)
                        - g(x + 1, y - 1),
                );
            }
            (gx, gy)
        })
        .collect();
    let (gx, gy): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    (gx.concat(), gy.concat())
}

/// Separable Gaussian smoothing with edge replication.
fn smooth(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let r = WINDOW.len() as isize / 2;
    let at = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            *out = (-r..=r)
                .map(|k| WINDOW[(k + r) as usize] * src[y * w + at(x as isize + k, w)])
                .sum();
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = (-r..=r)
                .map(|k| WINDOW[(k + r) as usize] * tmp[at(y as isize + k, h) * w + x])
                .sum();
        }
    });
    out
}

impl CornerNccMatcher {
    fn validate(&self) -> Result<()> {
        if self.max_corners == 0
            || !(self.ratio > 0.0 && self.ratio <= 1.0)
            || !self.harris_k.is_finite()
        {
            return Err(Error::invalid("invalid matcher configuration"));
        }
        Ok(())
    }

    /// Harris response map, row-major.
    pub fn harris_response(&self, p: &Plane) -> Vec<f64> {
        let (w, h) = p.dims();
        let (gx, gy) = sobel_xy(p);
        let xx: Vec<f64> = gx.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = gy.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();
        let (sxx, syy, sxy) = (smooth(&xx, w, h), smooth(&yy, w, h), smooth(&xy, w, h));
        (0..w * h)
            .map(|i| {
                let tr = sxx[i] + syy[i];
                sxx[i] * syy[i] - sxy[i] * sxy[i] - self.harris_k * tr * tr
            })
            .collect()
    }

    /// Strongest local maxima (3×3) away from the border, sorted by
    /// descending response with ties broken by raster order.
    pub fn detect(&self, p: &Plane) -> Vec<Keypoint> {
        let (w, h) = p.dims();
        let border = self.patch_radius + 1;
        if w <= 2 * border || h <= 2 * border {
            return Vec::new();
        }
        let resp = self.harris_response(p);
        let peak = resp.iter().copied().fold(0.0, f64::max);
        let floor = (self.relative_threshold * peak).max(ABS_RESPONSE_FLOOR);
        let mut kps = Vec::new();
        for y in border..h - border {
            for x in border..w - border {
                let r = resp[y * w + x];
                if r <= floor {
                    continue;
                }
                // Plateau ties go to the first pixel in raster order.
                let is_max = (-1isize..=1).all(|dy| {
                    (-1isize..=1).all(|dx| {
                        let (nx, ny) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                        let n = resp[ny * w + nx];
                        let earlier = (dy, dx) < (0, 0);
                        (dx == 0 && dy == 0) || if earlier { r > n } else { r >= n }
                    })
                });
                if is_max {
                    kps.push(Keypoint { x, y, response: r });
                }
            }
        }
        kps.sort_by(|a, b| {
            b.response
                .total_cmp(&a.response)
                .then((a.y, a.x).cmp(&(b.y, b.x)))
        });
        kps.truncate(self.max_corners);
        kps
    }

    /// Zero-mean unit-norm patch; `None` for a flat patch.
    fn descriptor(&self, p: &Plane, kp: &Keypoint) -> Option<Vec<f64>> {
        let r = self.patch_radius;
        let mut d = Vec::with_capacity((2 * r + 1).pow(2));
        for y in kp.y - r..=kp.y + r {
            for x in kp.x - r..=kp.x + r {
                d.push(p.get(x, y) as f64);
            }
        }
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        d.iter_mut().for_each(|v| *v -= mean);
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return None;
        }
        d.iter_mut().for_each(|v| *v /= norm);
        Some(d)
    }

    fn describe(&self, p: &Plane) -> Vec<(Keypoint, Vec<f64>)> {
        self.detect(p)
            .par_iter()
            .filter_map(|kp| self.descriptor(p, kp).map(|d| (*kp, d)))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the best and the second-best score in one row.
fn best_two(row: &[f64]) -> (usize, f64, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    for (j, &s) in row.iter().enumerate() {
        if s > best.1 {
            second = best.1;
            best = (j, s);
        } else if s > second {
            second = s;
        }
    }
    (best.0, best.1, second)
}

impl Matcher for CornerNccMatcher {
    fn min_size(&self) -> usize {
        2 * self.patch_radius + 3
    }

    fn match_planes(&self, a: &Plane, b: &Plane) -> Result<Vec<Match>> {
        self.validate()?;
        let min = self.min_size();
        for p in [a, b] {
            if p.width() < min || p.height() < min {
                return Err(Error::invalid(format!(
                    "plane {}x{} smaller than the matcher minimum {min}",
                    p.width(),
                    p.height()
                )));
            }
        }
        let da = self.describe(a);
        let db = self.describe(b);
        if da.is_empty() || db.is_empty() {
            return Err(Error::empty("no keypoints found"));
        }
        let sim: Vec<Vec<f64>> = da
            .par_iter()
            .map(|(_, d)| db.iter().map(|(_, e)| dot(d, e)).collect())
            .collect();
        // Best partner of each B keypoint, for the mutual check.
        let back: Vec<usize> = (0..db.len())
            .map(|j| {
                let col: Vec<f64> = sim.iter().map(|row| row[j]).collect();
                best_two(&col).0
            })
            .collect();
        let mut out = Vec::new();
        for (i, row) in sim.iter().enumerate() {
            let (j, s1, s2) = best_two(row);
            if back[j] != i || s1 < self.min_ncc {
                continue;
            }
            let d1 = 1.0 - s1;
            let d2 = 1.0 - s2.max(-1.0);
            if s2.is_finite() && d1 >= self.ratio * d2 {
                continue;
            }
            let (ka, kb) = (&da[i].0, &db[j].0);
            out.push(Match {
                point_a: (ka.x as f64, ka.y as f64),
                point_b: (kb.x as f64, kb.y as f64),
                score: s1,
            });
        }
        Ok(out)
    }
}

/// Correspondences computed elsewhere (e.g. by a dense neural matcher).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputedMatches {
    pub matches: Vec<Match>,
}

impl PrecomputedMatches {
    pub fn new(matches: Vec<Match>) -> Self {
        Self { matches }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(parse_matches(&std::fs::read_to_string(path)?)?))
    }
}

impl Matcher for PrecomputedMatches {
    fn min_size(&self) -> usize {
        1
    }

    fn match_planes(&self, a: &Plane, b: &Plane) -> Result<Vec<Match>> {
        if self.matches.is_empty() {
            return Err(Error::empty("no keypoints found"));
        }
        for m in &self.matches {
            if !m.within(a.dims(), b.dims()) {
                return Err(Error::invalid(format!(
                    "match {m:?} lies outside the planes"
                )));
            }
        }
        Ok(self.matches.clone())
    }
}

/// Parse `xa ya xb yb score` lines; blank lines and `#` comments are skipped.
pub fn parse_matches(text: &str) -> Result<Vec<Match>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(n, line)| {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(format!("match line {}: {e}", n + 1)))?;
            if v.len() != 5 || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::format(format!(
                    "match line {}: expected 5 finite numbers",
                    n + 1
                )));
            }
            Ok(Match {
                point_a: (v[0], v[1]),
                point_b: (v[2], v[3]),
                score: v[4],
            })
        })
        .collect()
}

/// Inverse of [`parse_matches`]; numbers use the shortest exact form.
pub fn format_matches(matches: &[Match]) -> String {
    let mut s = String::new();
    for m in matches {
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            m.point_a.0, m.point_a.1, m.point_b.0, m.point_b.1, m.score
        );
    }
    s
}
