//! Aligned patch pairs from two captures of the same scene: grayscale
//! conversion, matching, RANSAC verification, spatial NMS and synchronized
//! cropping.

mod homography;
mod matcher;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use homography::{
    estimate_homography_dlt, ransac_homography, symmetric_transfer_error, Homography, RansacConfig,
    RansacResult,
};
pub use matcher::{
    format_matches, parse_matches, CornerNccMatcher, Keypoint, Matcher, PrecomputedMatches,
};

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::raw::{RawFrame, CHANNELS};

/// Putative correspondence in plane-pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Match {
    pub point_a: (f64, f64),
    pub point_b: (f64, f64),
    pub score: f64,
}

impl Match {
    pub fn within(&self, dims_a: (usize, usize), dims_b: (usize, usize)) -> bool {
        let inside = |(x, y): (f64, f64), (w, h): (usize, usize)| {
            x >= 0.0 && y >= 0.0 && x <= (w as f64 - 1.0) && y <= (h as f64 - 1.0)
        };
        inside(self.point_a, dims_a) && inside(self.point_b, dims_b)
    }
}

pub const EQUAL_WEIGHTS: [f64; CHANNELS] = [0.25; CHANNELS];

/// Per-pixel mean of the four planes.
pub fn to_grayscale(frame: &RawFrame) -> Plane {
    to_grayscale_weighted(frame, &EQUAL_WEIGHTS)
}

pub fn to_grayscale_weighted(frame: &RawFrame, weights: &[f64; CHANNELS]) -> Plane {
    let (w, h) = frame.dims();
    let p = frame.planes();
    Plane::from_fn(w, h, |x, y| {
        (0..CHANNELS)
            .map(|c| weights[c] * p[c].get(x, y) as f64)
            .sum::<f64>() as f32
    })
}

/// Greedy suppression by descending score: a match survives when its
/// `point_a` is at least `min_dist` from every match kept before it.
/// Equal scores keep their input order.
pub fn spatial_nms(matches: &[Match], min_dist: f64) -> Vec<Match> {
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.sort_by(|&i, &j| matches[j].score.total_cmp(&matches[i].score));
    let mut kept: Vec<Match> = Vec::new();
    for i in order {
        let m = matches[i];
        let far = kept
            .iter()
            .all(|k| (k.point_a.0 - m.point_a.0).hypot(k.point_a.1 - m.point_a.1) >= min_dist);
        if far {
            kept.push(m);
        }
    }
    kept
}

/// Two equally sized crops around a correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub patch_a: RawFrame,
    pub patch_b: RawFrame,
    /// Window centers (top-left + size/2) after any boundary shift.
    pub center_a: (usize, usize),
    pub center_b: (usize, usize),
    pub shift_applied: (i64, i64),
    pub homography: Homography,
    pub source: Match,
}

/// Smallest-magnitude shift `d` with `lo ≤ d ≤ hi`.
fn minimal_shift(lo: i64, hi: i64) -> Option<i64> {
    (lo <= hi).then(|| 0.clamp(lo, hi))
}

/// Crop origins in both frames plus the shared shift, for one axis.
fn axis_window(ca: f64, cb: f64, na: usize, nb: usize, size: usize) -> Option<(usize, usize, i64)> {
    let half = (size / 2) as i64;
    let a0 = ca.round() as i64 - half;
    let b0 = cb.round() as i64 - half;
    let lo = (-a0).max(-b0);
    let hi = (na as i64 - size as i64 - a0).min(nb as i64 - size as i64 - b0);
    let d = minimal_shift(lo, hi)?;
    Some(((a0 + d) as usize, (b0 + d) as usize, d))
}

/// Crop `size × size` windows centered on the match in both frames. A window
/// that would cross a boundary is moved inward by the smallest integer
/// offset, and the same offset is applied to the other window.
pub fn synchronized_crop(
    frame_a: &RawFrame,
    frame_b: &RawFrame,
    m: &Match,
    size: usize,
    homography: Homography,
) -> Result<PatchPair> {
    if size == 0 {
        return Err(Error::invalid("crop size must be positive"));
    }
    for (name, f) in [("A", frame_a), ("B", frame_b)] {
        if f.width() < size || f.height() < size {
            return Err(Error::invalid(format!(
                "frame {name} is {}x{}, smaller than crop size {size}",
                f.width(),
                f.height()
            )));
        }
    }
    if !m.within(frame_a.dims(), frame_b.dims()) {
        return Err(Error::invalid(format!(
            "match {m:?} lies outside the frames"
        )));
    }
    let no_window = || Error::invalid("no common shift keeps both windows inside their frames");
    let (xa, xb, dx) = axis_window(
        m.point_a.0,
        m.point_b.0,
        frame_a.width(),
        frame_b.width(),
        size,
    )
    .ok_or_else(no_window)?;
    let (ya, yb, dy) = axis_window(
        m.point_a.1,
        m.point_b.1,
        frame_a.height(),
        frame_b.height(),
        size,
    )
    .ok_or_else(no_window)?;
    let half = size / 2;
    Ok(PatchPair {
        patch_a: frame_a.crop(xa, ya, size, size)?,
        patch_b: frame_b.crop(xb, yb, size, size)?,
        center_a: (xa + half, ya + half),
        center_b: (xb + half, yb + half),
        shift_applied: (dx, dy),
        homography,
        source: *m,
    })
}

/// Pipeline settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    pub crop_size: usize,
    pub nms_min_dist: f64,
    pub gray_weights: [f64; CHANNELS],
    pub ransac: RansacConfig,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            crop_size: 256,
            nms_min_dist: 128.0,
            gray_weights: EQUAL_WEIGHTS,
            ransac: RansacConfig::default(),
        }
    }
}

/// One entry of the manifest pair list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPair {
    #[serde(rename = "match")]
    pub source: Match,
    pub center_a: (usize, usize),
    pub center_b: (usize, usize),
    pub shift: (i64, i64),
}

/// Provenance record for one `build_pairs` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairManifest {
    pub homography: Option<Homography>,
    pub ransac_threshold_px: f64,
    pub ransac_max_iters: usize,
    pub min_inliers: usize,
    pub nms_min_dist: f64,
    pub crop_size: usize,
    pub seed: u64,
    pub match_count: usize,
    pub inlier_count: usize,
    pub pairs: Vec<ManifestPair>,
    pub warning: Option<String>,
}

pub struct PairingOutput {
    pub pairs: Vec<PatchPair>,
    pub manifest: PairManifest,
}

/// grayscale → match → RANSAC inliers → NMS → synchronized crops.
///
/// Matching or verification failures are not errors: the result is empty
/// and the manifest carries a warning.
pub fn build_pairs(
    frame_a: &RawFrame,
    frame_b: &RawFrame,
    cfg: &PairingConfig,
    matcher: &dyn Matcher,
    seed: u64,
) -> Result<PairingOutput> {
    for (name, f) in [("A", frame_a), ("B", frame_b)] {
        if f.width() < cfg.crop_size || f.height() < cfg.crop_size {
            return Err(Error::invalid(format!(
                "frame {name} is {}x{}, smaller than crop size {}",
                f.width(),
                f.height(),
                cfg.crop_size
            )));
        }
    }
    if !(cfg.nms_min_dist >= 0.0) {
        return Err(Error::invalid("nms_min_dist must be non-negative"));
    }
    let mut manifest = PairManifest {
        homography: None,
        ransac_threshold_px: cfg.ransac.threshold_px,
        ransac_max_iters: cfg.ransac.max_iters,
        min_inliers: cfg.ransac.min_inliers,
        nms_min_dist: cfg.nms_min_dist,
        crop_size: cfg.crop_size,
        seed,
        match_count: 0,
        inlier_count: 0,
        pairs: Vec::new(),
        warning: None,
    };
    let gray_a = to_grayscale_weighted(frame_a, &cfg.gray_weights);
    let gray_b = to_grayscale_weighted(frame_b, &cfg.gray_weights);
    let matches = match matcher.match_planes(&gray_a, &gray_b) {
        Ok(m) => m,
        Err(Error::EmptyResult(msg)) => {
            manifest.warning = Some(msg);
            return Ok(PairingOutput {
                pairs: Vec::new(),
                manifest,
            });
        }
        Err(e) => return Err(e),
    };
    manifest.match_count = matches.len();
    let fit = match ransac_homography(&matches, &cfg.ransac, seed) {
        Ok(r) => r,
        Err(Error::Numerical(msg) | Error::InvalidInput(msg)) => {
            manifest.warning = Some(format!("geometric verification failed: {msg}"));
            return Ok(PairingOutput {
                pairs: Vec::new(),
                manifest,
            });
        }
        Err(e) => return Err(e),
    };
    manifest.homography = Some(fit.homography);
    manifest.inlier_count = fit.inlier_count();
    let inliers: Vec<Match> = matches
        .iter()
        .zip(&fit.inliers)
        .filter(|(_, &ok)| ok)
        .map(|(m, _)| *m)
        .collect();
    let mut pairs = Vec::new();
    for m in spatial_nms(&inliers, cfg.nms_min_dist) {
        match synchronized_crop(frame_a, frame_b, &m, cfg.crop_size, fit.homography) {
            Ok(p) => pairs.push(p),
            // No shared window fits both frames for this match; skip it.
            Err(Error::InvalidInput(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    manifest.pairs = pairs
        .iter()
        .map(|p| ManifestPair {
            source: p.source,
            center_a: p.center_a,
            center_b: p.center_b,
            shift: p.shift_applied,
        })
        .collect();
    if pairs.is_empty() {
        manifest.warning = Some("no patch pairs survived filtering".into());
    }
    Ok(PairingOutput { pairs, manifest })
}

pub fn manifest_to_json(m: &PairManifest) -> Result<String> {
    serde_json::to_string_pretty(m).map_err(|e| Error::format(e.to_string()))
}

pub fn manifest_from_json(s: &str) -> Result<PairManifest> {
    serde_json::from_str(s).map_err(|e| Error::format(format!("manifest: {e}")))
}

pub fn save_manifest(m: &PairManifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_json(m)?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<PairManifest> {
    manifest_from_json(&std::fs::read_to_string(path)?)
}
