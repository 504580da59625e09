//! Sensor noise profiling.
//!
//! A noise profile is a per-channel table of average patch variance indexed
//! by patch mean intensity. Only flat patches contribute: each plane is tiled
//! into non-overlapping square patches, and a patch is kept when its mean
//! Sobel gradient magnitude is at or below a percentile of all patch
//! gradients in that plane. Patch variance comes from the median absolute
//! deviation so residual texture and hot pixels do not dominate.
//!
//! Profiles from two sources are compared with [`noise_distance`], a masked
//! mean absolute difference over bins populated in both. A Poisson-Gaussian
//! model `Var(x) = α·z + β` can be fitted to a profile
//! ([`fit_poisson_gaussian`]) or sampled from ([`synthesize_noise`]).

mod gradient;
mod stats;
mod synth;

pub use gradient::sobel_gradient_magnitude;
pub use stats::{mad, median_in_place, patch_stats, PatchStats, MAD_TO_SIGMA};
pub use synth::synthesize_noise;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raw::{RawFrame, CHANNELS};

/// Parameters of flat-patch selection and intensity binning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfileConfig {
    pub patch_size: usize,
    /// Patches with mean gradient at or below this quantile are kept.
    pub gradient_percentile: f64,
    pub num_bins: usize,
    /// A bin counts as populated with at least this many patches.
    pub min_bin_count: u64,
}

impl Default for NoiseProfileConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            gradient_percentile: 0.20,
            num_bins: 100,
            min_bin_count: 1,
        }
    }
}

/// Intensity range covered by the bins.
pub const BIN_RANGE: [f64; 2] = [0.0, 1.0];

impl NoiseProfileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::invalid("patch_size must be at least 2"));
        }
        if !(self.gradient_percentile > 0.0 && self.gradient_percentile <= 1.0) {
            return Err(Error::invalid("gradient_percentile must lie in (0, 1]"));
        }
        if self.num_bins < 1 {
            return Err(Error::invalid("num_bins must be at least 1"));
        }
        if self.min_bin_count < 1 {
            return Err(Error::invalid("min_bin_count must be at least 1"));
        }
        Ok(())
    }

    /// Bin of a patch mean: `floor(μ·B)`, with `μ = 1` in the last bin.
    pub fn bin_of(&self, mean: f64) -> usize {
        let b = (mean * self.num_bins as f64).floor();
        if b < 0.0 {
            0
        } else {
            (b as usize).min(self.num_bins - 1)
        }
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) / self.num_bins as f64
    }
}

/// Top-left corner of a patch, in plane pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchCoord {
    pub x: usize,
    pub y: usize,
}

/// Per-channel intensity-binned mean patch variance.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseProfile {
    pub camera_id: String,
    pub config: NoiseProfileConfig,
    /// `CHANNELS` rows of `num_bins` entries; zero where a bin is empty.
    pub mean_variance: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
}

impl NoiseProfile {
    pub fn bins(&self) -> usize {
        self.config.num_bins
    }

    pub fn is_populated(&self, c: usize, b: usize) -> bool {
        self.counts[c][b] >= self.config.min_bin_count
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let b = self.config.num_bins;
        if self.mean_variance.len() != CHANNELS || self.counts.len() != CHANNELS {
            return Err(Error::format(format!(
                "profile must have {CHANNELS} channels"
            )));
        }
        for c in 0..CHANNELS {
            if self.mean_variance[c].len() != b || self.counts[c].len() != b {
                return Err(Error::format(format!("channel {c} must have {b} bins")));
            }
            for (v, &n) in self.mean_variance[c].iter().zip(&self.counts[c]) {
                if !v.is_finite() || (n > 0 && *v < 0.0) {
                    return Err(Error::format(format!(
                        "invalid mean variance {v} in channel {c}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Running per-bin variance sums, so several frames can be pooled before
/// averaging.
#[derive(Clone, Debug)]
pub struct NoiseAccumulator {
    camera_id: String,
    config: NoiseProfileConfig,
    sums: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
}

impl NoiseAccumulator {
    pub fn new(camera_id: impl Into<String>, config: NoiseProfileConfig) -> Result<Self> {
        config.validate()?;
        let b = config.num_bins;
        Ok(Self {
            camera_id: camera_id.into(),
            sums: vec![vec![0.0; b]; CHANNELS],
            counts: vec![vec![0; b]; CHANNELS],
            config,
        })
    }

    /// Bin the flat patches of `frame`.
    pub fn add_frame(&mut self, frame: &RawFrame) -> Result<()> {
        let cfg = &self.config;
        let (w, h) = frame.dims();
        if w < cfg.patch_size || h < cfg.patch_size {
            return Err(Error::empty(format!(
                "no flat patches retained: {w}x{h} planes hold no {0}x{0} patch",
                cfg.patch_size
            )));
        }
        let flat = select_flat_patches(frame, cfg)?;
        let per_channel: Vec<Vec<PatchStats>> = (0..CHANNELS)
            .into_par_iter()
            .map(|c| {
                flat[c]
                    .iter()
                    .map(|p| patch_stats(&patch_values(frame, c, *p, cfg.patch_size)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        // Per-frame partial sums are merged afterwards so pooling N copies of
        // a frame reproduces the single-frame averages.
        let mut sums = vec![vec![0.0f64; cfg.num_bins]; CHANNELS];
        let mut counts = vec![vec![0u64; cfg.num_bins]; CHANNELS];
        for (c, patches) in per_channel.iter().enumerate() {
            if patches.is_empty() {
                return Err(Error::empty(format!(
                    "no flat patches retained in channel {c}"
                )));
            }
            for s in patches {
                let b = cfg.bin_of(s.mean);
                sums[c][b] += s.variance;
                counts[c][b] += 1;
            }
        }
        for c in 0..CHANNELS {
            for b in 0..cfg.num_bins {
                self.sums[c][b] += sums[c][b];
                self.counts[c][b] += counts[c][b];
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<NoiseProfile> {
        if self.counts.iter().any(|row| row.iter().all(|&n| n == 0)) {
            return Err(Error::empty("no flat patches retained"));
        }
        let mean_variance = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(s, n)| {
                s.iter()
                    .zip(n)
                    .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(NoiseProfile {
            camera_id: self.camera_id,
            config: self.config,
            mean_variance,
            counts: self.counts,
        })
    }
}

fn patch_values(frame: &RawFrame, c: usize, p: PatchCoord, size: usize) -> Vec<f32> {
    let plane = frame.plane(c);
    let mut out = Vec::with_capacity(size * size);
    for y in p.y..p.y + size {
        out.extend_from_slice(&plane.row(y)[p.x..p.x + size]);
    }
    out
}

/// Nearest-rank quantile: the smallest sample with at least `q·n` samples at
/// or below it.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Mean Sobel magnitude of every patch in one plane, row-major over the
/// patch grid.
pub fn patch_gradients(
    frame: &RawFrame,
    c: usize,
    patch_size: usize,
) -> Result<Vec<(PatchCoord, f64)>> {
    let grad = sobel_gradient_magnitude(frame.plane(c))?;
    let (w, h) = grad.dims();
    let mut out = Vec::with_capacity((w / patch_size) * (h / patch_size));
    for py in 0..h / patch_size {
        for px in 0..w / patch_size {
            let coord = PatchCoord {
                x: px * patch_size,
                y: py * patch_size,
            };
            let mut sum = 0.0f64;
            for y in coord.y..coord.y + patch_size {
                sum += grad.row(y)[coord.x..coord.x + patch_size]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            out.push((coord, sum / (patch_size * patch_size) as f64));
        }
    }
    Ok(out)
}

/// Flat patches of each plane, in row-major patch order.
pub fn select_flat_patches(
    frame: &RawFrame,
    cfg: &NoiseProfileConfig,
) -> Result<[Vec<PatchCoord>; CHANNELS]> {
    cfg.validate()?;
    let (w, h) = frame.dims();
    if w < cfg.patch_size || h < cfg.patch_size {
        return Err(Error::invalid(format!(
            "{w}x{h} planes are smaller than one {0}x{0} patch",
            cfg.patch_size
        )));
    }
    let selected: Vec<Vec<PatchCoord>> = (0..CHANNELS)
        .into_par_iter()
        .map(|c| {
            let grads = patch_gradients(frame, c, cfg.patch_size)?;
            let mut sorted: Vec<f64> = grads.iter().map(|&(_, g)| g).collect();
            sorted.sort_unstable_by(f64::total_cmp);
            let threshold = nearest_rank(&sorted, cfg.gradient_percentile);
            Ok(grads
                .into_iter()
                .filter(|&(_, g)| g <= threshold)
                .map(|(p, _)| p)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(selected.try_into().expect("four channels"))
}

/// Noise profile of a single frame.
pub fn build_noise_profile(frame: &RawFrame, cfg: &NoiseProfileConfig) -> Result<NoiseProfile> {
    let mut acc = NoiseAccumulator::new(frame.meta.camera_id.clone(), cfg.clone())?;
    acc.add_frame(frame)?;
    acc.finish()
}

/// Divisor applied to the summed masked differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNormalization {
    /// `1 / (B·C)` regardless of how many bins are populated.
    #[default]
    BinsTimesChannels,
    /// Divide by the number of jointly populated bins.
    ValidBins,
}

/// Masked mean absolute difference between two noise profiles.
///
/// A bin participates only when populated in both profiles; the stricter
/// `min_bin_count` of the two applies.
pub fn noise_distance(
    fake: &NoiseProfile,
    real: &NoiseProfile,
    norm: DistanceNormalization,
) -> Result<f64> {
    fake.validate()?;
    real.validate()?;
    if fake.bins() != real.bins() {
        return Err(Error::invalid(format!(
            "bin counts differ: {} vs {}",
            fake.bins(),
            real.bins()
        )));
    }
    let min_count = fake.config.min_bin_count.max(real.config.min_bin_count);
    let mut sum = 0.0f64;
    let mut valid = 0usize;
    for c in 0..CHANNELS {
        for b in 0..fake.bins() {
            if fake.counts[c][b] >= min_count && real.counts[c][b] >= min_count {
                sum += (fake.mean_variance[c][b] - real.mean_variance[c][b]).abs();
                valid += 1;
            }
        }
    }
    let denom = match norm {
        DistanceNormalization::BinsTimesChannels => (fake.bins() * CHANNELS) as f64,
        DistanceNormalization::ValidBins if valid == 0 => return Ok(0.0),
        DistanceNormalization::ValidBins => valid as f64,
    };
    Ok(sum / denom)
}

/// Per-channel `Var(x) = α·z + β` parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonGaussianParams {
    pub alpha: [f64; CHANNELS],
    pub beta: [f64; CHANNELS],
}

impl PoissonGaussianParams {
    pub fn uniform(alpha: f64, beta: f64) -> Self {
        Self {
            alpha: [alpha; CHANNELS],
            beta: [beta; CHANNELS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..CHANNELS {
            let (a, b) = (self.alpha[c], self.beta[c]);
            if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0) {
                return Err(Error::invalid(format!(
                    "noise parameters must be finite and nonnegative, got alpha={a} beta={b} in channel {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Count-weighted least-squares line through populated bins, per channel.
/// Slope and intercept are clamped at zero.
pub fn fit_poisson_gaussian(profile: &NoiseProfile) -> Result<PoissonGaussianParams> {
    profile.validate()?;
    let mut alpha = [0.0; CHANNELS];
    let mut beta = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        let pts: Vec<(f64, f64, f64)> = (0..profile.bins())
            .filter(|&b| profile.is_populated(c, b))
            .map(|b| {
                (
                    profile.config.bin_center(b),
                    profile.mean_variance[c][b],
                    profile.counts[c][b] as f64,
                )
            })
            .collect();
        if pts.len() < 2 {
            return Err(Error::numerical(format!(
                "channel {c} has {} populated bins, need at least 2",
                pts.len()
            )));
        }
        let wsum: f64 = pts.iter().map(|p| p.2).sum();
        let xbar = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / wsum;
        let ybar = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / wsum;
        let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xbar).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xbar) * (p.1 - ybar)).sum();
        if sxx <= 0.0 {
            return Err(Error::numerical(format!(
                "channel {c}: populated bins share one intensity"
            )));
        }
        let slope = sxy / sxx;
        let intercept = ybar - slope * xbar;
        alpha[c] = slope.max(0.0);
        beta[c] = intercept.max(0.0);
    }
    Ok(PoissonGaussianParams { alpha, beta })
}

/// On-disk profile layout.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    camera_id: String,
    channels: usize,
    bins: usize,
    bin_range: [f64; 2],
    patch_size: usize,
    gradient_percentile: f64,
    min_bin_count: u64,
    mean_variance: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
}

pub fn profile_to_json(profile: &NoiseProfile) -> String {
    let file = ProfileFile {
        camera_id: profile.camera_id.clone(),
        channels: CHANNELS,
        bins: profile.config.num_bins,
        bin_range: BIN_RANGE,
        patch_size: profile.config.patch_size,
        gradient_percentile: profile.config.gradient_percentile,
        min_bin_count: profile.config.min_bin_count,
        mean_variance: profile.mean_variance.clone(),
        counts: profile.counts.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("profile serializes");
    s.push('\n');
    s
}

pub fn profile_from_json(text: &str) -> Result<NoiseProfile> {
    let file: ProfileFile =
        serde_json::from_str(text).map_err(|e| Error::format(format!("noise profile: {e}")))?;
    if file.channels != CHANNELS {
        return Err(Error::format(format!(
            "noise profile must have {CHANNELS} channels, got {}",
            file.channels
        )));
    }
    if file.bin_range != BIN_RANGE {
        return Err(Error::format("noise profile bin_range must be [0, 1]"));
    }
    if file.bins != file.mean_variance.first().map_or(0, Vec::len) {
        return Err(Error::format("bins does not match mean_variance width"));
    }
    let profile = NoiseProfile {
        camera_id: file.camera_id,
        config: NoiseProfileConfig {
            patch_size: file.patch_size,
            gradient_percentile: file.gradient_percentile,
            num_bins: file.bins,
            min_bin_count: file.min_bin_count,
        },
        mean_variance: file.mean_variance,
        counts: file.counts,
    };
    profile
        .validate()
        .map_err(|e| Error::format(e.to_string()))?;
    Ok(profile)
}

pub fn save_profile(profile: &NoiseProfile, path: &Path) -> Result<()> {
    fs::write(path, profile_to_json(profile))?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<NoiseProfile> {
    profile_from_json(&fs::read_to_string(path)?)
}
