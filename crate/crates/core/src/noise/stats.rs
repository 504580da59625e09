use crate::error::{Error, Result};

/// Scale turning a median absolute deviation into a Gaussian-consistent
/// standard deviation.
pub const MAD_TO_SIGMA: f64 = 1.4826;

/// Mean and robust variance of one patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchStats {
    pub mean: f64,
    /// `(1.4826 · MAD)²`
    pub variance: f64,
}

/// Median of a scratch buffer; reorders it.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    values.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let mut buf = values.to_vec();
    let med = median_in_place(&mut buf);
    for v in &mut buf {
        *v = (*v - med).abs();
    }
    median_in_place(&mut buf)
}

/// Arithmetic mean plus MAD-based variance of a patch.
pub fn patch_stats(patch: &[f32]) -> Result<PatchStats> {
    if patch.is_empty() {
        return Err(Error::invalid("empty patch"));
    }
    let values: Vec<f64> = patch.iter().map(|&v| v as f64).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sigma = MAD_TO_SIGMA * mad(&values);
    Ok(PatchStats {
        mean,
        variance: sigma * sigma,
    })
}
