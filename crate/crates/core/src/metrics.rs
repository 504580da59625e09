//! Full-reference quality metrics on packed 4-plane frames.
//!
//! All metrics operate on the normalized planes directly. SSIM and the
//! symmetric KL divergence are computed per channel and averaged; MAE and
//! PSNR pool every sample of every channel.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::raw::{RawFrame, CHANNELS};

/// Windowed SSIM settings. `c1 = (k1·L)²`, `c2 = (k2·L)²`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Histogram settings for the symmetric KL divergence.
#[derive(Clone, Debug, PartialEq)]
pub struct KlConfig {
    pub bins: usize,
    pub epsilon: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self {
            bins: 256,
            epsilon: 1e-10,
        }
    }
}

fn check_shapes(pred: &RawFrame, reference: &RawFrame) -> Result<()> {
    pred.ensure_same_shape(reference)?;
    if pred.plane(0).is_empty() {
        return Err(Error::invalid("empty frames"));
    }
    Ok(())
}

fn plane_abs_sum(a: &Plane, b: &Plane) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum()
}

fn plane_sq_sum(a: &Plane, b: &Plane) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum()
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Mean absolute error over all samples.
pub fn mae(pred: &RawFrame, reference: &RawFrame) -> Result<f64> {
    check_shapes(pred, reference)?;
    let n = (pred.plane(0).len() * CHANNELS) as f64;
    let total: f64 = (0..CHANNELS)
        .map(|c| plane_abs_sum(pred.plane(c), reference.plane(c)))
        .sum();
    Ok(total / n)
}

/// Peak signal-to-noise ratio in dB for unit peak; `+∞` on an exact match.
pub fn psnr(pred: &RawFrame, reference: &RawFrame) -> Result<f64> {
    check_shapes(pred, reference)?;
    let n = (pred.plane(0).len() * CHANNELS) as f64;
    let total: f64 = (0..CHANNELS)
        .map(|c| plane_sq_sum(pred.plane(c), reference.plane(c)))
        .sum();
    Ok(psnr_from_mse(total / n))
}

/// Separable filter over the valid region (no padding).
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(j, kj)| kj * rows[(y + j) * ow + x])
                .sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of one channel pair.
pub fn ssim_plane(pred: &Plane, reference: &Plane, cfg: &SsimConfig) -> Result<f64> {
    let (w, h) = pred.dims();
    if reference.dims() != (w, h) {
        return Err(Error::invalid("plane shapes differ"));
    }
    if w < cfg.window || h < cfg.window {
        return Err(Error::invalid(format!(
            "{w}x{h} plane is smaller than the {0}x{0} SSIM window",
            cfg.window
        )));
    }
    let k = cfg.kernel();
    let x: Vec<f64> = pred.as_slice().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = reference.as_slice().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let (mu_x, _, _) = filter_valid(&x, w, h, &k);
    let (mu_y, _, _) = filter_valid(&y, w, h, &k);
    let (e_xx, _, _) = filter_valid(&xx, w, h, &k);
    let (e_yy, _, _) = filter_valid(&yy, w, h, &k);
    let (e_xy, _, _) = filter_valid(&xy, w, h, &k);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total +=
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

fn per_channel<F>(f: F) -> Result<[f64; CHANNELS]>
where
    F: Fn(usize) -> Result<f64>,
{
    let mut out = [0.0; CHANNELS];
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = f(c)?;
    }
    Ok(out)
}

fn channel_mean(values: &[f64; CHANNELS]) -> f64 {
    values.iter().sum::<f64>() / CHANNELS as f64
}

/// Channel-averaged mean SSIM.
pub fn ssim(pred: &RawFrame, reference: &RawFrame, cfg: &SsimConfig) -> Result<f64> {
    check_shapes(pred, reference)?;
    let v = per_channel(|c| ssim_plane(pred.plane(c), reference.plane(c), cfg))?;
    Ok(channel_mean(&v))
}

/// ε-regularized intensity distribution of one plane. Bin index is
/// `floor(v·bins)` with `v = 1` in the last bin.
pub fn intensity_distribution(plane: &Plane, cfg: &KlConfig) -> Vec<f64> {
    let mut counts = vec![0u64; cfg.bins];
    for &v in plane.as_slice() {
        let b = ((v as f64 * cfg.bins as f64).floor().max(0.0) as usize).min(cfg.bins - 1);
        counts[b] += 1;
    }
    let n = plane.len() as f64;
    let norm = 1.0 + cfg.bins as f64 * cfg.epsilon;
    counts
        .iter()
        .map(|&k| (k as f64 / n + cfg.epsilon) / norm)
        .collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// Symmetric KL divergence of one channel pair.
pub fn sym_kl_plane(pred: &Plane, reference: &Plane, cfg: &KlConfig) -> Result<f64> {
    if pred.dims() != reference.dims() {
        return Err(Error::invalid("plane shapes differ"));
    }
    if cfg.bins < 2 || !(cfg.epsilon > 0.0) {
        return Err(Error::invalid(
            "KL needs at least 2 bins and a positive epsilon",
        ));
    }
    let p = intensity_distribution(pred, cfg);
    let q = intensity_distribution(reference, cfg);
    Ok(0.5 * (kl(&p, &q) + kl(&q, &p)))
}

/// Channel-averaged symmetric histogram KL divergence.
pub fn sym_kl(pred: &RawFrame, reference: &RawFrame, cfg: &KlConfig) -> Result<f64> {
    check_shapes(pred, reference)?;
    let v = per_channel(|c| sym_kl_plane(pred.plane(c), reference.plane(c), cfg))?;
    Ok(channel_mean(&v))
}

/// Per-channel values behind an [`EvalReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerChannel {
    pub mae: [f64; CHANNELS],
    #[serde(with = "inf_array")]
    pub psnr_db: [f64; CHANNELS],
    pub ssim: [f64; CHANNELS],
    pub kl_sym: [f64; CHANNELS],
}

/// All four metrics for one prediction/reference pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub mae: f64,
    #[serde(with = "inf_float")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub kl_sym: f64,
    pub per_channel: PerChannel,
}

pub fn evaluate_pair(
    pred: &RawFrame,
    reference: &RawFrame,
    ssim_cfg: &SsimConfig,
    kl_cfg: &KlConfig,
) -> Result<EvalReport> {
    check_shapes(pred, reference)?;
    let n = pred.plane(0).len() as f64;
    let abs = per_channel(|c| Ok(plane_abs_sum(pred.plane(c), reference.plane(c))))?;
    let sq = per_channel(|c| Ok(plane_sq_sum(pred.plane(c), reference.plane(c))))?;
    let ssim_c = per_channel(|c| ssim_plane(pred.plane(c), reference.plane(c), ssim_cfg))?;
    let kl_c = per_channel(|c| sym_kl_plane(pred.plane(c), reference.plane(c), kl_cfg))?;
    let total = n * CHANNELS as f64;
    Ok(EvalReport {
        mae: abs.iter().sum::<f64>() / total,
        psnr_db: psnr_from_mse(sq.iter().sum::<f64>() / total),
        ssim: channel_mean(&ssim_c),
        kl_sym: channel_mean(&kl_c),
        per_channel: PerChannel {
            mae: abs.map(|s| s / n),
            psnr_db: sq.map(|s| psnr_from_mse(s / n)),
            ssim: ssim_c,
            kl_sym: kl_c,
        },
    })
}

pub fn report_to_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_from_json(text: &str) -> Result<EvalReport> {
    serde_json::from_str(text).map_err(|e| Error::format(format!("eval report: {e}")))
}

/// Finite values as JSON numbers, `+∞` as the string `"inf"`.
mod inf_float {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Num(f64),
        Str(String),
    }

    pub(super) fn to_repr(v: f64) -> Repr {
        if v == f64::INFINITY {
            Repr::Str("inf".into())
        } else {
            Repr::Num(v)
        }
    }

    pub(super) fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(E::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

mod inf_array {
    use super::inf_float::{from_repr, to_repr, Repr};
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64; CHANNELS], s: S) -> Result<S::Ok, S::Error> {
        v.map(to_repr).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; CHANNELS], D::Error> {
        let reprs = <[Repr; CHANNELS]>::deserialize(d)?;
        let mut out = [0.0; CHANNELS];
        for (slot, r) in out.iter_mut().zip(reprs) {
            *slot = from_repr(r)?;
        }
        Ok(out)
    }
}
