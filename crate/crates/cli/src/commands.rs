use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::json;

use raw2raw_core::calibration::{self, CalibrationKind};
use raw2raw_core::metrics::{self, KlConfig, SsimConfig};
use raw2raw_core::noise::{
    self, DistanceNormalization, NoiseAccumulator, NoiseProfileConfig, PoissonGaussianParams,
};
use raw2raw_core::pairing::{
    self, CornerNccMatcher, Matcher, PairingConfig, PrecomputedMatches, RansacConfig,
};
use raw2raw_core::raw::{self, CHANNEL_NAMES};
use raw2raw_core::{Error, RawFrame, Result, CHANNELS};

use crate::Outcome;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w = w.parse().map_err(|e| format!("width: {e}"))?;
    let h = h.parse().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Binary PGM (P5) mosaic.
    #[arg(long)]
    mosaic: PathBuf,
    /// Metadata sidecar JSON.
    #[arg(long)]
    meta: PathBuf,
    /// Destination `.rgg4`; its sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Center-crop and area-downsample the planes to WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size)]
    resize: Option<(usize, usize)>,
}

pub fn ingest(a: &IngestArgs) -> Result<Outcome> {
    let mut frame = raw::ingest_pgm(&a.mosaic, &a.meta)?;
    if let Some((w, h)) = a.resize {
        frame = raw::center_crop_resize(&frame, w, h)?;
    }
    raw::write_frame(&frame, &a.out)?;
    let (w, h) = frame.dims();
    Ok(Outcome {
        json: json!({ "out": path_str(&a.out), "width": w, "height": h }),
        text: format!("wrote {} ({w}x{h} per plane)\n", a.out.display()),
    })
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Input frames; their flat patches are pooled before averaging.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    patch_size: usize,
    /// Fraction of lowest-gradient patches kept per channel.
    #[arg(long, default_value_t = 0.2)]
    percentile: f64,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    #[arg(long, default_value_t = 1)]
    min_bin_count: u64,
    /// Defaults to the first frame's camera id.
    #[arg(long)]
    camera_id: Option<String>,
}

pub fn profile(a: &ProfileArgs) -> Result<Outcome> {
    let cfg = NoiseProfileConfig {
        patch_size: a.patch_size,
        gradient_percentile: a.percentile,
        num_bins: a.bins,
        min_bin_count: a.min_bin_count,
    };
    let mut acc: Option<NoiseAccumulator> = None;
    for path in &a.inputs {
        let frame = raw::read_frame(path)?;
        let acc = match &mut acc {
            Some(acc) => acc,
            None => {
                let id = a
                    .camera_id
                    .clone()
                    .unwrap_or_else(|| frame.meta.camera_id.clone());
                acc.insert(NoiseAccumulator::new(id, cfg.clone())?)
            }
        };
        acc.add_frame(&frame)?;
    }
    let profile = acc.expect("at least one input").finish()?;
    noise::save_profile(&profile, &a.out)?;
    let populated: Vec<usize> = (0..CHANNELS)
        .map(|c| {
            (0..profile.bins())
                .filter(|&b| profile.is_populated(c, b))
                .count()
        })
        .collect();
    let patches: Vec<u64> = profile.counts.iter().map(|r| r.iter().sum()).collect();
    Ok(Outcome {
        json: json!({
            "out": path_str(&a.out),
            "frames": a.inputs.len(),
            "populated_bins": populated,
            "patches": patches,
        }),
        text: format!(
            "wrote {} from {} frame(s); populated bins {:?}\n",
            a.out.display(),
            a.inputs.len(),
            populated
        ),
    })
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Normalization {
    BinsTimesChannels,
    ValidBins,
}

#[derive(Args, Debug)]
pub struct NoiseDistanceArgs {
    /// Profile of the generated (fake) noise.
    #[arg(long)]
    fake: PathBuf,
    /// Profile of the real capture.
    #[arg(long)]
    real: PathBuf,
    #[arg(long, value_enum, default_value_t = Normalization::BinsTimesChannels)]
    normalization: Normalization,
}

pub fn noise_distance(a: &NoiseDistanceArgs) -> Result<Outcome> {
    let fake = noise::load_profile(&a.fake)?;
    let real = noise::load_profile(&a.real)?;
    let norm = match a.normalization {
        Normalization::BinsTimesChannels => DistanceNormalization::BinsTimesChannels,
        Normalization::ValidBins => DistanceNormalization::ValidBins,
    };
    let d = noise::noise_distance(&fake, &real, norm)?;
    Ok(Outcome {
        json: json!({ "distance": d }),
        text: format!("{d}\n"),
    })
}

#[derive(Args, Debug)]
pub struct FitPgArgs {
    #[arg(long)]
    profile: PathBuf,
    /// Also write the parameters as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn params_text(p: &PoissonGaussianParams) -> String {
    (0..CHANNELS)
        .map(|c| {
            format!(
                "{} alpha={} beta={}\n",
                CHANNEL_NAMES[c], p.alpha[c], p.beta[c]
            )
        })
        .collect()
}

pub fn fit_pg(a: &FitPgArgs) -> Result<Outcome> {
    let profile = noise::load_profile(&a.profile)?;
    let params = noise::fit_poisson_gaussian(&profile)?;
    let json = serde_json::to_value(&params).expect("params serialize");
    if let Some(out) = &a.out {
        let mut s = serde_json::to_string_pretty(&params).expect("params serialize");
        s.push('\n');
        std::fs::write(out, s)?;
    }
    Ok(Outcome {
        json,
        text: params_text(&params),
    })
}

#[derive(Args, Debug)]
pub struct SynthNoiseArgs {
    /// Clean frame.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Shot-noise gain applied to all channels.
    #[arg(long, conflicts_with = "params")]
    alpha: Option<f64>,
    /// Read-noise variance applied to all channels.
    #[arg(long, conflicts_with = "params")]
    beta: Option<f64>,
    /// Per-channel parameters as written by `fit-pg --out`.
    #[arg(long)]
    params: Option<PathBuf>,
}

pub fn synth_noise(a: &SynthNoiseArgs, seed: u64) -> Result<Outcome> {
    let params = match (&a.params, a.alpha, a.beta) {
        (Some(path), _, _) => {
            serde_json::from_str::<PoissonGaussianParams>(&std::fs::read_to_string(path)?)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        }
        (None, Some(al), Some(be)) => PoissonGaussianParams::uniform(al, be),
        _ => return Err(invalid("give either --params or both --alpha and --beta")),
    };
    let clean = raw::read_frame(&a.input)?;
    let noisy = noise::synthesize_noise(&clean, &params, seed)?;
    raw::write_frame(&noisy, &a.out)?;
    Ok(Outcome {
        json: json!({ "out": path_str(&a.out), "seed": seed, "params": params }),
        text: format!("wrote {} (seed {seed})\n", a.out.display()),
    })
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Linear4,
    Rgb3,
    Quad14,
}

impl From<Kind> for CalibrationKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Linear4 => CalibrationKind::Linear4,
            Kind::Rgb3 => CalibrationKind::Rgb3,
            Kind::Quad14 => CalibrationKind::Quad14,
        }
    }
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Frame from the source camera.
    #[arg(long)]
    src: PathBuf,
    /// Aligned frame from the target camera.
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, value_enum, default_value_t = Kind::Quad14)]
    kind: Kind,
    #[arg(long)]
    out: PathBuf,
}

pub fn calibrate(a: &CalibrateArgs) -> Result<Outcome> {
    let src = raw::read_frame(&a.src)?;
    let tgt = raw::read_frame(&a.tgt)?;
    let map = calibration::fit_calibration_frames(&src, &tgt, a.kind.into())?;
    calibration::save_map(&map, &a.out)?;
    let mapped = calibration::apply_calibration(&map, &src)?;
    let rmse = metrics::psnr(&mapped, &tgt).map(|p| 10f64.powf(-p / 20.0))?;
    Ok(Outcome {
        json: json!({ "out": path_str(&a.out), "kind": map.kind, "rmse": rmse }),
        text: format!("wrote {} (rmse {rmse})\n", a.out.display()),
    })
}

#[derive(Args, Debug)]
pub struct ApplyArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn apply(a: &ApplyArgs) -> Result<Outcome> {
    let map = calibration::load_map(&a.map)?;
    let frame = raw::read_frame(&a.input)?;
    let out = calibration::apply_calibration(&map, &frame)?;
    raw::write_frame(&out, &a.out)?;
    Ok(Outcome {
        json: json!({ "out": path_str(&a.out), "camera_id": out.meta.camera_id }),
        text: format!("wrote {}\n", a.out.display()),
    })
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predicted frame.
    #[arg(long)]
    pred: PathBuf,
    /// Reference frame.
    #[arg(long = "ref")]
    reference: PathBuf,
}

pub fn eval(a: &EvalArgs) -> Result<Outcome> {
    let pred = raw::read_frame(&a.pred)?;
    let reference = raw::read_frame(&a.reference)?;
    let r = metrics::evaluate_pair(
        &pred,
        &reference,
        &SsimConfig::default(),
        &KlConfig::default(),
    )?;
    let json = serde_json::to_value(&r).expect("report serializes");
    let text = format!(
        "mae {}\npsnr_db {}\nssim {}\nkl_sym {}\n",
        r.mae, r.psnr_db, r.ssim, r.kl_sym
    );
    Ok(Outcome { json, text })
}

#[derive(Args, Debug)]
pub struct PairArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Directory for patch files and `manifest.json`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Precomputed matches (`xa ya xb yb score` per line) instead of the
    /// built-in corner matcher.
    #[arg(long)]
    matches: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    crop_size: usize,
    #[arg(long, default_value_t = 128.0)]
    nms_dist: f64,
    #[arg(long, default_value_t = 2.0)]
    threshold: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 12)]
    min_inliers: usize,
}

pub fn pair(a: &PairArgs, seed: u64) -> Result<Outcome> {
    let fa = raw::read_frame(&a.a)?;
    let fb = raw::read_frame(&a.b)?;
    let cfg = PairingConfig {
        crop_size: a.crop_size,
        nms_min_dist: a.nms_dist,
        ransac: RansacConfig {
            threshold_px: a.threshold,
            max_iters: a.max_iters,
            min_inliers: a.min_inliers,
            ..Default::default()
        },
        ..Default::default()
    };
    let matcher: Box<dyn Matcher> = match &a.matches {
        Some(p) => Box::new(PrecomputedMatches::load(p)?),
        None => Box::new(CornerNccMatcher::default()),
    };
    let out = pairing::build_pairs(&fa, &fb, &cfg, matcher.as_ref(), seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (i, p) in out.pairs.iter().enumerate() {
        raw::write_frame(&p.patch_a, &a.out_dir.join(format!("pair_{i:04}_a.rgg4")))?;
        raw::write_frame(&p.patch_b, &a.out_dir.join(format!("pair_{i:04}_b.rgg4")))?;
    }
    pairing::save_manifest(&out.manifest, &a.out_dir.join("manifest.json"))?;
    let m = &out.manifest;
    let text = format!(
        "{} pair(s), {} inlier(s) of {} match(es){}\n",
        m.pairs.len(),
        m.inlier_count,
        m.match_count,
        m.warning
            .as_deref()
            .map(|w| format!("; warning: {w}"))
            .unwrap_or_default()
    );
    Ok(Outcome {
        json: serde_json::to_value(m).expect("manifest serializes"),
        text,
    })
}

#[derive(Args, Debug)]
pub struct SelectRefArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    candidates: Vec<PathBuf>,
}

pub fn select_ref(a: &SelectRefArgs) -> Result<Outcome> {
    let query = raw::read_frame(&a.query)?;
    let cands: Vec<RawFrame> = a
        .candidates
        .iter()
        .map(|p| raw::read_frame(p))
        .collect::<Result<_>>()?;
    let i = raw::select_reference(&query, &cands)?;
    let d = raw::euclidean(
        &raw::channel_mean_vector(&query)?,
        &raw::channel_mean_vector(&cands[i])?,
    );
    Ok(Outcome {
        json: json!({ "index": i, "path": path_str(&a.candidates[i]), "distance": d }),
        text: format!("{}\n", a.candidates[i].display()),
    })
}
