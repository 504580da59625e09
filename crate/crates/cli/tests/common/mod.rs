#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raw2raw_core::raw::{self, PgmImage, Sidecar};
use raw2raw_core::{CameraMeta, Plane, RawFrame};

pub fn raw2raw(args: &[&str]) -> Output {
    raw2raw_env(args, &[])
}

pub fn raw2raw_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_raw2raw"));
    cmd.args(args).env_remove("RAW2RAW_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Overlapping random rectangles scaled per channel.
pub fn textured_frame(w: usize, h: usize, seed: u64) -> RawFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = Plane::filled(w, h, 0.5);
    for _ in 0..(w * h / 400).max(8) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (bw, bh) = (rng.random_range(4..24), rng.random_range(4..24));
        let v = rng.random_range(0.0..1.0f32);
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                base.set(x, y, v);
            }
        }
    }
    let gains = [0.6f32, 1.0, 1.0, 0.8];
    RawFrame::new(
        std::array::from_fn(|c| base.map(|v| v * gains[c])),
        CameraMeta::normalized("cam"),
    )
    .unwrap()
}

pub fn random_frame(w: usize, h: usize, seed: u64, id: &str) -> RawFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes =
        std::array::from_fn(|_| Plane::from_fn(w, h, |_, _| rng.random_range(0.0..1.0f32)));
    RawFrame::new(planes, CameraMeta::normalized(id)).unwrap()
}

/// Horizontal ramp that is constant within each `patch`-wide column band.
pub fn stepped_ramp(size: usize, patch: usize, lo: f32, hi: f32) -> RawFrame {
    let steps = size / patch;
    let plane = Plane::from_fn(size, size, |x, _| {
        let s = (x / patch) as f32 / (steps - 1) as f32;
        lo + (hi - lo) * s
    });
    RawFrame::new(
        std::array::from_fn(|_| plane.clone()),
        CameraMeta::normalized("ramp"),
    )
    .unwrap()
}

pub fn write_mosaic(
    dir: &Path,
    name: &str,
    black: u32,
    white: u32,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let (w, h) = (64usize, 48usize);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<u16> = (0..w * h).map(|_| rng.random_range(64..1024)).collect();
    let pgm = dir.join(format!("{name}.pgm"));
    std::fs::write(
        &pgm,
        raw::write_pgm(&PgmImage {
            width: w,
            height: h,
            maxval: 1023,
            data,
        }),
    )
    .unwrap();
    let meta = dir.join(format!("{name}_meta.json"));
    let sidecar = serde_json::json!({
        "camera_id": "test-cam",
        "black_level": [black, black, black, black],
        "white_level": white,
        "orientation": "Normal",
        "iso": 100,
        "cfa_pattern": "RGGB",
    });
    std::fs::write(&meta, sidecar.to_string()).unwrap();
    // Make sure the fixture matches the library's schema.
    let _: Sidecar = serde_json::from_str(&sidecar.to_string()).unwrap();
    (pgm, meta)
}
