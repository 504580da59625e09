//! `raw2raw`: file-based front end for the raw2raw toolkit.

mod commands;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use raw2raw_core::Error;

#[derive(Parser, Debug)]
#[command(name = "raw2raw", version, about = "Cross-camera RAW toolkit")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; 0 picks the number of cores.
    #[arg(long, global = true, env = "RAW2RAW_THREADS", default_value_t = 0)]
    threads: usize,

    /// Write the command result here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a PGM mosaic and store it as a packed frame.
    Ingest(commands::IngestArgs),
    /// Build a noise profile from one or more frames.
    Profile(commands::ProfileArgs),
    /// Masked distance between two noise profiles.
    NoiseDistance(commands::NoiseDistanceArgs),
    /// Fit Poisson-Gaussian parameters to a noise profile.
    FitPg(commands::FitPgArgs),
    /// Add synthetic Poisson-Gaussian noise to a frame.
    SynthNoise(commands::SynthNoiseArgs),
    /// Fit a global calibration map between two aligned frames.
    Calibrate(commands::CalibrateArgs),
    /// Apply a calibration map to a frame.
    Apply(commands::ApplyArgs),
    /// Compare a prediction against a reference frame.
    Eval(commands::EvalArgs),
    /// Build aligned patch pairs from two frames.
    Pair(commands::PairArgs),
    /// Pick the candidate closest in channel means to the query.
    SelectRef(commands::SelectRefArgs),
}

/// What a command reports back.
pub struct Outcome {
    pub json: serde_json::Value,
    pub text: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format(_) | Error::Io(_) => 2,
        Error::Metadata(_) | Error::InvalidInput(_) => 3,
        Error::EmptyResult(_) => 4,
        Error::Numerical(_) => 5,
    }
}

fn emit(cli: &Cli, body: &str) -> std::io::Result<()> {
    match &cli.output {
        Some(path) => std::fs::write(path, body),
        None => std::io::stdout().write_all(body.as_bytes()),
    }
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Profile(a) => commands::profile(a),
        Command::NoiseDistance(a) => commands::noise_distance(a),
        Command::FitPg(a) => commands::fit_pg(a),
        Command::SynthNoise(a) => commands::synth_noise(a, cli.seed),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Apply(a) => commands::apply(a),
        Command::Eval(a) => commands::eval(a),
        Command::Pair(a) => commands::pair(a, cli.seed),
        Command::SelectRef(a) => commands::select_ref(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("raw2raw: cannot start thread pool: {e}");
        return ExitCode::from(3);
    }
    match run(&cli) {
        Ok(out) => {
            let body = match cli.format {
                Format::Json => {
                    let mut s = serde_json::to_string_pretty(&out.json).expect("result serializes");
                    s.push('\n');
                    s
                }
                Format::Text => out.text,
            };
            if let Err(e) = emit(&cli, &body) {
                eprintln!("raw2raw: {e}");
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            match cli.format {
                Format::Json => {
                    let v = serde_json::json!({
                        "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": code }
                    });
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&v).expect("error serializes")
                    );
                }
                Format::Text => eprintln!("raw2raw: {e}"),
            }
            ExitCode::from(code)
        }
    }
}
