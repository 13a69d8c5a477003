//! `stsc` command-line pipeline: synthetic data, cleaning, neighbor
//! selection, dataset building, training, evaluation and statistics.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::time::Instant;

use chrono::NaiveDateTime;
use clap::{Args, Parser, Subcommand};
use stsc_core::data::parse_timestamp;
use stsc_core::{Error, Result};

use crate::commands::Ctx;
use crate::config::{Layout, RunConfig};

/// Environment variable naming the output directory when neither `--out`
/// nor `paths.out` is given.
pub const OUT_ENV: &str = "STSC_OUT";
pub const DEFAULT_OUT: &str = "stsc-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_MISSING_FILE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_DATA: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "stsc", version, about = "Multistep traffic-speed forecasting pipeline")]
pub struct Cli {
    /// JSON run configuration; every key is optional and unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `paths.out`; falls back to $STSC_OUT, then ./stsc-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for model initialization and training shuffles (overrides `rng_seed`).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic loop-detector dataset (speeds.csv, sensors.csv).
    Synth,
    /// Fill gaps, drop sparse sensors and replace outliers (cleaned_speeds.csv).
    Clean,
    /// Rank candidate neighbors with TOPSIS (neighbors.csv).
    Neighbors(NeighborArgs),
    /// Build the normalized train/test sample archive (dataset/).
    Dataset,
    /// Pre-train the input auto-encoder DAE_X (dae_x.ckpt).
    PretrainX,
    /// Pre-train the output auto-encoder DAE_Y (dae_y.ckpt).
    PretrainY,
    /// Assemble and train the cross-connected model (cross.ckpt).
    Train,
    /// Print the 12 forecasts following a time for one sensor.
    Predict(PredictArgs),
    /// Score the model and baselines on the test split (metrics.csv, SVG charts).
    Evaluate,
    /// Kruskal-Wallis and Dunn tests on per-sensor MAE (stats.json, mct.csv).
    Stats(StatsArgs),
    /// Run clean through stats in sequence.
    All,
}

#[derive(Debug, Args)]
pub struct NeighborArgs {
    /// Anchor time "YYYY-MM-DD HH:MM" (default: last anchor slot of the last day).
    #[arg(long, value_parser = parse_at)]
    pub at: Option<NaiveDateTime>,
    /// Target sensor (default: every dataset target).
    #[arg(long)]
    pub sensor: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Forecast origin "YYYY-MM-DD HH:MM"; predictions cover the next 60 min.
    #[arg(long, value_parser = parse_at)]
    pub at: NaiveDateTime,
    /// Target sensor id.
    #[arg(long)]
    pub sensor: String,
    /// Print only this horizon in minutes (5, 10, ..., 60).
    #[arg(long)]
    pub horizon: Option<u32>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Test only this horizon in minutes (default: `evaluation.stats_horizons_min`).
    #[arg(long)]
    pub horizon: Option<u32>,
}

fn parse_at(s: &str) -> std::result::Result<NaiveDateTime, String> {
    parse_timestamp(s).ok_or_else(|| format!("expected \"YYYY-MM-DD HH:MM\", got {s:?}"))
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingFile(_) => EXIT_MISSING_FILE,
        Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Divergence { .. } | Error::NonFinite(_) => EXIT_DIVERGENCE,
        Error::Parse { .. }
        | Error::Duplicate { .. }
        | Error::CoordinateRange { .. }
        | Error::NotFound(_)
        | Error::InsufficientHistory(_)
        | Error::EmptyDataset(_)
        | Error::EmptyInput(_)
        | Error::DegenerateRange { .. }
        | Error::Version(_)
        | Error::Truncated(_)
        | Error::ShapeMismatch(_) => EXIT_DATA,
        _ => EXIT_OTHER,
    }
}

/// Loads the configuration and applies flag overrides.
pub fn context(cli: &Cli) -> Result<Ctx> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.rng_seed);
    cfg = cfg.with_seed(seed);
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let layout = Layout::new(out, &cfg.paths);
    Ok(Ctx { cfg, layout })
}

fn step(ctx: &Ctx, name: &str, f: impl FnOnce(&Ctx) -> Result<serde_json::Value>) -> Result<()> {
    let started = Instant::now();
    log::info!("== {name}");
    let details = f(ctx)?;
    ctx.record(name, started, details)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let ctx = context(&cli)?;
    match &cli.command {
        Command::Synth => step(&ctx, "synth", commands::synth),
        Command::Clean => step(&ctx, "clean", commands::clean),
        Command::Neighbors(a) => step(&ctx, "neighbors", |c| commands::neighbors(c, a.at, a.sensor.as_deref())),
        Command::Dataset => step(&ctx, "dataset", commands::dataset),
        Command::PretrainX => step(&ctx, "pretrain-x", commands::pretrain_x),
        Command::PretrainY => step(&ctx, "pretrain-y", commands::pretrain_y),
        Command::Train => step(&ctx, "train", commands::train),
        Command::Predict(a) => step(&ctx, "predict", |c| commands::predict_at(c, a.at, &a.sensor, a.horizon)),
        Command::Evaluate => step(&ctx, "evaluate", commands::evaluate),
        Command::Stats(a) => step(&ctx, "stats", |c| commands::stats(c, a.horizon)),
        Command::All => {
            step(&ctx, "clean", commands::clean)?;
            step(&ctx, "neighbors", |c| commands::neighbors(c, None, None))?;
            step(&ctx, "dataset", commands::dataset)?;
            step(&ctx, "pretrain-x", commands::pretrain_x)?;
            step(&ctx, "pretrain-y", commands::pretrain_y)?;
            step(&ctx, "train", commands::train)?;
            step(&ctx, "evaluate", commands::evaluate)?;
            step(&ctx, "stats", |c| commands::stats(c, None))
        }
    }
}

/// Parses arguments, runs, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
