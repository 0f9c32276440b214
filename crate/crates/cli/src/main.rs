//! `sedfuse` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage or input validation errors, 2 when
//! an internal invariant is violated.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "sedfuse", version, about = "Sound event detection scoring, fusion and post-processing")]
pub struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score frame probabilities with PSDS under both parameter profiles.
    Evaluate(EvaluateArgs),
    /// Fuse several models' frame probabilities with per-class weights.
    Fuse(FuseArgs),
    /// Search per-class smoothing windows on a development set.
    TuneWindows(TuneArgs),
    /// Matching and set-prediction losses of event-wise predictions.
    MatchLoss(MatchLossArgs),
    /// Burn-in plus teacher-guided training on synthetic data.
    SimulateSsl(SimulateArgs),
    /// Re-run a previous invocation from its manifest and verify outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct DevSet {
    /// Ground-truth TSV (`filename, onset, offset, event_label`).
    #[arg(long)]
    pub gt: PathBuf,
    /// Durations TSV (`filename, duration`).
    #[arg(long)]
    pub durations: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub dev: DevSet,
    /// Directory with one frame-score CSV per clip.
    #[arg(long)]
    pub scores: PathBuf,
    /// Frame hop in seconds; overrides `hop_s` from the config.
    #[arg(long)]
    pub hop: Option<f64>,
    /// Profile whose operating points go to `--roc-out`.
    #[arg(long, default_value = "psds1")]
    pub profile: String,
    /// Smoothing windows (`class,median_len,mean_len`) applied before scoring.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    /// Output CSV (`class,psds1,psds2`, one row per class plus `overall`).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional dump of the raw operating points of `--profile`.
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Score directory of one model; repeat per model. The directory name is
    /// the model id.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Fixed weights CSV (`model,class,weight`). Without it, weights are
    /// derived from per-class PSDS on `--gt`/`--durations`.
    #[arg(long, conflicts_with_all = ["gt", "durations"])]
    pub weights: Option<PathBuf>,
    #[arg(long, requires = "durations")]
    pub gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    pub durations: Option<PathBuf>,
    #[arg(long)]
    pub hop: Option<f64>,
    /// Profile used to derive the weights.
    #[arg(long, default_value = "psds1")]
    pub profile: String,
    /// Smoothing windows applied to the fused scores.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    /// Output directory for the fused score CSVs.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the weights used.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub dev: DevSet,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub hop: Option<f64>,
    #[arg(long, default_value = "psds1")]
    pub profile: String,
    /// Largest median window tried; overrides `window.search_max`.
    #[arg(long)]
    pub search_max: Option<usize>,
    /// Also search the mean window after fixing the median.
    #[arg(long)]
    pub tune_mean: bool,
    /// Output CSV (`class,median_len,mean_len`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchLossArgs {
    #[command(flatten)]
    pub dev: DevSet,
    /// Predictions TSV (`filename, center, length, <class>..., no_event`).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Clip-level tag probabilities (`filename, <class>...`). Without it the
    /// per-class maximum over a clip's predictions is used.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Output CSV with one row per clip plus a `mean` row.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Teacher-guided epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub burn_in_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub ema_gamma: Option<f64>,
    #[arg(long)]
    pub mixup_beta: Option<f64>,
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    #[arg(long)]
    pub focal_alpha: Option<f64>,
    #[arg(long)]
    pub no_mixup: bool,
    #[arg(long)]
    pub no_focal: bool,
    #[arg(long)]
    pub no_asym_aug: bool,
    /// Keep the teacher frozen at the burn-in model.
    #[arg(long)]
    pub no_ema: bool,
    /// Per-epoch CSV of losses and held-out frame F1.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub path: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let internal = e
                .chain()
                .any(|c| c.downcast_ref::<sedfuse::Error>().is_some_and(sedfuse::Error::is_internal));
            ExitCode::from(if internal { 2 } else { 1 })
        }
    }
}
