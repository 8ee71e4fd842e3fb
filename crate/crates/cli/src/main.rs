//! `pmiris`: synthetic data, splits, training, prediction, the conventional
//! baseline, evaluation, comparison and overlays from one binary.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmiris::error::ErrorKind;
use pmiris::segnet::Preset;

use config::SynthVariant;

#[derive(Debug, Parser)]
#[command(name = "pmiris", version, about = "Post-mortem iris segmentation toolkit")]
pub struct Cli {
    /// TOML file with optional [model], [train], [baseline], [synth] and [split] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream of the run (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Output file or directory (each command has its own default).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    match s {
        "full" => Ok(Preset::Full),
        "mini" => Ok(Preset::Mini),
        _ => Err(format!("expected full or mini, got {s:?}")),
    }
}

#[derive(Debug, clap::Args)]
pub struct SplitSelect {
    /// Split plan written by `split`.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Zero-based split index within the plan.
    #[arg(long)]
    pub split_index: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with masks, manifest and geometry metadata.
    Synth {
        #[arg(long, default_value_t = 30)]
        n: usize,
        /// Built-in preset, used when the config file has no [synth] table.
        #[arg(long, value_enum)]
        variant: Option<SynthVariant>,
        /// Scale every length (image size, radii) by this factor.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Draw subject-disjoint train/test splits from a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        n_splits: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train the network on the training subjects of one split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        select: SplitSelect,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f32>,
    },
    /// Predict full-resolution masks with a trained checkpoint.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        select: SplitSelect,
    },
    /// Segment with the conventional circle + Viterbi baseline.
    SegmentBaseline {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        select: SplitSelect,
        /// Scale the pixel-valued baseline settings for smaller images.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Score predicted masks against the manifest's ground truth.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[command(flatten)]
        select: SplitSelect,
        /// Method label stored in the report (default: masks directory name).
        #[arg(long)]
        method: Option<String>,
    },
    /// Table of split-wise means, improvements and boxplot statistics.
    Compare {
        /// Report of the reference method (from `eval`).
        #[arg(long, required_unless_present = "table")]
        a: Option<PathBuf>,
        /// Report of the challenger method.
        #[arg(long, required_unless_present = "table")]
        b: Option<PathBuf>,
        /// CSV with header `split,<method a>,<method b>` and one row per split.
        #[arg(long, conflicts_with_all = ["a", "b"])]
        table: Option<PathBuf>,
    },
    /// Tinted overlays of predicted (and true) masks on the images.
    Overlay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[command(flatten)]
        select: SplitSelect,
    },
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<pmiris::Error>() {
            return match e.kind() {
                ErrorKind::Config => (2, "config"),
                ErrorKind::Data => (3, "data"),
                ErrorKind::Numerical => (4, "numerical"),
            };
        }
    }
    (3, "data")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: config: --jobs must be positive");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = exit_code(&err);
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error: {kind}: {msg}");
            ExitCode::from(code)
        }
    }
}
