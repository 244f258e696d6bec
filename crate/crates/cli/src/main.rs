//! `eigencl`: eigenvector-guided contrastive learning for NDRE time series.
//!
//! Exit codes: 0 on success, 1 on numerical failure, 2 on usage, I/O, data
//! or configuration errors.

mod artifacts;
mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eigencl::pipeline::KChoice;

use crate::commands::Ctx;
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "eigencl",
    version,
    about = "Eigenvector-guided contrastive learning for NDRE stress monitoring"
)]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed. Also reseeds the synthetic corpus.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Proceed even when an upstream artifact fails its hash check.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic NDRE corpus.
    Synth {
        /// Number of patches.
        #[arg(long)]
        n: Option<usize>,
    },
    /// RBF kernel spectrum and per-patch stress weights.
    Eigen,
    /// Train the encoder.
    Train,
    /// Embed every patch with the trained encoder.
    Embed,
    /// k-means on the embeddings, with validity indices.
    Cluster {
        /// Cluster count, or `elbow` to pick it from the inertia curve.
        #[arg(long)]
        k: Option<KChoice>,
    },
    /// Map clusters to stress stages; ANOVA, Tukey HSD and ARI.
    Stage,
    /// Early-detection lead times against the NDRE crossing.
    Detect,
    /// k-NN and logistic-regression probes on frozen embeddings.
    Classify,
    /// Apply the frozen model to a shifted-domain corpus.
    Transfer {
        /// Dataset CSV to evaluate instead of the configured source.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Hyperparameter grid search at reduced epochs.
    Gridsearch {
        /// Run the 2x2x2x2 sub-grid instead of the configured grid.
        #[arg(long)]
        small: bool,
    },
    /// PCA projection of the embeddings and a summary of all results.
    Report,
    /// Every step except gridsearch, in order.
    RunAll,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let ctx = Ctx {
        cfg,
        force: cli.force,
    };
    match cli.command {
        Command::Synth { n } => commands::synth(&ctx, n),
        Command::Eigen => commands::eigen(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Embed => commands::embed(&ctx),
        Command::Cluster { k } => commands::cluster(&ctx, k),
        Command::Stage => commands::stage(&ctx),
        Command::Detect => commands::detect(&ctx),
        Command::Classify => commands::classify(&ctx),
        Command::Transfer { dataset } => commands::transfer(&ctx, dataset.as_deref()),
        Command::Gridsearch { small } => commands::gridsearch(&ctx, small),
        Command::Report => commands::report(&ctx),
        Command::RunAll => commands::run_all(&ctx),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .find_map(|e| e.downcast_ref::<eigencl::Error>())
        .is_some_and(eigencl::Error::is_numerical);
    if numerical {
        1
    } else {
        2
    }
}

/// The error chain on one line, skipping causes a parent already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
