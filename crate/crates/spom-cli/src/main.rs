//! Command-line interface for the success-prediction pipeline.
//!
//! Every command writes only under `--out`, reads its inputs read-only, and
//! records the digest of the effective configuration into its outputs.
//! Exit codes: 0 success, 1 runtime failure (structured error on stderr),
//! 2 usage error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "spom",
    about = "Success prediction for open-vocabulary manipulation over precomputed embeddings",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics of a manifest.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Replace instructions of flagged mislabeled negatives.
    Cleanse {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Deterministic train/val/test split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated sizes, e.g. 11915,1000,1000.
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep the positive/negative ratio inside each part.
        #[arg(long)]
        stratified: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset (manifest + feature store + registry).
    Synth {
        #[arg(long, default_value_t = 2500)]
        episodes: usize,
        #[arg(long, default_value_t = 0.5)]
        failure_rate: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// balanced | scene | aligned | narrative
        #[arg(long, default_value = "balanced")]
        routing: String,
        /// Also generate this many video episodes.
        #[arg(long, default_value_t = 0)]
        videos: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// Frame index where generated videos switch to the post state.
        #[arg(long)]
        change_at: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.lrck, run.json, config.json.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// registry.json describing the feature store; defaults to
        /// <features>/../registry.json.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Named profile: desk or paper.
        #[arg(long, default_value = "desk")]
        profile: String,
        /// JSON config file; explicit flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// cross | self
        #[arg(long)]
        mode: Option<String>,
        /// Comma-separated groups, e.g. SR,AR,NR.
        #[arg(long)]
        groups: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Evaluate a checkpoint and print the confusion matrix.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// config.json written next to the checkpoint by `train`.
        #[arg(long)]
        run_config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Split file; evaluates its test ids. Without it, all episodes.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Report and skip episodes with missing features.
        #[arg(long)]
        skip_missing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train/evaluate every ablation condition and tabulate accuracies.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify video episodes frame pair by frame pair.
    Video {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        run_config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Episode id; defaults to every episode with frames.
        #[arg(long)]
        episode: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full decoder gradient.
    Gradcheck {
        /// Model width and per-source dim of the toy problem.
        #[arg(long, default_value_t = 4)]
        dims: usize,
        #[arg(long, default_value_t = 4)]
        tokens: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Print the trainable-parameter breakdown for a configuration.
    Params {
        #[arg(long, default_value = "desk")]
        profile: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats { manifest, json } => commands::stats(&manifest, json),
        Command::Cleanse { manifest, out, seed } => commands::cleanse(&manifest, &out, seed),
        Command::Split {
            manifest,
            sizes,
            seed,
            stratified,
            out,
        } => commands::split(&manifest, &sizes, seed, stratified, &out),
        Command::Synth {
            episodes,
            failure_rate,
            seed,
            routing,
            videos,
            frames,
            change_at,
            out,
        } => commands::synth(episodes, failure_rate, seed, &routing, videos, frames, change_at, &out),
        Command::Train {
            manifest,
            features,
            registry,
            split,
            out,
            profile,
            config,
            seed,
            mode,
            groups,
            epochs,
            lr,
            batch_size,
            threshold,
        } => commands::train(commands::TrainArgs {
            manifest,
            features,
            registry,
            split,
            out,
            profile,
            config,
            seed,
            mode,
            groups,
            epochs,
            lr,
            batch_size,
            threshold,
        }),
        Command::Eval {
            checkpoint,
            run_config,
            manifest,
            features,
            split,
            threshold,
            skip_missing,
            out,
        } => commands::eval(commands::EvalArgs {
            checkpoint,
            run_config,
            manifest,
            features,
            split,
            threshold,
            skip_missing,
            out,
        }),
        Command::Ablate {
            manifest,
            features,
            registry,
            split,
            out,
            profile,
            config,
            seed,
        } => commands::ablate(commands::AblateArgs {
            manifest,
            features,
            registry,
            split,
            out,
            profile,
            config,
            seed,
        }),
        Command::Video {
            checkpoint,
            run_config,
            manifest,
            features,
            episode,
            out,
        } => commands::video(
            &checkpoint,
            run_config.as_deref(),
            &manifest,
            &features,
            episode.as_deref(),
            out.as_deref(),
        ),
        Command::Gradcheck {
            dims,
            tokens,
            seeds,
            step,
        } => return commands::gradcheck(dims, tokens, seeds, step),
        Command::Params {
            profile,
            config,
            registry,
        } => commands::params(&profile, config.as_deref(), registry.as_deref()),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = serde_json::json!({ "error": e.to_string() });
            eprintln!("{detail}");
            ExitCode::from(1)
        }
    }
}
