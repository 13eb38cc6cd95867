//! Experiment front end: scenario preparation, training, random search,
//! reporting, and synthetic corpus generation.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training failure: {0}")]
    Training(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "mtseq",
    version,
    about = "Multi-task BiLSTM-CRF sequence labeling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build sparsity-scenario manifests for every configured dataset.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Scenario seed; defaults to the config's scenario_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One training run with explicit hyperparameters.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// stl | mtl | union
        #[arg(long)]
        mode: String,
        /// Main-task dataset id.
        #[arg(long)]
        main: String,
        /// Sparsity scenario: 1K | 6K | 12K | 21K.
        #[arg(long, default_value = "21K")]
        k: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Hidden layout, e.g. 100 or 100x100.
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        input_dropout: Option<f64>,
        #[arg(long)]
        recurrent_dropout: Option<f64>,
        /// Embedding id; defaults to the first configured embedding.
        #[arg(long)]
        embedding: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random hyperparameter search; appends to results.csv (resumable).
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        main: String,
        #[arg(long, default_value = "21K")]
        k: String,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        /// Parallel training workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score grid with significance stars plus normalized delta curves.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus and matching embeddings.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "synth")]
        task_id: String,
        /// Comma-separated component type names.
        #[arg(long, default_value = "alpha,beta")]
        types: String,
        #[arg(long, default_value_t = 40)]
        docs: usize,
        #[arg(long, default_value_t = 5)]
        sentences: usize,
        #[arg(long, default_value_t = 12)]
        tokens: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Shared across tasks to share cue/filler lexicons and embeddings.
        #[arg(long, default_value_t = 7)]
        lexicon_seed: u64,
        #[arg(long, default_value_t = 16)]
        embed_dim: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare { config, seed, out } => commands::cmd_prepare(&config, seed, out),
        Command::Train {
            config,
            mode,
            main,
            k,
            seed,
            layout,
            input_dropout,
            recurrent_dropout,
            embedding,
            out,
        } => commands::cmd_train(
            &config,
            &mode,
            &main,
            &k,
            seed,
            layout,
            input_dropout,
            recurrent_dropout,
            embedding,
            out,
        ),
        Command::Search {
            config,
            mode,
            main,
            k,
            runs,
            jobs,
            seed,
            out,
        } => commands::cmd_search(&config, &mode, &main, &k, runs, jobs, seed, out),
        Command::Report { config, out } => commands::cmd_report(&config, out),
        Command::GenSynth {
            out,
            task_id,
            types,
            docs,
            sentences,
            tokens,
            seed,
            lexicon_seed,
            embed_dim,
        } => commands::cmd_gen_synth(
            &out,
            &task_id,
            &types,
            docs,
            sentences,
            tokens,
            seed,
            lexicon_seed,
            embed_dim,
        ),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
