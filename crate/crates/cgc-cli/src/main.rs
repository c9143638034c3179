//! `cgc` — the capability-guided compression pipeline.
//!
//! Every experiment is a chain of subcommands over documented artifacts in
//! a working directory:
//!
//! ```text
//! cgc --config configs/desk.toml gen-corpus
//! cgc --config configs/desk.toml train-lm
//! cgc --config configs/desk.toml dump-acts
//! cgc --config configs/desk.toml train-saes
//! cgc --config configs/desk.toml density
//! cgc --config configs/desk.toml wanda
//! cgc --config configs/desk.toml correlate
//! cgc --config configs/desk.toml allocate --method cgc-l   # x4 methods
//! cgc --config configs/desk.toml prune --method cgc-l      # x4 methods
//! cgc --config configs/desk.toml report
//! ```
//!
//! Exit codes: 0 success, 1 usage error, 2 missing or stale artifact,
//! 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cgc::alloc::AllocMethod;
use cgc::stats::PValueMethod;

mod commands;
mod config;
mod corpus;
mod stage;

use config::PipelineConfig;
use stage::Ctx;

/// An error carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, bad values: exit 1.
    Usage(String),
    /// A required artifact is missing or was built from different inputs:
    /// exit 2.
    Artifact(String),
    /// The computation itself failed: exit 3.
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Artifact(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Artifact(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<cgc::Error> for CliError {
    fn from(e: cgc::Error) -> Self {
        use cgc::Error as E;
        match &e {
            E::Stale(_) | E::Format(_) | E::MissingComponent(_, _) => {
                CliError::Artifact(e.to_string())
            }
            E::InvalidConfig(_)
            | E::InvalidRatio { .. }
            | E::TooFewCategories { .. }
            | E::PermutationTooLarge { .. }
            | E::CorpusTooShort { .. }
            | E::TokenOutOfRange { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cgc",
    version,
    about = "Capability-guided compression laboratory",
    long_about = "Trains a small byte-level transformer, maps per-head capability density \
                  through sparse autoencoders, allocates differential pruning budgets, and \
                  validates the allocation principle on synthetic components."
)]
struct Cli {
    /// TOML pipeline configuration (see configs/desk.toml).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the configured working directory.
    #[arg(long, global = true, value_name = "DIR")]
    workdir: Option<PathBuf>,
    /// Re-run the stage even when its outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Uniform,
    CgcL,
    CgcF,
    Inverted,
}

impl From<MethodArg> for AllocMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Uniform => AllocMethod::Uniform,
            MethodArg::CgcL => AllocMethod::CgcL,
            MethodArg::CgcF => AllocMethod::CgcF,
            MethodArg::Inverted => AllocMethod::Inverted,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
enum PMethodArg {
    /// t-distribution approximation (any n).
    #[default]
    T,
    /// Exact permutation enumeration (small n only).
    Permutation,
}

impl From<PMethodArg> for PValueMethod {
    fn from(m: PMethodArg) -> Self {
        match m {
            PMethodArg::T => PValueMethod::TApprox,
            PMethodArg::Permutation => PValueMethod::Permutation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training corpus.
    GenCorpus {
        /// Override the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the minimum corpus size in bytes.
        #[arg(long)]
        bytes: Option<usize>,
    },
    /// Train the byte-level transformer on the corpus.
    TrainLm {
        /// Override the batch-order seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of optimization steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Measure perplexity of a checkpoint on the held-out region.
    EvalPpl {
        /// Checkpoint to evaluate (default: the dense model).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Label for the output document (derived from the checkpoint
        /// name when possible).
        #[arg(long)]
        tag: Option<String>,
    },
    /// Capture per-head activations on calibration sequences.
    DumpActs,
    /// Train one sparse autoencoder per attention head.
    TrainSaes {
        /// Override the autoencoder base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the capability-density map from the autoencoder features.
    Density,
    /// Compute magnitude-times-activation importance scores per head.
    Wanda,
    /// Measure each head's perplexity impact by ablating it.
    AblateScan,
    /// Correlate capability density with the importance signals.
    Correlate {
        /// How p-values are computed.
        #[arg(long, value_enum, default_value_t)]
        p_method: PMethodArg,
    },
    /// Turn the density map into per-head retention ratios.
    Allocate {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Override the global retention target.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Apply an allocation to the dense model.
    Prune {
        #[arg(long, value_enum)]
        method: MethodArg,
    },
    /// Run the synthetic-component destruction experiments.
    SimulateTheorems {
        /// Override the trial count of both experiments.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Summarize all methods in one table plus a run manifest.
    Report,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; parse failures are
            // usage errors (exit 1).
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.ok_or_else(|| {
        CliError::Usage("a config file is required: cgc --config <FILE> <COMMAND>".into())
    })?;
    let (cfg, base) = PipelineConfig::load(&config_path)?;
    let workdir = cli.workdir.unwrap_or_else(|| cfg.paths.workdir_path(&base));
    let corpus_path = cfg.paths.corpus_path(&base);
    let ctx = Ctx {
        workdir,
        corpus_path,
        force: cli.force,
    };
    match cli.command {
        Command::GenCorpus { seed, bytes } => commands::gen_corpus(&ctx, &cfg, seed, bytes),
        Command::TrainLm { seed, steps } => commands::train_lm(&ctx, &cfg, seed, steps),
        Command::EvalPpl { checkpoint, tag } => commands::eval_ppl(&ctx, &cfg, checkpoint, tag),
        Command::DumpActs => commands::dump_acts(&ctx, &cfg),
        Command::TrainSaes { seed } => commands::train_saes(&ctx, &cfg, seed),
        Command::Density => commands::density(&ctx, &cfg),
        Command::Wanda => commands::wanda(&ctx, &cfg),
        Command::AblateScan => commands::ablate_scan(&ctx, &cfg),
        Command::Correlate { p_method } => commands::correlate(&ctx, &cfg, p_method.into()),
        Command::Allocate { method, rho } => commands::allocate(&ctx, &cfg, method.into(), rho),
        Command::Prune { method } => commands::prune(&ctx, &cfg, method.into()),
        Command::SimulateTheorems { trials } => commands::simulate_theorems(&ctx, &cfg, trials),
        Command::Report => commands::report(&ctx, &cfg),
    }
}
