//! Command-line surface for training tree samplers, evaluating single-tree
//! and ensemble predictors, counting the search space, and verifying the
//! sampler against exact enumeration on small instances.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use treeflow::LeafParamMode;

use treeflow_cli::commands::{self, EvalArgs, EvalMode, OracleArgs, TestSet};
use treeflow_cli::config::NoiseSpec;
use treeflow_cli::errors;

#[derive(Parser)]
#[command(
    name = "treeflow",
    version,
    about = "Posterior samplers over decision trees for tabular classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write checkpoints, metrics, and reports.
    Train {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured seed list (comma-separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate a checkpoint on the held-out split of its dataset.
    Eval {
        /// The config the checkpoint was trained with (hash-checked).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// single: best sampled tree; ensemble: posterior-weighted average.
        #[arg(long, value_enum, default_value_t = EvalModeArg::Single)]
        mode: EvalModeArg,
        /// Trees to sample at inference time.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Split seed; defaults to the seed recorded in the checkpoint.
        #[arg(long)]
        seed: Option<u64>,
        /// Leaf class probabilities: posterior mean (deterministic) or one
        /// posterior draw per leaf.
        #[arg(long, value_enum, default_value_t = LeafParamsArg::Mean)]
        leaf_params: LeafParamsArg,
        /// Evaluate the in-distribution test set or, with a shift config,
        /// the out-of-distribution one.
        #[arg(long, value_enum, default_value_t = TestSetArg::Id)]
        test_set: TestSetArg,
        /// Output directory; defaults to eval-<mode>/ beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print exact search-space sizes per depth for p binary features.
    CountSpace {
        /// Number of features.
        p: usize,
        /// Maximum depth.
        d: usize,
    },
    /// Train on a small instance, enumerate the space exactly, and compare
    /// the sampler to the exact posterior. Nonzero exit if the divergence
    /// thresholds are exceeded.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
        /// Abort enumeration beyond this many trees.
        #[arg(long, default_value_t = treeflow::oracle::DEFAULT_ENUMERATION_CAP)]
        cap: usize,
        /// Trees sampled for the empirical distribution.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.15)]
        tv_threshold: f64,
        #[arg(long, default_value_t = 0.1)]
        log_z_threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a hidden-XOR dataset CSV: the label is the XOR of two binary
    /// features, every other feature is noise.
    Xor {
        /// Number of rows (at least 4).
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 18)]
        num_noise: usize,
        #[arg(long, value_enum, default_value_t = NoiseArg::Binary)]
        noise: NoiseArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalModeArg {
    Single,
    Ensemble,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LeafParamsArg {
    Mean,
    Sample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TestSetArg {
    Id,
    Ood,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    Binary,
    Real,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; anything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> errors::CliResult<()> {
    match cli.command {
        Command::Train { config, out, seeds } => {
            commands::cmd_train(&config, out.as_deref(), seeds)
        }
        Command::Eval {
            config,
            checkpoint,
            mode,
            samples,
            seed,
            leaf_params,
            test_set,
            out,
        } => commands::cmd_eval(&EvalArgs {
            config,
            checkpoint,
            mode: match mode {
                EvalModeArg::Single => EvalMode::Single,
                EvalModeArg::Ensemble => EvalMode::Ensemble,
            },
            samples,
            seed,
            leaf_params: match leaf_params {
                LeafParamsArg::Mean => LeafParamMode::Mean,
                LeafParamsArg::Sample => LeafParamMode::Sample,
            },
            test_set: match test_set {
                TestSetArg::Id => TestSet::Id,
                TestSetArg::Ood => TestSet::Ood,
            },
            out,
        }),
        Command::CountSpace { p, d } => commands::cmd_count_space(p, d),
        Command::OracleCheck { config, cap, samples, tv_threshold, log_z_threshold, out } => {
            commands::cmd_oracle_check(&OracleArgs {
                config,
                cap,
                samples,
                tv_threshold,
                log_z_threshold,
                out,
            })
        }
        Command::Xor { n, num_noise, noise, seed, out } => {
            let noise = match noise {
                NoiseArg::Binary => NoiseSpec::Binary,
                NoiseArg::Real => NoiseSpec::Real,
            };
            commands::cmd_xor(n, num_noise, noise, seed, &out)
        }
    }
}
