//! `uend`: data generation, the three-phase debiasing pipeline, and biasness
//! tools from the command line.

mod commands;
mod config;
mod error;
mod run_dir;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Phase;
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Default parent of run directories.
const OUT_ROOT_ENV: &str = "UEND_OUT_ROOT";
const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "uend", version, about = "Unsupervised debiasing with the EnD regularizer")]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::One => Phase::Vanilla,
            PhaseArg::Two => Phase::PseudoLabel,
            PhaseArg::Three | PhaseArg::All => Phase::Debias,
        }
    }
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to the config's `output_dir`, then
    /// `$UEND_OUT_ROOT/<config name>-seed<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the train, validation and test splits as CSV.
    Generate(RunArgs),
    /// Vanilla training, pseudo-labeling and debiased training.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Last phase to run.
        #[arg(long, value_enum, default_value = "all")]
        phase: PhaseArg,
    },
    /// Estimate biasness from a CSV of `bias,prediction` rows.
    Biasness {
        #[arg(long)]
        input: PathBuf,
        /// Bias-target correlation of the data the predictions were made on.
        #[arg(long)]
        rho: f64,
        /// Number of classes.
        #[arg(long = "n-t", default_value_t = 10)]
        n_t: usize,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Theoretical normalized mutual information curves as CSV.
    Curves {
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.95,0.99,0.999")]
        rho_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        phi_grid: Vec<f64>,
        #[arg(long = "n-t", default_value_t = 10)]
        n_t: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = match (&args.out, &config.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => {
            let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUT_ROOT.into());
            let stem = Path::new(&args.config)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            root.join(format!("{stem}-seed{}", config.seed))
        }
    };
    Ok((config, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => {
            let (config, out) = load(&args)?;
            commands::cmd_generate(&config, &out)
        }
        Command::Pipeline { run, phase } => {
            let (config, out) = load(&run)?;
            commands::cmd_pipeline(&config, &out, phase.into())
        }
        Command::Biasness {
            input,
            rho,
            n_t,
            eps,
            out,
        } => commands::cmd_biasness(&input, rho, n_t, eps, out.as_deref()),
        Command::Curves {
            rho_grid,
            phi_grid,
            n_t,
            out,
        } => commands::cmd_curves(&rho_grid, &phi_grid, n_t, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::config(e.to_string().trim_end()).to_json());
            return ExitCode::from(2);
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
