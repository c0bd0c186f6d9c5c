mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trpca_core::error::{Error, ErrorClass};

use commands::{
    ConvertFlags, DatagenFlags, FinetuneFlags, PhaseGridFlags, SensitivityFlags, SolveFlags, TrainFlags, TuneFlags,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::DataFormat => 3,
                ErrorClass::Numerical => 4,
            },
        }
    }
}

/// Third-order tensor robust PCA with learned ScaledGD hyperparameters.
#[derive(Parser, Debug)]
#[command(name = "trpca", version)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic instance: Y, Xstar, Sstar, mask and meta.json.
    Datagen(DatagenFlags),
    /// Run the solver with fixed hyperparameters.
    Solve(SolveFlags),
    /// Learn hyperparameters on synthetic instances.
    Train(TrainFlags),
    /// Self-supervised fine-tuning on one observation.
    Finetune(FinetuneFlags),
    /// Black-box hyperparameter search on one observation.
    TuneBaseline(TuneFlags),
    /// Recovery error over an (alpha, rank) grid.
    PhaseGrid(PhaseGridFlags),
    /// Quartiles of fine-tuning parameter changes.
    Sensitivity(SensitivityFlags),
    /// Stack a directory of binary PGM frames into a TNS3 tensor.
    Convert(ConvertFlags),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Datagen(f) => commands::datagen(&f),
        Command::Solve(f) => commands::solve(&f),
        Command::Train(f) => commands::train(&f),
        Command::Finetune(f) => commands::finetune(&f),
        Command::TuneBaseline(f) => commands::tune_baseline(&f),
        Command::PhaseGrid(f) => commands::phase_grid(&f),
        Command::Sensitivity(f) => commands::sensitivity(&f),
        Command::Convert(f) => commands::convert(&f),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
