//! Command-line frontend: dataset synthesis, training, evaluation,
//! inference, and benchmarking over the core library.
//!
//! Every command is reproducible under its seed, writes output files
//! atomically (write to a sibling temp file, then rename), and follows one
//! exit-code contract: 0 success, 1 runtime failures (I/O, corrupt files,
//! internal errors), 2 usage and configuration mistakes (unknown flags or
//! keys, out-of-range values, empty asset sets).

use clap::error::ErrorKind;
use clap::Parser;
use std::ffi::OsString;

pub mod assets;
pub mod commands;
pub mod config;
pub mod pngio;

/// Failures split by exit code: usage/config mistakes exit 2, everything
/// else a command can hit at runtime exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<mfdnet_core::error::Error> for CliError {
    fn from(e: mfdnet_core::error::Error) -> Self {
        use mfdnet_core::error::Error;
        match e {
            Error::Config(_) | Error::Argument(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attach a path to an I/O failure; unreadable inputs are runtime errors.
pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "mfdnet",
    version,
    about = "Multi-frequency deflare network: synthesize data, train, evaluate, restore, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(clap::Subcommand, Debug)]
enum Command {
    /// Write (corrupted, ground-truth) PNG pairs and a manifest.
    Synth(commands::synth::SynthArgs),
    /// Train a model; writes last/best checkpoints and a loss history.
    Train(commands::train::TrainArgs),
    /// Score paired corrupted/ground-truth images with a checkpoint.
    Eval(commands::eval::EvalArgs),
    /// Remove flare from one image.
    Infer(commands::infer::InferArgs),
    /// Report parameter count, analytic MACs, and timed inference.
    Bench(commands::bench::BenchArgs),
}

/// Parse and run; returns the process exit code. Kept as a library entry so
/// tests can drive the full binary surface in-process.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version on stdout (exit 0) and usage
            // errors on stderr (exit 2).
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Command::Synth(args) => commands::synth::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Infer(args) => commands::infer::run(&args),
        Command::Bench(args) => commands::bench::run(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
