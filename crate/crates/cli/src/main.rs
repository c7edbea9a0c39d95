//! `mft` — batch pipeline for predicting moral foundations in short
//! social-media text.
//!
//! Each subcommand runs one pipeline stage over the artifacts in the
//! configured output directory. Exit codes: 0 success, 1 usage error,
//! 2 data error, 3 transport error.

mod config;
mod stages;

use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mft_core::knowledge::KbError;
use mft_core::linking::LinkError;
use stages::RunFlags;

#[derive(Parser)]
#[command(
    name = "mft",
    about = "Moral-foundation prediction with knowledge-base enrichment",
    version
)]
struct Cli {
    /// Pipeline configuration file (flat key = value lines).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Recompute a stage even when its inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,

    /// Forbid all network access; only fixtures and snapshots are used.
    #[arg(long, global = true)]
    offline: bool,

    /// Override the master seed from the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the raw corpus and derive gold labels.
    Ingest,
    /// Link entity mentions and refine the annotations.
    Link,
    /// Fetch entity abstracts and properties into enrichment documents.
    FetchKb,
    /// Rank knowledge words per class by cPMId.
    SelectFeatures,
    /// Soft-encode knowledge and dictionary vectors per tweet.
    Encode,
    /// Train one classifier per class on the full corpus.
    Train,
    /// Run the cross-validated experiment matrix and print the table.
    Evaluate,
    /// Read raw text lines from stdin and print one label set per line.
    Predict,
    /// Print per-class agreement (PABAK) between two coder columns.
    Agreement {
        /// Coder column indices, e.g. `0,1`.
        #[arg(long, default_value = "0,1", value_name = "A,B")]
        coders: String,
    },
    /// Print gold-label class statistics.
    Stats,
}

/// Error classes mapped to process exit codes.
enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Transport(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Transport(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Data(e) | Failure::Transport(e) => format!("{e:#}"),
        }
    }
}

fn classify(error: anyhow::Error) -> Failure {
    let transport = error.chain().any(|cause| {
        cause
            .downcast_ref::<LinkError>()
            .map(LinkError::is_transport)
            .or_else(|| cause.downcast_ref::<KbError>().map(KbError::is_transport))
            .unwrap_or(false)
    });
    if transport {
        Failure::Transport(error)
    } else {
        Failure::Data(error)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config_path = cli
        .config
        .ok_or_else(|| Failure::Usage("--config <FILE> is required".to_string()))?;
    let config = config::load_config(&config_path).map_err(|e| Failure::Usage(format!("{e:#}")))?;
    let flags = RunFlags {
        force: cli.force,
        offline: cli.offline,
        seed_override: cli.seed,
    };
    let result = match cli.command {
        Command::Ingest => stages::ingest(&config, flags),
        Command::Link => stages::link(&config, flags),
        Command::FetchKb => stages::fetch_kb(&config, flags),
        Command::SelectFeatures => stages::select_features_stage(&config, flags),
        Command::Encode => stages::encode(&config, flags),
        Command::Train => stages::train_stage(&config, flags),
        Command::Evaluate => stages::evaluate(&config, flags),
        Command::Predict => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            stages::predict_lines(&config, flags, BufReader::new(stdin.lock()), stdout.lock()).map(
                |n| {
                    eprintln!("predict: {n} lines classified");
                },
            )
        }
        Command::Agreement { coders } => {
            let (a, b) = parse_coders(&coders)?;
            stages::agreement(&config, a, b)
        }
        Command::Stats => stages::stats(&config),
    };
    result.map_err(classify)
}

fn parse_coders(spec: &str) -> Result<(usize, usize), Failure> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Failure::Usage(format!(
            "--coders expects two comma-separated indices, got {spec:?}"
        )));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Failure::Usage(format!("bad coder index {s:?}: {e}")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version prints are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
