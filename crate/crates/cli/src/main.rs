//! Command-line runner wiring the pairlab modules into reproducible
//! scenarios. Exit codes: 0 success, 2 config error, 3 numeric failure
//! (non-finite values), 4 I/O error.

mod config;
mod presets;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pairlab::Error;

#[derive(Parser)]
#[command(
    name = "pairlab",
    about = "Photon-pair correlation imaging through complex media: scenario runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config file.
    Run {
        /// Path to the sectioned key = value config.
        config: PathBuf,
        /// Output directory (default: ./out-<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Full-resolution run (n = 51).
        #[arg(long)]
        full: bool,
    },
    /// Run a built-in preset.
    Preset {
        /// Preset name (see `pairlab list`).
        name: String,
        /// Output directory (default: ./out-<preset>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the preset's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Full-resolution run (n = 51).
        #[arg(long)]
        full: bool,
    },
    /// List available presets.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) => 3,
        Error::Io(_) => 4,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out, seed, full } => {
            let text = std::fs::read_to_string(&config)?;
            let parsed = config::ScenarioConfig::parse(&text)?;
            let stem = config
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
            let out_dir = out.unwrap_or_else(|| PathBuf::from(format!("out-{stem}")));
            let dir = scenario::run_scenario(&parsed, &out_dir, seed, full)?;
            println!("artifacts written to {}", dir.display());
            Ok(())
        }
        Command::Preset { name, out, seed, full } => {
            let (pname, _, text) = presets::find(&name).ok_or_else(|| {
                Error::Config(format!("unknown preset {name:?}; run `pairlab list`"))
            })?;
            let parsed = config::ScenarioConfig::parse(text)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from(format!("out-{pname}")));
            let dir = scenario::run_scenario(&parsed, &out_dir, seed, full)?;
            println!("artifacts written to {}", dir.display());
            Ok(())
        }
        Command::List => {
            print!("{}", scenario::preset_table());
            Ok(())
        }
    }
}
