mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use morsedisk::report::ErrorRecord;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "morsedisk", version, about = "Morse gradient trees and explicit pseudo-holomorphic disks")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports and CSV series.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the machine report on stdout; the human summary goes to stderr.
    #[arg(long, global = true)]
    pub json: bool,
    /// Multiplies every grid resolution.
    #[arg(long, global = true, default_value_t = 1)]
    pub grid_scale: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Euclidean,
    FlatTorus,
}

#[derive(Args, Debug, Clone)]
pub struct FunctionArgs {
    /// Expression in x0, x1, ...; read from the configuration when absent.
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = Kind::FlatTorus)]
    pub kind: Kind,
    /// Seed grid per axis for the critical point search.
    #[arg(long, default_value_t = 16)]
    pub resolution: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Lists ribbon trees with d leaves.
    Trees {
        #[arg(long, short)]
        d: usize,
        /// The two-leaf tree with a bivalent vertex.
        #[arg(long)]
        floer: bool,
    },
    /// Critical points of a function, or of every function in the configuration.
    Critical(FunctionArgs),
    /// Solves for gradient trees.
    Solve,
    /// Tangent-space and linearized-operator transversality per solution.
    Transversality,
    /// Assembles the discretized linearized operator of one solution.
    Linearize {
        #[arg(long, default_value_t = 0)]
        solution: usize,
    },
    /// Builds the explicit disk of one solution and exports it.
    BuildDisk {
        #[arg(long, default_value_t = 0)]
        solution: usize,
    },
    /// Runs the full check suite; exit status 0 iff every check passes.
    Verify,
    /// Morse homology mod 2 from counted flow lines.
    Homology(FunctionArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Trees { .. } => "trees",
            Command::Critical(_) => "critical",
            Command::Solve => "solve",
            Command::Transversality => "transversality",
            Command::Linearize { .. } => "linearize",
            Command::BuildDisk { .. } => "build-disk",
            Command::Verify => "verify",
            Command::Homology(_) => "homology",
        }
    }
}

fn error_record(command: &str, e: &anyhow::Error) -> ErrorRecord {
    match e.downcast_ref::<morsedisk::Error>() {
        Some(inner) => ErrorRecord::from_error(command, inner),
        None => ErrorRecord::new(command, "cli", format!("{e:#}")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{}", ErrorRecord::new("", "cli", e.render().to_string().trim_end().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let record = error_record(name, &e);
            if cli.global.json {
                print!("{}", record.to_json());
            }
            eprint!("{}", record.to_json());
            ExitCode::from(2)
        }
    }
}
