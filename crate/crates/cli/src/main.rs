//! Command-line front end: characterization, key-rate sweeps, run
//! comparison and LP dumps.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "decoybound",
    version,
    about = "Decoy-state QKD key-rate analysis for correlated, flawed, leaky transmitters",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest measurement tables and derive the correlation parameters.
    Characterize {
        /// Directory holding im.csv, si.csv, os_state.csv, os_intensity.csv.
        #[arg(long)]
        tables: PathBuf,
        /// Run configuration supplying the protocol section.
        #[arg(long)]
        config: PathBuf,
        /// Output path for the derived parameter report (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the secret-key-rate sweep and write CSV plus a run manifest.
    Skr {
        /// Run configuration file (authoritative; flags override scalars).
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Named preset instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        /// Override the tables directory.
        #[arg(long)]
        tables: Option<PathBuf>,
        /// Loss grid START:STOP:STEP in dB.
        #[arg(long)]
        loss: Option<String>,
        /// Parameter mode override.
        #[arg(long, value_parser = ["fine", "coarse"])]
        mode: Option<String>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the 1024-point worst-case phase grid.
        #[arg(long)]
        paranoid_phi: bool,
    },
    /// Compare two sweep CSVs: per-loss throughput ratio of B over A.
    Compare {
        csv_a: PathBuf,
        csv_b: PathBuf,
        /// Optional output CSV for the ratio table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump one estimation LP in plain text for inspection.
    DumpLp {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        tables: Option<PathBuf>,
        /// Channel loss in dB for the LP data.
        #[arg(long)]
        loss: f64,
        /// Past-sequence index in enumeration order.
        #[arg(long, default_value_t = 0)]
        sequence: u32,
        /// Estimated family: 1..=4 for the phase-error combinations, 5 for
        /// the bit-averaged yield.
        #[arg(long)]
        family: usize,
        /// Optimization direction (defaults to the family's natural one).
        #[arg(long, value_parser = ["max", "min"])]
        direction: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit codes: 0 ok, 2 input error, 3 completed with flags, 4 internal.
fn classify(err: &decoybound::Error) -> u8 {
    use decoybound::Error::*;
    match err {
        Config(_) | Capacity(_) | TableParse { .. } | TableMismatch(_) | Data(_)
        | MissingEpsilon(_) | Io(_) | Json(_) => 2,
        Domain(_) | LpBuild(_) | Search(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Characterize { tables, config, out } => {
            commands::characterize(&tables, &config, &out)
        }
        Command::Skr {
            config,
            preset,
            tables,
            loss,
            mode,
            threads,
            out,
            paranoid_phi,
        } => commands::skr(commands::SkrArgs {
            config,
            preset,
            tables,
            loss,
            mode,
            threads,
            out,
            paranoid_phi,
        }),
        Command::Compare { csv_a, csv_b, out } => commands::compare(&csv_a, &csv_b, out.as_deref()),
        Command::DumpLp {
            config,
            preset,
            tables,
            loss,
            sequence,
            family,
            direction,
            out,
        } => commands::dump_lp(commands::DumpArgs {
            config,
            preset,
            tables,
            loss,
            sequence,
            family,
            direction,
            out,
        }),
    };
    match result {
        Ok(flags) => {
            if flags > 0 {
                eprintln!("completed with {flags} flagged item(s)");
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}
