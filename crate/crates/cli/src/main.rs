use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cqdyn_cli::compare::{compare_files, Metric};
use cqdyn_cli::runner::{check, run};
use cqdyn_cli::scenario::parse_scenario;

/// Simulator and verifier for classical-quantum dynamics.
#[derive(Parser)]
#[command(name = "cqdyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: CQDYN_THREADS, then all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Distance between two artifacts.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value = "l1")]
        metric: Metric,
    },
    /// Parse a scenario and audit complete positivity without running it.
    Check { scenario: PathBuf },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_SCENARIO: u8 = 2;

fn load(path: &PathBuf) -> Result<cqdyn_cli::scenario::Scenario, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(EXIT_SCENARIO)
    })?;
    parse_scenario(&text).map_err(|errors| {
        for e in &errors.0 {
            eprintln!("{}: {e}", path.display());
        }
        ExitCode::from(EXIT_SCENARIO)
    })
}

fn configure_threads(threads: Option<usize>) {
    let from_env = std::env::var("CQDYN_THREADS").ok().and_then(|v| v.parse().ok());
    if let Some(n) = threads.or(from_env).filter(|&n| n > 0) {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out, seed, threads } => {
            configure_threads(threads);
            let mut s = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            match run(&s, &out) {
                Ok(summary) => {
                    println!("{}", summary.message);
                    for f in &summary.files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(EXIT_FAILURE)
                }
            }
        }
        Command::Compare { a, b, metric } => match compare_files(&a, &b, metric) {
            Ok(d) => {
                println!("{d:.17e}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("compare failed: {e}");
                ExitCode::from(EXIT_FAILURE)
            }
        },
        Command::Check { scenario } => {
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            match check(&s) {
                Ok(msg) => {
                    println!("{msg}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("check failed: {e}");
                    ExitCode::from(EXIT_FAILURE)
                }
            }
        }
    }
}
