//! `dpfg`: run and compare private-training experiments.
//!
//! Exit codes: 0 success, 1 invalid spec or other failure, 2 missing dataset.

mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpfg::accountant::PrivacyLedger;
use dpfg::experiment::{self, Manifest};
use dpfg::Error;

use crate::options::SpecArgs;

#[derive(Debug, Parser)]
#[command(name = "dpfg", version, about = "DP-SGD with clipped or tanh-filtered gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every config for every seed and write per-run CSVs
    Run(SpecArgs),
    /// Like `run`, and also write compare.csv
    Compare(SpecArgs),
    /// Re-run an experiment from its manifest.json
    Replay {
        manifest: PathBuf,
        /// Write outputs here instead of the manifest's directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the (epsilon, order) of a privacy ledger
    Epsilon {
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 1.1)]
        sigma: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingData(_) => 2,
        _ => 1,
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("DPFG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not cap worker threads: {e}");
        }
    }
}

fn run(cli: Cli) -> dpfg::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let spec = args.settings()?.resolve()?;
            experiment::run(&spec)?;
            println!("wrote {}", spec.out_dir.display());
        }
        Command::Compare(args) => {
            let spec = args.settings()?.resolve()?;
            let rows = experiment::compare(&spec)?;
            print!("{}", experiment::compare_csv(&rows));
        }
        Command::Replay { manifest, out } => {
            let manifest = Manifest::read(&manifest)?;
            let dir = out.clone().unwrap_or_else(|| manifest.spec.out_dir.clone());
            experiment::replay(&manifest, out)?;
            println!("wrote {}", dir.display());
        }
        Command::Epsilon {
            q,
            sigma,
            steps,
            delta,
        } => {
            let (eps, order) = PrivacyLedger::new(q, sigma, steps, delta).epsilon()?;
            println!("epsilon={eps} order={order} delta={delta}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
