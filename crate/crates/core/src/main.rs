use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flsimco::cli::{self, CliError, WORKERS_ENV};

#[derive(Parser)]
#[command(
    name = "flsimco",
    version,
    about = "Federated self-supervised learning simulator for vehicular networks"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) pair of a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute summary.csv from an existing rounds.csv.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Write a synthetic labeled corpus in the CIFAR-10 binary layout.
    GenData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        side: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, out } => {
            let cfg = cli::parse_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.run.output_dir.clone());
            let report = cli::run(&cfg, &dir)?;
            print!("{}", cli::format_summary(&report.summary));
            println!(
                "wrote {} rounds to {}",
                report.records.len(),
                report.out_dir.display()
            );
        }
        Command::Summarize { input } => {
            let table = cli::summarize(&input)?;
            print!("{}", cli::format_summary(&table));
        }
        Command::GenData {
            classes,
            per_class,
            side,
            seed,
            out,
        } => {
            let d = cli::gen_data(classes, per_class, side, seed, &out)?;
            println!("wrote {} images to {}", d.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match execute(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
