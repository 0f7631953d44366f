//! Config-driven experiment runner behind the `flsimco` binary.

mod config;
mod output;

pub use config::{
    parse_config, parse_config_str, serialize_config, DataConfig, DataSource, RunConfig, RunSection,
};
pub use output::{
    curves, read_rounds_csv, read_rounds_json, summarize_records, write_rounds_json,
    write_summary_csv, RoundsWriter, ROUNDS_HEADER, SUMMARY_HEADER,
};

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{
    gen_synthetic_with_noise, load_cifar10, load_cifar10_test, write_record_file, DataError,
    Dataset,
};
use crate::eval::{EvalError, ProbeSet, SummaryTable};
use crate::federation::{run_experiment, FederationError, RoundRecord};

/// Env var holding the worker-thread count for local training.
pub const WORKERS_ENV: &str = "FLSIMCO_WORKERS";

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const ROUNDS_JSON: &str = "rounds.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const CONFIG_ECHO: &str = "config.toml";

fn at_line(line: &Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{message}", at_line(line))]
    Parse {
        line: Option<usize>,
        message: String,
    },
    #[error("{}invalid {key}: {message}", at_line(line))]
    Invalid {
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<CliError>,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (CliError::Parse { .. } | CliError::Invalid { .. }) => CliError::InFile {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
            e => e,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Training corpus and labeled probe set described by `cfg.data`.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, ProbeSet), CliError> {
    let d = &cfg.data;
    let (train, probe) = match d.source {
        DataSource::Synthetic => (
            gen_synthetic_with_noise(d.classes, d.per_class, d.side, d.noise, d.seed)?,
            gen_synthetic_with_noise(
                d.classes,
                d.probe_per_class,
                d.side,
                d.noise,
                d.seed.wrapping_add(1),
            )?,
        ),
        DataSource::Cifar10 => {
            let dir = d.cifar_dir.as_deref().expect("validated");
            (load_cifar10(dir)?, load_cifar10_test(dir)?)
        }
    };
    Ok((train, ProbeSet::split(probe, cfg.probe.train_fraction)?))
}

/// Result of the `run` subcommand.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub records: Vec<RoundRecord>,
    pub summary: SummaryTable,
}

/// Runs every (strategy, seed) pair of `cfg` and writes the round log,
/// its JSON twin, the summary, per-round timings and a config echo into
/// `out_dir`. On failure the rounds finished so far stay on disk.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let echo = out_dir.join(CONFIG_ECHO);
    std::fs::write(&echo, serialize_config(cfg)?).map_err(io_err(&echo))?;
    let (train, probe) = load_data(cfg)?;
    let exp = cfg.experiment();

    let mut writer = RoundsWriter::create(&out_dir.join(ROUNDS_CSV))?;
    let timings_path = out_dir.join(TIMINGS_CSV);
    let mut timings = std::fs::File::create(&timings_path).map_err(io_err(&timings_path))?;
    writeln!(timings, "strategy,seed,round,seconds").map_err(io_err(&timings_path))?;
    let json_path = out_dir.join(ROUNDS_JSON);

    let mut records = Vec::new();
    for &strategy in &cfg.run.strategies {
        for seed in cfg.run.run_seeds() {
            log::info!("running {strategy} with seed {seed}");
            let mut partial = Vec::new();
            let result = run_experiment(&exp, strategy, seed, &train, &probe, &mut |r| {
                partial.push(r.clone());
                writer.write(r)
            });
            records.append(&mut partial);
            let out = match result {
                Ok(out) => out,
                Err(e) => {
                    write_rounds_json(&json_path, &records)?;
                    return Err(e.into());
                }
            };
            for (rec, d) in out.records.iter().zip(&out.durations) {
                writeln!(
                    timings,
                    "{strategy},{seed},{},{}",
                    rec.round,
                    d.as_secs_f64()
                )
                .map_err(io_err(&timings_path))?;
            }
        }
    }
    write_rounds_json(&json_path, &records)?;
    let summary = summarize_records(&records)?;
    write_summary_csv(&out_dir.join(SUMMARY_CSV), &summary)?;
    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        records,
        summary,
    })
}

/// Rebuilds summary.csv in `dir` from its rounds.csv.
pub fn summarize(dir: &Path) -> Result<SummaryTable, CliError> {
    let records = read_rounds_csv(&dir.join(ROUNDS_CSV))?;
    let summary = summarize_records(&records)?;
    write_summary_csv(&dir.join(SUMMARY_CSV), &summary)?;
    Ok(summary)
}

/// Writes a synthetic corpus in the CIFAR-10 binary record layout.
pub fn gen_data(
    classes: usize,
    per_class: usize,
    side: usize,
    seed: u64,
    out: &Path,
) -> Result<Dataset, CliError> {
    let d = gen_synthetic_with_noise(classes, per_class, side, DataConfig::default().noise, seed)?;
    write_record_file(&d, out)?;
    Ok(d)
}

/// Human-readable summary for the terminal.
pub fn format_summary(table: &SummaryTable) -> String {
    let mut s = format!(
        "{:<10} {:>6} {:>6} {:>10} {:>8} {:>10}\n",
        "strategy", "seed", "round", "loss", "top1", "curve_std"
    );
    for r in &table.rows {
        let seed = r.seed.map_or_else(|| "mean".to_string(), |v| v.to_string());
        s += &format!(
            "{:<10} {:>6} {:>6} {:>10.5} {:>8.4} {:>10.5}\n",
            r.strategy, seed, r.rounds, r.final_loss, r.final_top1, r.curve_std
        );
    }
    for d in &table.deltas {
        s += &format!(
            "{} - {}: top1 {:+.4}, curve_std {:+.5}, loss {:+.5}\n",
            d.a, d.b, d.final_top1, d.curve_std, d.final_loss
        );
    }
    s
}
