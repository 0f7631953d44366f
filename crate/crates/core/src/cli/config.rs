//! Run configuration: TOML with one table per module. Absent keys take the
//! experiment defaults and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{PartitionSpec, CIFAR_SIDE};
use crate::eval::ProbeConfig;
use crate::federation::{ExperimentConfig, RoundConfig, Strategy};
use crate::imaging::CameraParams;
use crate::mobility::{MobilityError, MobilityParams};
use crate::ssl::{DtLossConfig, EncoderConfig, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic corpus shape.
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub noise: f64,
    pub probe_per_class: usize,
    pub seed: u64,
    /// Directory with the CIFAR-10 binary batches.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cifar_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            classes: 10,
            per_class: 5000,
            side: 8,
            noise: 0.1,
            probe_per_class: 100,
            seed: 0,
            cifar_dir: None,
        }
    }
}

impl DataConfig {
    fn validate(&self) -> Result<(), String> {
        match self.source {
            DataSource::Synthetic => {
                for (name, v) in [
                    ("classes", self.classes),
                    ("per_class", self.per_class),
                    ("side", self.side),
                    ("probe_per_class", self.probe_per_class),
                ] {
                    if v == 0 {
                        return Err(format!("{name} must be positive"));
                    }
                }
                if !(0.0..=1.0).contains(&self.noise) {
                    return Err(format!("noise must be in [0, 1], got {}", self.noise));
                }
            }
            DataSource::Cifar10 => {
                if self.cifar_dir.is_none() {
                    return Err("cifar_dir is required when source = \"cifar10\"".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Added to every replicate seed.
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("runs"),
            strategies: Strategy::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

impl RunSection {
    fn validate(&self) -> Result<(), String> {
        if self.strategies.is_empty() {
            return Err("strategies must list at least one strategy".into());
        }
        if self.seeds.is_empty() {
            return Err("seeds must list at least one seed".into());
        }
        Ok(())
    }

    pub fn run_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        self.seeds.iter().map(|s| self.master_seed.wrapping_add(*s))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mobility: MobilityParams,
    pub camera: CameraParams,
    pub encoder: EncoderConfig,
    pub loss: DtLossConfig,
    pub sgd: SgdConfig,
    pub partition: PartitionSpec,
    pub round: RoundConfig,
    pub probe: ProbeConfig,
    pub data: DataConfig,
    pub run: RunSection,
}

fn mobility_key(e: &MobilityError) -> &'static str {
    match e {
        MobilityError::Sigma(_) => "sigma",
        MobilityError::Window { .. } => "v_min",
        MobilityError::Mu(_) => "mu",
    }
}

impl RunConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            mobility: self.mobility,
            camera: self.camera,
            encoder: self.encoder.clone(),
            loss: self.loss,
            sgd: self.sgd,
            partition: self.partition,
            round: self.round,
            probe: self.probe,
        }
    }

    /// Every failed check as `(section, key, message)`. The key is `None`
    /// when the message does not lead with a field of the section.
    fn violations(&self) -> Vec<(&'static str, Option<String>, String)> {
        let mut out = Vec::new();
        if let Err(e) = self.mobility.validate() {
            out.push((
                "mobility",
                Some(mobility_key(&e).to_string()),
                e.to_string(),
            ));
        }
        if let Err(e) = self.camera.validate() {
            let key = match &e {
                crate::imaging::ImagingError::Camera { name, .. } => Some(name.to_string()),
                _ => None,
            };
            out.push(("camera", key, e.to_string()));
        }
        let checks: [(&'static str, Result<(), String>); 8] = [
            (
                "encoder",
                self.encoder.validate().map_err(|e| e.to_string()),
            ),
            ("loss", self.loss.validate().map_err(|e| e.to_string())),
            ("sgd", self.sgd.validate().map_err(|e| e.to_string())),
            (
                "partition",
                self.partition.validate().map_err(|e| e.to_string()),
            ),
            ("round", self.round.validate(self.partition.n_vehicles)),
            ("probe", self.probe.validate()),
            ("data", self.data.validate()),
            ("run", self.run.validate()),
        ];
        for (section, r) in checks {
            if let Err(msg) = r {
                out.push((section, self.leading_key(section, &msg), msg));
            }
        }
        let side = match self.data.source {
            DataSource::Synthetic => self.data.side,
            DataSource::Cifar10 => CIFAR_SIDE,
        };
        let (w, h, c) = (
            self.encoder.width,
            self.encoder.height,
            self.encoder.channels,
        );
        if (w, h, c) != (side, side, 3) {
            out.push((
                "encoder",
                Some("width".into()),
                format!("encoder input {w}x{h}x{c} does not match {side}x{side}x3 images"),
            ));
        }
        out
    }

    /// The first word of `msg` if it names a key of `section`.
    fn leading_key(&self, section: &str, msg: &str) -> Option<String> {
        let first = msg
            .trim_start_matches("invalid config: ")
            .trim_start_matches("invalid partition spec: ")
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .next()?;
        let table = toml::Table::try_from(self).ok()?;
        let keys = table.get(section)?.as_table()?;
        keys.contains_key(first).then(|| first.to_string())
    }

    /// Checks every section. `source` is the original text, used to point
    /// at the offending line.
    pub fn validate(&self, source: Option<&str>) -> Result<(), CliError> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((section, key, message)) => {
                let line = source.and_then(|s| locate(s, section, key.as_deref()));
                Err(CliError::Invalid {
                    key: match key {
                        Some(k) => format!("{section}.{k}"),
                        None => section.to_string(),
                    },
                    line,
                    message,
                })
            }
        }
    }
}

/// 1-based line of `key` inside `[section]`, or of the section header when
/// the key is absent.
fn locate(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let (Some(k), Some((lhs, _))) = (key, line.split_once('=')) {
                if lhs.trim() == k {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    cfg.validate(Some(text))?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text).map_err(|e| e.in_file(path))
}

pub fn serialize_config(cfg: &RunConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Parse {
        line: None,
        message: e.to_string(),
    })
}
