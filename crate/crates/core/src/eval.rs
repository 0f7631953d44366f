//! Frozen-encoder kNN probe and loss-curve statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::imaging::Image;
use crate::numerics::dot;
use crate::ssl::{encode, EncoderConfig, ParamVector, SslError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("empty probe set ({0})")]
    EmptyProbe(&'static str),
    #[error("probe index {index} out of range for {len} images")]
    ProbeIndex { index: usize, len: usize },
    #[error("index {0} appears in both probe_train and probe_test")]
    Overlap(usize),
    #[error("k = {k} must be in 1..={train}")]
    BadK { k: usize, train: usize },
    #[error("curve needs at least 2 points, got {0}")]
    ShortCurve(usize),
    #[error("run {strategy}/{seed} has {got} rounds, expected {expected}")]
    RoundMismatch {
        strategy: String,
        seed: u64,
        got: usize,
        expected: usize,
    },
    #[error("no runs to compare")]
    NoRuns,
    #[error(transparent)]
    Ssl(#[from] SslError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub k: usize,
    /// Share of each class placed in probe_train.
    pub train_fraction: f64,
    /// Evaluate every `stride` rounds; the final round is always evaluated.
    pub stride: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            k: 20,
            train_fraction: 0.5,
            stride: 1,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if self.stride == 0 {
            return Err("stride must be positive".into());
        }
        Ok(())
    }
}

/// Labeled probe corpus with disjoint train and test index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    data: Dataset,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl ProbeSet {
    pub fn new(data: Dataset, train: Vec<usize>, test: Vec<usize>) -> Result<Self, EvalError> {
        if train.is_empty() {
            return Err(EvalError::EmptyProbe("probe_train"));
        }
        if test.is_empty() {
            return Err(EvalError::EmptyProbe("probe_test"));
        }
        let len = data.len();
        let mut in_train = vec![false; len];
        for &i in &train {
            if i >= len {
                return Err(EvalError::ProbeIndex { index: i, len });
            }
            in_train[i] = true;
        }
        for &i in &test {
            if i >= len {
                return Err(EvalError::ProbeIndex { index: i, len });
            }
            if in_train[i] {
                return Err(EvalError::Overlap(i));
            }
        }
        Ok(Self { data, train, test })
    }

    /// The first `train_fraction` of every class goes to probe_train and
    /// the rest to probe_test.
    pub fn split(data: Dataset, train_fraction: f64) -> Result<Self, EvalError> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for idx in data.class_indices() {
            let cut = ((idx.len() as f64 * train_fraction).round() as usize).min(idx.len());
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Self::new(data, train, test)
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        self.data.image_dims()
    }

    fn images(&self, idx: &[usize]) -> Vec<&Image> {
        idx.iter().map(|&i| &self.data.images()[i]).collect()
    }

    fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.data.labels()[i]).collect()
    }
}

/// kNN prediction from unit-norm embeddings. Only the training labels are
/// read. Each test point takes the majority label among its `k` nearest
/// training points by cosine distance; ties go to the smaller summed
/// distance, then the lower class id.
pub fn knn_predict(
    train: &[Vec<f64>],
    train_labels: &[usize],
    test: &[Vec<f64>],
    k: usize,
) -> Result<Vec<usize>, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyProbe("probe_train"));
    }
    if k == 0 || k > train.len() {
        return Err(EvalError::BadK {
            k,
            train: train.len(),
        });
    }
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    Ok(test
        .iter()
        .map(|q| {
            order.clear();
            order.extend(train.iter().enumerate().map(|(j, t)| (1.0 - dot(q, t), j)));
            order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // class -> (votes, summed distance)
            let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
            for &(d, j) in &order[..k] {
                let e = votes.entry(train_labels[j]).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += d;
            }
            votes
                .into_iter()
                .min_by(|(ca, (na, da)), (cb, (nb, db))| {
                    nb.cmp(na).then(da.total_cmp(db)).then(ca.cmp(cb))
                })
                .map(|(c, _)| c)
                .expect("k >= 1 neighbours")
        })
        .collect())
}

/// Fraction of `predicted` equal to `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / predicted.len() as f64
}

/// Top-1 accuracy of the frozen encoder under the kNN probe.
pub fn knn_top1(
    params: &ParamVector,
    enc: &EncoderConfig,
    probe: &ProbeSet,
    k: usize,
) -> Result<f64, EvalError> {
    let train = encode(params, enc, &probe.images(&probe.train))?;
    let test = encode(params, enc, &probe.images(&probe.test))?;
    let predicted = knn_predict(&train, &probe.labels(&probe.train), &test, k)?;
    Ok(accuracy(&predicted, &probe.labels(&probe.test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub losses: Vec<f64>,
    pub differences: Vec<f64>,
    /// Sample standard deviation of `differences`.
    pub std: f64,
    pub final_value: f64,
    pub min_value: f64,
}

pub fn curve_stats(losses: &[f64]) -> Result<CurveStats, EvalError> {
    if losses.len() < 2 {
        return Err(EvalError::ShortCurve(losses.len()));
    }
    let differences: Vec<f64> = losses.windows(2).map(|w| w[1] - w[0]).collect();
    let n = differences.len() as f64;
    let std = if differences.len() < 2 {
        0.0
    } else {
        let mean = differences.iter().sum::<f64>() / n;
        (differences.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(CurveStats {
        losses: losses.to_vec(),
        differences,
        std,
        final_value: *losses.last().unwrap(),
        min_value: losses.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Per-round losses and probe accuracies of one (strategy, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCurve {
    pub strategy: String,
    pub seed: u64,
    pub losses: Vec<f64>,
    /// `None` for rounds without a probe evaluation.
    pub top1: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    /// `None` marks the mean over seeds.
    pub seed: Option<u64>,
    pub rounds: usize,
    pub final_loss: f64,
    pub final_top1: f64,
    pub best_top1: f64,
    pub curve_std: f64,
}

/// Difference `a − b` of two strategies' mean rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub a: String,
    pub b: String,
    pub final_top1: f64,
    pub curve_std: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub deltas: Vec<Delta>,
}

impl SummaryTable {
    pub fn mean_row(&self, strategy: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.seed.is_none())
    }

    pub fn row(&self, strategy: &str, seed: u64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.seed == Some(seed))
    }
}

fn summarize_run(run: &RunCurve) -> Result<SummaryRow, EvalError> {
    let stats = curve_stats(&run.losses)?;
    let evaluated: Vec<f64> = run.top1.iter().flatten().copied().collect();
    Ok(SummaryRow {
        strategy: run.strategy.clone(),
        seed: Some(run.seed),
        rounds: run.losses.len(),
        final_loss: stats.final_value,
        final_top1: evaluated.last().copied().unwrap_or(f64::NAN),
        best_top1: evaluated.iter().copied().fold(f64::NAN, f64::max),
        curve_std: stats.std,
    })
}

/// One row per run in input order, then one mean row per strategy (in
/// first-seen order), then pairwise deltas between the strategies.
pub fn compare_runs(runs: &[RunCurve]) -> Result<SummaryTable, EvalError> {
    let expected = runs.first().ok_or(EvalError::NoRuns)?.losses.len();
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        if run.losses.len() != expected {
            return Err(EvalError::RoundMismatch {
                strategy: run.strategy.clone(),
                seed: run.seed,
                got: run.losses.len(),
                expected,
            });
        }
        rows.push(summarize_run(run)?);
    }
    let mut strategies: Vec<&str> = Vec::new();
    for r in &rows {
        if !strategies.contains(&r.strategy.as_str()) {
            strategies.push(&r.strategy);
        }
    }
    let means: Vec<SummaryRow> = strategies
        .iter()
        .map(|s| {
            let group: Vec<&SummaryRow> = rows.iter().filter(|r| r.strategy == *s).collect();
            let mean = |f: fn(&SummaryRow) -> f64| {
                group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64
            };
            SummaryRow {
                strategy: s.to_string(),
                seed: None,
                rounds: expected,
                final_loss: mean(|r| r.final_loss),
                final_top1: mean(|r| r.final_top1),
                best_top1: mean(|r| r.best_top1),
                curve_std: mean(|r| r.curve_std),
            }
        })
        .collect();
    let mut deltas = Vec::new();
    for (i, a) in means.iter().enumerate() {
        for b in &means[i + 1..] {
            deltas.push(Delta {
                a: a.strategy.clone(),
                b: b.strategy.clone(),
                final_top1: a.final_top1 - b.final_top1,
                curve_std: a.curve_std - b.curve_std,
                final_loss: a.final_loss - b.final_loss,
            });
        }
    }
    rows.extend(means);
    Ok(SummaryTable { rows, deltas })
}
