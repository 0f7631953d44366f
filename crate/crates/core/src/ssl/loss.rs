//! Dual-temperature contrastive loss.
//!
//! For an anchor `q`, positive `k⁺` and negatives `k⁻_j`, let
//! `W(τ) = 1 − softmax_τ(q·k⁺)` over `{k⁺} ∪ {k⁻_j}`. The loss is
//! `−sg[W(τ_β) / W(τ_α)] · log softmax_{τ_α}(q·k⁺)`, where `sg` marks a
//! value held constant under differentiation.

use serde::{Deserialize, Serialize};

use super::SslError;
use crate::numerics::{dot, Graph, Tensor, Var};

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtLossConfig {
    pub tau_alpha: f64,
    pub tau_beta: f64,
}

impl Default for DtLossConfig {
    fn default() -> Self {
        Self {
            tau_alpha: 0.1,
            tau_beta: 1.0,
        }
    }
}

impl DtLossConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        for (name, v) in [("tau_alpha", self.tau_alpha), ("tau_beta", self.tau_beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SslError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Anchor, positive key and negative keys, all unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTriple {
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negatives: Vec<Vec<f64>>,
}

impl EmbeddingTriple {
    pub fn new(
        anchor: Vec<f64>,
        positive: Vec<f64>,
        negatives: Vec<Vec<f64>>,
    ) -> Result<Self, SslError> {
        let d = anchor.len();
        for v in std::iter::once(&anchor)
            .chain(std::iter::once(&positive))
            .chain(negatives.iter())
        {
            if v.len() != d {
                return Err(SslError::Shape(format!(
                    "embedding of length {} in a triple of dimension {d}",
                    v.len()
                )));
            }
            let n = dot(v, v).sqrt();
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(SslError::NotUnitNorm(n));
            }
        }
        Ok(Self {
            anchor,
            positive,
            negatives,
        })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn positive(&self) -> &[f64] {
        &self.positive
    }

    pub fn negatives(&self) -> &[Vec<f64>] {
        &self.negatives
    }

    /// Number of negatives.
    pub fn k(&self) -> usize {
        self.negatives.len()
    }

    fn logits(&self) -> (f64, Vec<f64>) {
        let pos = dot(&self.anchor, &self.positive);
        let negs = self
            .negatives
            .iter()
            .map(|n| dot(&self.anchor, n))
            .collect();
        (pos, negs)
    }
}

/// `1 − softmax` probability of the positive logit at temperature `tau`,
/// computed as the negatives' share so small values keep their precision.
pub fn weight_from_logits(pos: f64, negs: impl Iterator<Item = f64> + Clone, tau: f64) -> f64 {
    let max = negs.clone().fold(pos, f64::max);
    let e_pos = ((pos - max) / tau).exp();
    let e_neg: f64 = negs.map(|l| ((l - max) / tau).exp()).sum();
    e_neg / (e_pos + e_neg)
}

/// `−log softmax` probability of the positive logit at temperature `tau`.
pub fn nll_from_logits(pos: f64, negs: impl Iterator<Item = f64> + Clone, tau: f64) -> f64 {
    let max = negs.clone().fold(pos, f64::max);
    let sum: f64 = std::iter::once(pos)
        .chain(negs)
        .map(|l| ((l - max) / tau).exp())
        .sum();
    (max - pos) / tau + sum.ln()
}

pub fn dt_weight(t: &EmbeddingTriple, tau: f64) -> f64 {
    let (pos, negs) = t.logits();
    weight_from_logits(pos, negs.iter().copied(), tau)
}

/// Plain InfoNCE cross-entropy of the positive at temperature `tau`.
pub fn info_nce(t: &EmbeddingTriple, tau: f64) -> f64 {
    let (pos, negs) = t.logits();
    nll_from_logits(pos, negs.iter().copied(), tau)
}

/// `W(τ_β) / W(τ_α)`.
pub fn dt_coefficient(pos: f64, negs: &[f64], cfg: &DtLossConfig) -> Result<f64, SslError> {
    if negs.is_empty() {
        return Err(SslError::NoNegatives);
    }
    let w_alpha = weight_from_logits(pos, negs.iter().copied(), cfg.tau_alpha);
    if w_alpha.is_nan() || w_alpha <= 0.0 {
        return Err(SslError::DegenerateWeight);
    }
    let w_beta = weight_from_logits(pos, negs.iter().copied(), cfg.tau_beta);
    Ok(w_beta / w_alpha)
}

pub fn dt_loss(t: &EmbeddingTriple, cfg: &DtLossConfig) -> Result<f64, SslError> {
    let (pos, negs) = t.logits();
    let coef = dt_coefficient(pos, &negs, cfg)?;
    Ok(coef * nll_from_logits(pos, negs.iter().copied(), cfg.tau_alpha))
}

/// Mean per-triple loss.
pub fn batch_loss(triples: &[EmbeddingTriple], cfg: &DtLossConfig) -> Result<f64, SslError> {
    if triples.is_empty() {
        return Err(SslError::EmptyBatch);
    }
    let mut total = 0.0;
    for t in triples {
        total += dt_loss(t, cfg)?;
    }
    Ok(total / triples.len() as f64)
}

/// Per-anchor coefficients `W(τ_β)/W(τ_α)` for a batch. Row `i` of
/// `anchors` pairs with row `i` of `positives`; negative `j` counts for
/// anchor `i` when `mask[i][j]` is nonzero (all negatives count without a
/// mask).
pub fn dt_coefficients(
    anchors: &Tensor,
    positives: &Tensor,
    negatives: &Tensor,
    mask: Option<&Tensor>,
    cfg: &DtLossConfig,
) -> Result<Vec<f64>, SslError> {
    (0..anchors.rows())
        .map(|i| {
            let a = anchors.row(i);
            let pos = dot(a, positives.row(i));
            let negs: Vec<f64> = (0..negatives.rows())
                .filter(|&j| mask.is_none_or(|m| m.row(i)[j] != 0.0))
                .map(|j| dot(a, negatives.row(j)))
                .collect();
            dt_coefficient(pos, &negs, cfg)
        })
        .collect()
}

/// Records `(1/M) Σ_i c_i · (−log softmax_τ(a_i·p_i))` on `g`, with the
/// softmax taken over the positive and the unmasked negatives. The
/// coefficients enter as constants.
pub fn weighted_info_nce(
    g: &mut Graph,
    anchors: Var,
    positives: Var,
    negatives: Var,
    mask: Option<&Tensor>,
    tau: f64,
    coefficients: &[f64],
) -> Result<Var, SslError> {
    let m = g.value(anchors).rows();
    let k = g.value(negatives).rows();
    if coefficients.len() != m {
        return Err(SslError::Shape(format!(
            "{} coefficients for {m} anchors",
            coefficients.len()
        )));
    }
    let inv = 1.0 / tau;
    // Logits are bounded by 1/τ for unit vectors; shifting by it keeps exp
    // from overflowing.
    let pos = g.row_dot(anchors, positives)?;
    let pos = g.scale(pos, inv)?;
    let shift_pos = g.constant(Tensor::full(vec![m, 1], -inv))?;
    let pos = g.add(pos, shift_pos)?;
    let e_pos = g.exp(pos)?;

    let neg = g.matmul_bt(anchors, negatives)?;
    let neg = g.scale(neg, inv)?;
    let shift_neg = g.constant(Tensor::full(vec![m, k], -inv))?;
    let neg = g.add(neg, shift_neg)?;
    let mut e_neg = g.exp(neg)?;
    if let Some(mask) = mask {
        let mv = g.constant(mask.clone())?;
        e_neg = g.mul(e_neg, mv)?;
    }
    let neg_sum = g.sum_rows(e_neg)?;
    let den = g.add(e_pos, neg_sum)?;
    let log_den = g.log(den)?;
    let nll = g.sub(log_den, pos)?;

    let c = g.constant(Tensor::matrix(m, 1, coefficients.to_vec())?)?;
    let weighted = g.mul(nll, c)?;
    let total = g.sum(weighted)?;
    Ok(g.scale(total, 1.0 / m as f64)?)
}

/// Dual-temperature batch loss on `g`. Returns the scalar loss node and the
/// per-anchor coefficients that were held constant.
pub fn dt_loss_graph(
    g: &mut Graph,
    anchors: Var,
    positives: Var,
    negatives: Var,
    mask: Option<&Tensor>,
    cfg: &DtLossConfig,
) -> Result<(Var, Vec<f64>), SslError> {
    let coefficients = dt_coefficients(
        g.value(anchors),
        g.value(positives),
        g.value(negatives),
        mask,
        cfg,
    )?;
    let loss = weighted_info_nce(
        g,
        anchors,
        positives,
        negatives,
        mask,
        cfg.tau_alpha,
        &coefficients,
    )?;
    Ok((loss, coefficients))
}

/// `1 − I`: every other row of an in-batch key matrix is a negative.
pub fn off_diagonal_mask(n: usize) -> Tensor {
    let data = (0..n * n)
        .map(|i| if i / n == i % n { 0.0 } else { 1.0 })
        .collect();
    Tensor::from_raw(vec![n, n], data)
}
