use crate::imaging::BlurLevel;
use crate::mobility::Velocity;
use crate::ssl::ParamVector;

use super::FederationError;

/// A new global model and the weight each input received.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub params: ParamVector,
    pub weights: Vec<f64>,
}

/// `Σ w_n·θ_n`, accumulated in input order.
pub fn weighted_sum(
    params: &[ParamVector],
    weights: &[f64],
) -> Result<ParamVector, FederationError> {
    let first = params.first().ok_or(FederationError::NoModels)?;
    if weights.len() != params.len() {
        return Err(FederationError::LengthMismatch {
            params: params.len(),
            other: weights.len(),
        });
    }
    let mut out = vec![0.0; first.len()];
    for (p, &w) in params.iter().zip(weights) {
        if p.layout() != first.layout() {
            return Err(FederationError::LayoutMismatch);
        }
        for (o, &v) in out.iter_mut().zip(p.values()) {
            *o += w * v;
        }
    }
    Ok(first.with_values(out)?)
}

/// Blur-aware weights `(ΣL − L_n) / ((N − 1)·ΣL)`. With `raw` the division
/// by `N − 1` is skipped and the weights sum to `N − 1`.
///
/// A single vehicle gets weight 1; all-zero blur falls back to uniform.
pub fn flsimco_weights(blurs: &[BlurLevel], raw: bool) -> Result<Vec<f64>, FederationError> {
    let n = blurs.len();
    if n == 0 {
        return Err(FederationError::NoModels);
    }
    if let Some(b) = blurs.iter().find(|b| !(b.0 >= 0.0 && b.0.is_finite())) {
        return Err(FederationError::InvalidBlur(b.0));
    }
    if n == 1 {
        log::warn!("blur-weighted aggregation with a single vehicle; passing its model through");
        return Ok(vec![1.0]);
    }
    let total: f64 = blurs.iter().map(|b| b.0).sum();
    if total == 0.0 {
        log::warn!("all blur levels are zero; using uniform weights");
        return Ok(vec![1.0 / n as f64; n]);
    }
    let scale = if raw { total } else { (n - 1) as f64 * total };
    Ok(blurs.iter().map(|b| (total - b.0) / scale).collect())
}

pub fn aggregate_flsimco(
    params: &[ParamVector],
    blurs: &[BlurLevel],
    raw: bool,
) -> Result<Aggregate, FederationError> {
    if params.len() != blurs.len() {
        return Err(FederationError::LengthMismatch {
            params: params.len(),
            other: blurs.len(),
        });
    }
    let weights = flsimco_weights(blurs, raw)?;
    Ok(Aggregate {
        params: weighted_sum(params, &weights)?,
        weights,
    })
}

pub fn aggregate_fedavg(params: &[ParamVector]) -> Result<Aggregate, FederationError> {
    if params.is_empty() {
        return Err(FederationError::NoModels);
    }
    let weights = vec![1.0 / params.len() as f64; params.len()];
    Ok(Aggregate {
        params: weighted_sum(params, &weights)?,
        weights,
    })
}

/// FedAvg over the models whose vehicle drove at or below `threshold`;
/// the rest get weight 0.
pub fn aggregate_discard(
    params: &[ParamVector],
    velocities: &[Velocity],
    threshold: f64,
) -> Result<Aggregate, FederationError> {
    if params.is_empty() {
        return Err(FederationError::NoModels);
    }
    if params.len() != velocities.len() {
        return Err(FederationError::LengthMismatch {
            params: params.len(),
            other: velocities.len(),
        });
    }
    let kept = velocities.iter().filter(|v| v.0 <= threshold).count();
    if kept == 0 {
        return Err(FederationError::NoSurvivors { threshold });
    }
    let weights: Vec<f64> = velocities
        .iter()
        .map(|v| {
            if v.0 <= threshold {
                1.0 / kept as f64
            } else {
                0.0
            }
        })
        .collect();
    Ok(Aggregate {
        params: weighted_sum(params, &weights)?,
        weights,
    })
}
