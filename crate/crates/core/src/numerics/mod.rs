//! Dense `f64` tensors, a small reverse-mode tape, and a central-difference
//! gradient estimator used to cross-check it.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::dot;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite input value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("numerical overflow in {op}: non-finite value produced")]
    Overflow { op: &'static str },
    #[error("cannot L2-normalize zero vector (row {row})")]
    ZeroNorm { row: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("finite difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// Central-difference estimate of the gradient of `f` at `x`:
/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2·eps` for every coordinate `i`.
pub fn finite_difference_grad<F, E>(f: F, x: &Tensor, eps: f64) -> Result<Tensor, E>
where
    F: Fn(&Tensor) -> Result<f64, E>,
    E: From<NumericsError>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(NumericsError::InvalidStep(eps).into());
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((hi - lo) / (2.0 * eps));
    }
    Ok(Tensor::from_raw(x.shape().to_vec(), out))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = dot(a, a).sqrt().max(dot(b, b).sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
