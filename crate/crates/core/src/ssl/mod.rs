//! Encoder, dual-temperature loss, optimizer and local training.

mod encoder;
mod loss;
mod moco;
mod optim;
mod train;

pub use encoder::{
    bind_params, encode, forward, image_batch, Activation, EncoderConfig, ParamEntry, ParamLayout,
    ParamVector,
};
pub use loss::{
    batch_loss, dt_coefficient, dt_coefficients, dt_loss, dt_loss_graph, dt_weight, info_nce,
    nll_from_logits, off_diagonal_mask, weight_from_logits, weighted_info_nce, DtLossConfig,
    EmbeddingTriple,
};
pub use moco::{
    moco_local_train, momentum_update, KeyQueue, MocoConfig, MocoOutcome, MomentumEncoderState,
};
pub use optim::{cosine_lr, Sgd, SgdConfig};
pub use train::{
    build_triples, dt_loss_and_grad, local_train, make_views, LocalOutcome, LocalTrainConfig,
};

use thiserror::Error;

use crate::imaging::ImagingError;
use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SslError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parameter vector length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("image {index} has dims {got:?}, encoder expects {expected:?}")]
    InputShape {
        index: usize,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("contrastive loss needs at least one negative")]
    NoNegatives,
    #[error("positive probability saturated at 1; loss coefficient undefined")]
    DegenerateWeight,
    #[error("embedding norm {0} is not 1")]
    NotUnitNorm(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least 2 images per batch, got {0}")]
    TooFewImages(usize),
}
