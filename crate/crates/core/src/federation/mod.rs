//! Federated rounds at the roadside unit: vehicle selection, parallel local
//! training, and the four aggregation strategies.

mod aggregate;
mod experiment;
mod seed;

pub use aggregate::{
    aggregate_discard, aggregate_fedavg, aggregate_flsimco, flsimco_weights, weighted_sum,
    Aggregate,
};
pub use experiment::{init_global, run_experiment, select_vehicles, RunOutput};
pub use seed::{derive_seed, Purpose};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, PartitionSpec};
use crate::eval::{EvalError, ProbeConfig};
use crate::imaging::{blur_level, BlurLevel, CameraParams, ImagingError};
use crate::mobility::{MobilityError, MobilityParams, Velocity};
use crate::ssl::{DtLossConfig, EncoderConfig, SgdConfig, SslError};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot select {requested} vehicles from a pool of {pool}")]
    PoolTooSmall { requested: usize, pool: usize },
    #[error("no models to aggregate")]
    NoModels,
    #[error("{params} models but {other} weights, blurs or velocities")]
    LengthMismatch { params: usize, other: usize },
    #[error("models have different parameter layouts")]
    LayoutMismatch,
    #[error("blur level must be finite and non-negative, got {0}")]
    InvalidBlur(f64),
    #[error("every vehicle exceeded the discard threshold {threshold} m/s")]
    NoSurvivors { threshold: f64 },
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<FederationError>,
    },
    #[error("writing round record: {0}")]
    Sink(#[from] std::io::Error),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Flsimco,
    Fedavg,
    Discard,
    Fedco,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Flsimco,
        Strategy::Fedavg,
        Strategy::Discard,
        Strategy::Fedco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Flsimco => "flsimco",
            Strategy::Fedavg => "fedavg",
            Strategy::Discard => "discard",
            Strategy::Fedco => "fedco",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    pub max_rounds: usize,
    pub vehicles_per_round: usize,
    pub local_epochs: usize,
    /// Images per local SGD step; 0 uses the whole shard.
    pub batch_size: usize,
    /// m/s; 27.78 is 100 km/h.
    pub discard_threshold: f64,
    /// Use the blur weights without the `1/(N−1)` normalization.
    pub raw_weights: bool,
    pub fedco_queue: usize,
    pub fedco_batch: usize,
    pub moco_momentum: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            max_rounds: 150,
            vehicles_per_round: 5,
            local_epochs: 1,
            batch_size: 0,
            discard_threshold: 27.78,
            raw_weights: false,
            fedco_queue: 256,
            fedco_batch: 32,
            moco_momentum: 0.99,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self, pool: usize) -> Result<(), String> {
        if self.vehicles_per_round == 0 || self.vehicles_per_round > pool {
            return Err(format!(
                "vehicles_per_round must be in 1..={pool}, got {}",
                self.vehicles_per_round
            ));
        }
        if !(self.discard_threshold > 0.0 && self.discard_threshold.is_finite()) {
            return Err(format!(
                "discard_threshold must be positive, got {}",
                self.discard_threshold
            ));
        }
        if self.batch_size == 1 {
            return Err("batch_size must be 0 (whole shard) or at least 2".into());
        }
        if self.fedco_batch == 0 || self.fedco_queue < self.fedco_batch {
            return Err(format!(
                "fedco_queue ({}) must hold at least fedco_batch ({}) keys, and fedco_batch must be positive",
                self.fedco_queue, self.fedco_batch
            ));
        }
        if !(0.0..=1.0).contains(&self.moco_momentum) {
            return Err(format!(
                "moco_momentum must be in [0, 1], got {}",
                self.moco_momentum
            ));
        }
        Ok(())
    }
}

/// Everything one (strategy, seed) run needs besides the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mobility: MobilityParams,
    pub camera: CameraParams,
    pub encoder: EncoderConfig,
    pub loss: DtLossConfig,
    pub sgd: SgdConfig,
    pub partition: PartitionSpec,
    pub round: RoundConfig,
    pub probe: ProbeConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        self.mobility.validate()?;
        self.camera.validate()?;
        self.encoder.validate()?;
        self.loss.validate()?;
        self.sgd.validate()?;
        self.partition.validate()?;
        self.round
            .validate(self.partition.n_vehicles)
            .map_err(FederationError::Config)?;
        self.probe.validate().map_err(FederationError::Config)?;
        Ok(())
    }
}

/// A vehicle inside the roadside unit's coverage for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub velocity: Velocity,
    pub blur: BlurLevel,
}

impl VehicleState {
    /// The roadside unit derives the blur from the reported velocity.
    pub fn arrive(
        id: usize,
        velocity: Velocity,
        camera: &CameraParams,
    ) -> Result<Self, FederationError> {
        Ok(Self {
            id,
            velocity,
            blur: blur_level(velocity, camera)?,
        })
    }
}

/// Log entry for one round. Everything here is deterministic given the
/// config and seed; wall-clock timings are kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub strategy: Strategy,
    pub seed: u64,
    /// 1-based.
    pub round: usize,
    pub lr: f64,
    pub vehicle_ids: Vec<usize>,
    pub velocities: Vec<f64>,
    pub blurs: Vec<f64>,
    /// Final-epoch loss of each vehicle.
    pub local_losses: Vec<f64>,
    pub mean_local_loss: f64,
    pub weights: Vec<f64>,
    pub top1: Option<f64>,
    /// Set when the discard rule removed every model and the previous
    /// global model was kept.
    pub skipped: bool,
}

impl RoundRecord {
    pub fn vehicle_count(&self) -> usize {
        self.vehicle_ids.len()
    }
}
