use std::time::{Duration, Instant};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    aggregate_discard, aggregate_fedavg, aggregate_flsimco, derive_seed, Aggregate,
    ExperimentConfig, FederationError, Purpose, RoundRecord, Strategy, VehicleState,
};
use crate::data::{partition, Dataset, Shard};
use crate::eval::{knn_top1, ProbeSet};
use crate::imaging::{CameraParams, Image};
use crate::mobility::{sample_velocity, MobilityParams};
use crate::ssl::{
    cosine_lr, local_train, moco_local_train, EncoderConfig, KeyQueue, LocalTrainConfig,
    MocoConfig, ParamVector,
};

/// Seeded random global model `θ⁰`.
pub fn init_global(cfg: &EncoderConfig, seed: u64) -> ParamVector {
    cfg.init_params(derive_seed(seed, 0, 0, Purpose::Init))
}

/// Draws `n` distinct vehicle ids uniformly from `0..pool` and gives each a
/// fresh velocity. Returned in ascending id order.
pub fn select_vehicles(
    pool: usize,
    n: usize,
    round: usize,
    seed: u64,
    mobility: &MobilityParams,
    camera: &CameraParams,
) -> Result<Vec<VehicleState>, FederationError> {
    if n > pool {
        return Err(FederationError::PoolTooSmall { requested: n, pool });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, round as u64, Purpose::Selection));
    let mut ids = index::sample(&mut rng, pool, n).into_vec();
    ids.sort_unstable();
    ids.into_iter()
        .map(|id| {
            let mut vrng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                id as u64,
                round as u64,
                Purpose::Velocity,
            ));
            VehicleState::arrive(id, sample_velocity(&mut vrng, mobility), camera)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub global: ParamVector,
    pub durations: Vec<Duration>,
}

struct Trained {
    params: ParamVector,
    loss: f64,
    keys: Vec<Vec<f64>>,
}

/// Runs `round.max_rounds` rounds of one strategy. Each record is passed to
/// `sink` as soon as its round completes, so a failing round leaves the
/// earlier ones written.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
    train: &Dataset,
    probe: &ProbeSet,
    sink: &mut dyn FnMut(&RoundRecord) -> std::io::Result<()>,
) -> Result<RunOutput, FederationError> {
    cfg.validate()?;
    let want = (cfg.encoder.width, cfg.encoder.height, cfg.encoder.channels);
    for dims in [train.image_dims(), probe.image_dims()]
        .into_iter()
        .flatten()
    {
        if dims != want {
            return Err(FederationError::Config(format!(
                "images are {dims:?} but the encoder expects {want:?}"
            )));
        }
    }
    let shards = partition(
        train,
        &cfg.partition,
        derive_seed(seed, 0, 0, Purpose::Partition),
    )?;
    if let Some(s) = shards.iter().find(|s| s.len() < 2) {
        return Err(FederationError::Config(format!(
            "vehicle {} holds {} images",
            s.owner,
            s.len()
        )));
    }
    let mut global = init_global(&cfg.encoder, seed);
    let mut queue = KeyQueue::new(cfg.round.fedco_queue, cfg.encoder.embed_dim);
    let rounds = cfg.round.max_rounds;
    let mut records = Vec::with_capacity(rounds);
    let mut durations = Vec::with_capacity(rounds);

    for r in 1..=rounds {
        let start = Instant::now();
        let record = run_round(
            cfg,
            strategy,
            seed,
            r,
            train,
            &shards,
            probe,
            &mut global,
            &mut queue,
        )
        .map_err(|e| FederationError::Round {
            round: r,
            source: Box::new(e),
        })?;
        sink(&record)?;
        records.push(record);
        durations.push(start.elapsed());
    }
    Ok(RunOutput {
        records,
        global,
        durations,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_round(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
    r: usize,
    train: &Dataset,
    shards: &[Shard],
    probe: &ProbeSet,
    global: &mut ParamVector,
    queue: &mut KeyQueue,
) -> Result<RoundRecord, FederationError> {
    let rc = &cfg.round;
    let lr = cosine_lr(r - 1, rc.max_rounds, cfg.sgd.lr0, cfg.sgd.lr_min());
    let vehicles = select_vehicles(
        cfg.partition.n_vehicles,
        rc.vehicles_per_round,
        r,
        seed,
        &cfg.mobility,
        &cfg.camera,
    )?;

    let snapshot = &*queue;
    let current = &*global;
    let trained: Vec<Trained> = vehicles
        .par_iter()
        .map(|v| -> Result<Trained, FederationError> {
            let images: Vec<&Image> = shards[v.id].images(train);
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, v.id as u64, r as u64, Purpose::Train));
            if strategy == Strategy::Fedco {
                let mc = MocoConfig {
                    epochs: rc.local_epochs,
                    batch_size: rc.batch_size,
                    tau: cfg.loss.tau_alpha,
                    momentum: rc.moco_momentum,
                    keys_per_upload: rc.fedco_batch,
                    sgd: cfg.sgd,
                };
                let out = moco_local_train(
                    current,
                    &cfg.encoder,
                    &images,
                    v.blur,
                    snapshot,
                    &mc,
                    lr,
                    &mut rng,
                )?;
                Ok(Trained {
                    params: out.params,
                    loss: out.epoch_losses.last().copied().unwrap_or(f64::NAN),
                    keys: out.keys,
                })
            } else {
                let lc = LocalTrainConfig {
                    epochs: rc.local_epochs,
                    batch_size: rc.batch_size,
                    loss: cfg.loss,
                    sgd: cfg.sgd,
                };
                let out = local_train(current, &cfg.encoder, &images, v.blur, &lc, lr, &mut rng)?;
                Ok(Trained {
                    params: out.params,
                    loss: out.epoch_losses.last().copied().unwrap_or(f64::NAN),
                    keys: Vec::new(),
                })
            }
        })
        .collect::<Result<_, _>>()?;

    let params: Vec<ParamVector> = trained.iter().map(|t| t.params.clone()).collect();
    let mut skipped = false;
    let agg = match strategy {
        Strategy::Flsimco => {
            let blurs: Vec<_> = vehicles.iter().map(|v| v.blur).collect();
            aggregate_flsimco(&params, &blurs, rc.raw_weights)?
        }
        Strategy::Fedavg => aggregate_fedavg(&params)?,
        Strategy::Discard => {
            let velocities: Vec<_> = vehicles.iter().map(|v| v.velocity).collect();
            match aggregate_discard(&params, &velocities, rc.discard_threshold) {
                Err(FederationError::NoSurvivors { threshold }) => {
                    log::warn!("round {r}: all {} vehicles above {threshold} m/s; keeping the previous global model", vehicles.len());
                    skipped = true;
                    Aggregate {
                        params: global.clone(),
                        weights: vec![0.0; params.len()],
                    }
                }
                other => other?,
            }
        }
        Strategy::Fedco => {
            for t in &trained {
                queue.extend(t.keys.iter().cloned())?;
            }
            aggregate_fedavg(&params)?
        }
    };
    *global = agg.params;

    let top1 = if r.is_multiple_of(cfg.probe.stride) || r == rc.max_rounds {
        Some(knn_top1(global, &cfg.encoder, probe, cfg.probe.k)?)
    } else {
        None
    };
    let local_losses: Vec<f64> = trained.iter().map(|t| t.loss).collect();
    let mean_local_loss = local_losses.iter().sum::<f64>() / local_losses.len() as f64;
    log::info!("{strategy} seed {seed} round {r}: loss {mean_local_loss:.5} top1 {top1:?}");
    Ok(RoundRecord {
        strategy,
        seed,
        round: r,
        lr,
        vehicle_ids: vehicles.iter().map(|v| v.id).collect(),
        velocities: vehicles.iter().map(|v| v.velocity.0).collect(),
        blurs: vehicles.iter().map(|v| v.blur.0).collect(),
        local_losses,
        mean_local_loss,
        weights: agg.weights,
        top1,
        skipped,
    })
}
