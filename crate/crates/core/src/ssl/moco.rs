//! Momentum-contrast local training used by the FedCo baseline.
//!
//! A key encoder trails the query encoder as an exponential moving average.
//! Negatives come from a queue of keys shared through the roadside unit.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{bind_params, forward, image_batch};
use super::loss::{off_diagonal_mask, weighted_info_nce};
use super::optim::{Sgd, SgdConfig};
use super::train::{batches, flatten_grads, make_views};
use super::{EncoderConfig, ParamVector, SslError};
use crate::imaging::{apply_motion_blur, BlurLevel, Image};
use crate::numerics::{Graph, Tensor};

/// Fixed-capacity FIFO of unit-norm keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyQueue {
    capacity: usize,
    dim: usize,
    keys: VecDeque<Vec<f64>>,
}

impl KeyQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            keys: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends keys, evicting the oldest beyond capacity.
    pub fn extend<I: IntoIterator<Item = Vec<f64>>>(&mut self, keys: I) -> Result<(), SslError> {
        for k in keys {
            if k.len() != self.dim {
                return Err(SslError::Shape(format!(
                    "key of length {} in a queue of dimension {}",
                    k.len(),
                    self.dim
                )));
            }
            self.keys.push_back(k);
            while self.keys.len() > self.capacity {
                self.keys.pop_front();
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.keys.iter()
    }

    /// Keys as rows of a matrix, or `None` when empty.
    pub fn to_tensor(&self) -> Option<Tensor> {
        if self.keys.is_empty() {
            return None;
        }
        let data = self.keys.iter().flatten().copied().collect();
        Some(Tensor::from_raw(vec![self.keys.len(), self.dim], data))
    }
}

/// `key ← m·key + (1 − m)·query`.
pub fn momentum_update(key: &mut ParamVector, query: &ParamVector, m: f64) -> Result<(), SslError> {
    if key.len() != query.len() {
        return Err(SslError::ParamLength {
            expected: key.len(),
            got: query.len(),
        });
    }
    for (k, &q) in key.values_mut().iter_mut().zip(query.values()) {
        *k = m * *k + (1.0 - m) * q;
    }
    Ok(())
}

/// Key encoder, its momentum, and the negative-key queue.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumEncoderState {
    pub key_params: ParamVector,
    pub momentum: f64,
    pub queue: KeyQueue,
}

impl MomentumEncoderState {
    pub fn new(key_params: ParamVector, momentum: f64, queue: KeyQueue) -> Result<Self, SslError> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(SslError::Config(format!(
                "momentum must be in [0, 1], got {momentum}"
            )));
        }
        Ok(Self {
            key_params,
            momentum,
            queue,
        })
    }

    pub fn update(&mut self, query: &ParamVector) -> Result<(), SslError> {
        momentum_update(&mut self.key_params, query, self.momentum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MocoConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    /// Key-encoder momentum `m`.
    pub momentum: f64,
    /// Most recent keys uploaded per vehicle.
    pub keys_per_upload: usize,
    pub sgd: SgdConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MocoOutcome {
    pub params: ParamVector,
    pub key_params: ParamVector,
    pub epoch_losses: Vec<f64>,
    /// Keys from the final steps, oldest first.
    pub keys: Vec<Vec<f64>>,
}

/// Local MoCo training from `global`. Queries use `π1`, keys use `π2`
/// through the key encoder. Negatives are the snapshot `queue`; while it is
/// still empty the other keys of the batch stand in.
#[allow(clippy::too_many_arguments)]
pub fn moco_local_train<R: Rng + ?Sized>(
    global: &ParamVector,
    enc: &EncoderConfig,
    shard: &[&Image],
    blur: BlurLevel,
    queue: &KeyQueue,
    cfg: &MocoConfig,
    lr: f64,
    rng: &mut R,
) -> Result<MocoOutcome, SslError> {
    if shard.len() < 2 {
        return Err(SslError::TooFewImages(shard.len()));
    }
    let blurred: Vec<Image> = shard
        .iter()
        .map(|img| apply_motion_blur(img, blur))
        .collect();
    let mut params = global.clone();
    let mut key_params = global.clone();
    let mut opt = Sgd::new(cfg.sgd, params.len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut recent: VecDeque<Vec<f64>> = VecDeque::new();
    let queue_tensor = queue.to_tensor();

    for _ in 0..cfg.epochs {
        let plan = batches(blurred.len(), cfg.batch_size, rng);
        let mut total = 0.0;
        for batch in &plan {
            let imgs: Vec<&Image> = batch.iter().map(|&i| &blurred[i]).collect();
            let (v1, v2) = make_views(&imgs, rng);

            let mut g = Graph::new();
            let qvars = bind_params(&mut g, &params, true)?;
            let kvars = bind_params(&mut g, &key_params, false)?;
            let x1 = g.constant(image_batch(enc, &v1.iter().collect::<Vec<_>>())?)?;
            let x2 = g.constant(image_batch(enc, &v2.iter().collect::<Vec<_>>())?)?;
            let q = forward(&mut g, enc, &qvars, x1)?;
            let k = forward(&mut g, enc, &kvars, x2)?;
            let ones = vec![1.0; imgs.len()];
            let loss = match &queue_tensor {
                Some(t) => {
                    let negs = g.constant(t.clone())?;
                    weighted_info_nce(&mut g, q, k, negs, None, cfg.tau, &ones)?
                }
                None => {
                    let mask = off_diagonal_mask(imgs.len());
                    weighted_info_nce(&mut g, q, k, k, Some(&mask), cfg.tau, &ones)?
                }
            };
            let grads = g.backward(loss)?;
            total += g.value(loss).item().expect("scalar loss");
            let keys = g.value(k);
            for r in 0..keys.rows() {
                recent.push_back(keys.row(r).to_vec());
                if recent.len() > cfg.keys_per_upload {
                    recent.pop_front();
                }
            }
            let flat = flatten_grads(&grads, &qvars, params.len());
            opt.step(&mut params, &flat, lr)?;
            momentum_update(&mut key_params, &params, cfg.momentum)?;
        }
        epoch_losses.push(total / plan.len() as f64);
    }
    Ok(MocoOutcome {
        params,
        key_params,
        epoch_losses,
        keys: recent.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::ssl::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn enc() -> EncoderConfig {
        EncoderConfig {
            width: 6,
            height: 6,
            channels: 3,
            hidden: vec![16],
            embed_dim: 8,
            activation: Activation::Tanh,
        }
    }

    fn cfg(momentum: f64) -> MocoConfig {
        MocoConfig {
            epochs: 3,
            batch_size: 4,
            tau: 0.2,
            momentum,
            keys_per_upload: 5,
            sgd: SgdConfig {
                lr0: 0.05,
                ..SgdConfig::default()
            },
        }
    }

    #[test]
    fn queue_is_fifo_with_capacity() {
        let mut q = KeyQueue::new(3, 2);
        assert!(q.to_tensor().is_none());
        q.extend((0..5).map(|i| vec![i as f64, 0.0])).unwrap();
        assert_eq!(q.len(), 3);
        let firsts: Vec<f64> = q.iter().map(|k| k[0]).collect();
        assert_eq!(firsts, vec![2.0, 3.0, 4.0]);
        assert_eq!(q.to_tensor().unwrap().shape(), &[3, 2]);
        assert!(q.extend([vec![1.0]]).is_err());
    }

    #[test]
    fn momentum_update_blends() {
        let cfg = enc();
        let mut k = cfg.init_params(0);
        let q = cfg.init_params(1);
        let k0 = k.clone();
        momentum_update(&mut k, &q, 0.99).unwrap();
        for ((a, b), c) in k.values().iter().zip(q.values()).zip(k0.values()) {
            assert!((a - (0.99 * c + 0.01 * b)).abs() < 1e-15);
        }
        momentum_update(&mut k, &q, 0.0).unwrap();
        assert_eq!(k, q);
    }

    #[test]
    fn state_update_edges() {
        let cfg = enc();
        let q = cfg.init_params(1);
        let mut frozen =
            MomentumEncoderState::new(cfg.init_params(0), 1.0, KeyQueue::new(4, 8)).unwrap();
        frozen.update(&q).unwrap();
        assert_eq!(frozen.key_params, cfg.init_params(0));
        assert!(MomentumEncoderState::new(q, 1.5, KeyQueue::new(4, 8)).is_err());
    }

    #[test]
    fn zero_momentum_key_tracks_query() {
        let d = gen_synthetic(2, 5, 6, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let p = enc().init_params(0);
        let q = KeyQueue::new(16, 8);
        let out = moco_local_train(
            &p,
            &enc(),
            &imgs,
            BlurLevel(1.0),
            &q,
            &cfg(0.0),
            0.05,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(out.key_params, out.params);
        assert_eq!(out.keys.len(), 5);
        assert_eq!(out.epoch_losses.len(), 3);
    }

    #[test]
    fn uses_queue_when_available() {
        let d = gen_synthetic(2, 5, 6, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let p = enc().init_params(0);
        let empty = KeyQueue::new(16, 8);
        let mut full = KeyQueue::new(16, 8);
        let mut unit = vec![0.0; 8];
        unit[0] = 1.0;
        full.extend(std::iter::repeat_n(unit, 4)).unwrap();
        let run = |q: &KeyQueue| {
            moco_local_train(
                &p,
                &enc(),
                &imgs,
                BlurLevel(0.0),
                q,
                &cfg(0.99),
                0.05,
                &mut ChaCha8Rng::seed_from_u64(2),
            )
            .unwrap()
        };
        let a = run(&empty);
        let b = run(&full);
        assert_ne!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a, run(&empty));
    }
}
