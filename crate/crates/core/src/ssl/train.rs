//! Local self-supervised training on one vehicle's shard.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{bind_params, forward, image_batch};
use super::loss::{dt_loss_graph, off_diagonal_mask, DtLossConfig, EmbeddingTriple};
use super::optim::{Sgd, SgdConfig};
use super::{encode, EncoderConfig, ParamVector, SslError};
use crate::imaging::{apply_motion_blur, AugmentationPolicy, BlurLevel, Image};
use crate::numerics::{Gradients, Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    /// Images per SGD step; 0 uses the whole shard.
    pub batch_size: usize,
    pub loss: DtLossConfig,
    pub sgd: SgdConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub params: ParamVector,
    /// Mean batch loss of each epoch, measured before each step.
    pub epoch_losses: Vec<f64>,
}

/// The two augmented views of every image. `π1` and `π2` draw from `rng`
/// independently but start from the same source image.
pub fn make_views<R: Rng + ?Sized>(images: &[&Image], rng: &mut R) -> (Vec<Image>, Vec<Image>) {
    let mut v1 = Vec::with_capacity(images.len());
    let mut v2 = Vec::with_capacity(images.len());
    for img in images {
        v1.push(AugmentationPolicy::PI1.draw(rng).apply(img));
        v2.push(AugmentationPolicy::PI2.draw(rng).apply(img));
    }
    (v1, v2)
}

/// Anchor `f(π1(x_i))`, positive `f(π2(x_i))`, and negatives `f(x_j)` for
/// every `j ≠ i`.
pub fn build_triples<R: Rng + ?Sized>(
    params: &ParamVector,
    cfg: &EncoderConfig,
    images: &[&Image],
    rng: &mut R,
) -> Result<Vec<EmbeddingTriple>, SslError> {
    if images.len() < 2 {
        return Err(SslError::TooFewImages(images.len()));
    }
    let (v1, v2) = make_views(images, rng);
    let anchors = encode(params, cfg, &v1.iter().collect::<Vec<_>>())?;
    let positives = encode(params, cfg, &v2.iter().collect::<Vec<_>>())?;
    let keys = encode(params, cfg, images)?;
    anchors
        .into_iter()
        .zip(positives)
        .enumerate()
        .map(|(i, (a, p))| {
            let negs = keys
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, k)| k.clone())
                .collect();
            EmbeddingTriple::new(a, p, negs)
        })
        .collect()
}

/// Concatenates the gradients of `vars` in layout order.
pub(crate) fn flatten_grads(grads: &Gradients, vars: &[Var], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    for &v in vars {
        out.extend_from_slice(grads.get(v).expect("parameter leaf has a gradient").data());
    }
    out
}

/// Dual-temperature loss of one batch of views and its gradient with
/// respect to `params`.
pub fn dt_loss_and_grad(
    params: &ParamVector,
    cfg: &EncoderConfig,
    images: &[&Image],
    view1: &[Image],
    view2: &[Image],
    loss_cfg: &DtLossConfig,
) -> Result<(f64, Vec<f64>), SslError> {
    if images.len() < 2 {
        return Err(SslError::TooFewImages(images.len()));
    }
    let mut g = Graph::new();
    let vars = bind_params(&mut g, params, true)?;
    let x1 = g.constant(image_batch(cfg, &view1.iter().collect::<Vec<_>>())?)?;
    let x2 = g.constant(image_batch(cfg, &view2.iter().collect::<Vec<_>>())?)?;
    let x0 = g.constant(image_batch(cfg, images)?)?;
    let anchors = forward(&mut g, cfg, &vars, x1)?;
    let positives = forward(&mut g, cfg, &vars, x2)?;
    let negatives = forward(&mut g, cfg, &vars, x0)?;
    let mask = off_diagonal_mask(images.len());
    let (loss, _) = dt_loss_graph(&mut g, anchors, positives, negatives, Some(&mask), loss_cfg)?;
    let grads = g.backward(loss)?;
    let value = g.value(loss).item().expect("scalar loss");
    Ok((value, flatten_grads(&grads, &vars, params.len())))
}

/// Splits `0..n` (shuffled) into batches of `batch_size`, folding a trailing
/// batch smaller than 2 into its predecessor.
pub(crate) fn batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let size = if batch_size == 0 {
        n
    } else {
        batch_size.max(2)
    };
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// Starts from `global`, blurs the shard once at `blur`, then runs
/// `epochs` passes of augment → loss → SGD.
pub fn local_train<R: Rng + ?Sized>(
    global: &ParamVector,
    enc: &EncoderConfig,
    shard: &[&Image],
    blur: BlurLevel,
    cfg: &LocalTrainConfig,
    lr: f64,
    rng: &mut R,
) -> Result<LocalOutcome, SslError> {
    if shard.len() < 2 {
        return Err(SslError::TooFewImages(shard.len()));
    }
    let blurred: Vec<Image> = shard
        .iter()
        .map(|img| apply_motion_blur(img, blur))
        .collect();
    let mut params = global.clone();
    let mut opt = Sgd::new(cfg.sgd, params.len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        let plan = batches(blurred.len(), cfg.batch_size, rng);
        for batch in &plan {
            let imgs: Vec<&Image> = batch.iter().map(|&i| &blurred[i]).collect();
            let (v1, v2) = make_views(&imgs, rng);
            let (loss, grads) = dt_loss_and_grad(&params, enc, &imgs, &v1, &v2, &cfg.loss)?;
            opt.step(&mut params, &grads, lr)?;
            total += loss;
        }
        epoch_losses.push(total / plan.len() as f64);
    }
    Ok(LocalOutcome {
        params,
        epoch_losses,
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
            hidden: vec![32],
            embed_dim: 16,
            activation: Activation::Tanh,
        }
    }

    fn train_cfg(epochs: usize) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs,
            batch_size: 0,
            loss: DtLossConfig::default(),
            sgd: SgdConfig {
                lr0: 0.06,
                ..SgdConfig::default()
            },
        }
    }

    #[test]
    fn triples_have_m_minus_one_negatives() {
        let d = gen_synthetic(2, 3, 6, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let p = enc().init_params(0);
        let t = build_triples(&p, &enc(), &imgs[..2], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(t.iter().all(|t| t.k() == 1));
        let t = build_triples(&p, &enc(), &imgs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(t.len(), 6);
        let keys = encode(&p, &enc(), &imgs).unwrap();
        for (i, tr) in t.iter().enumerate() {
            assert_eq!(tr.k(), 5);
            assert!(!tr.negatives().contains(&keys[i]));
        }
    }

    #[test]
    fn views_are_reproducible_and_keep_dims() {
        let d = gen_synthetic(2, 4, 6, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let a = make_views(&imgs, &mut ChaCha8Rng::seed_from_u64(3));
        let b = make_views(&imgs, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        for (v, src) in a.0.iter().chain(&a.1).zip(imgs.iter().cycle()) {
            assert_eq!(v.dims(), src.dims());
        }
    }

    #[test]
    fn too_few_images() {
        let d = gen_synthetic(2, 1, 6, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().take(1).collect();
        let p = enc().init_params(0);
        assert!(matches!(
            build_triples(&p, &enc(), &imgs, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(SslError::TooFewImages(1))
        ));
    }

    #[test]
    fn zero_epochs_returns_global() {
        let d = gen_synthetic(2, 4, 6, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let p = enc().init_params(0);
        let out = local_train(
            &p,
            &enc(),
            &imgs,
            BlurLevel(3.0),
            &train_cfg(0),
            0.06,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(out.params, p);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn local_training_is_deterministic() {
        let d = gen_synthetic(4, 5, 6, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let p = enc().init_params(0);
        let run = || {
            local_train(
                &p,
                &enc(),
                &imgs,
                BlurLevel(2.0),
                &train_cfg(3),
                0.06,
                &mut ChaCha8Rng::seed_from_u64(8),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batching_folds_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = batches(9, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(9, 0, &mut rng);
        assert_eq!(b.len(), 1);
        let mut all: Vec<usize> = batches(10, 3, &mut rng).concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn loss_decreases_on_synthetic_corpus() {
        let d = gen_synthetic(4, 10, 6, 0).unwrap();
        let imgs: Vec<&Image> = d.images().iter().collect();
        let mut improved = 0;
        for seed in 0..10 {
            let p = enc().init_params(seed);
            let out = local_train(
                &p,
                &enc(),
                &imgs,
                BlurLevel(0.0),
                &train_cfg(20),
                0.06,
                &mut ChaCha8Rng::seed_from_u64(100 + seed),
            )
            .unwrap();
            if out.epoch_losses.last() < out.epoch_losses.first() {
                improved += 1;
            }
        }
        assert!(improved >= 9, "{improved}/10");
    }
}
