use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset};
use crate::imaging::Image;

const STRIPE_AMPLITUDE: f64 = 0.25;

/// Class-textured RGB images with uniform pixel noise of amplitude 0.1.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    side: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    gen_synthetic_with_noise(classes, per_class, side, 0.1, seed)
}

/// Each class is a template of a class-specific base color plus a sinusoidal
/// stripe pattern whose orientation and frequency depend on the class.
/// Every image adds i.i.d. noise drawn uniformly from `[-noise, noise]`.
/// Images are interleaved by class: image `i` has label `i % classes`.
pub fn gen_synthetic_with_noise(
    classes: usize,
    per_class: usize,
    side: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::Synthetic(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if per_class < 1 {
        return Err(DataError::Synthetic("per_class must be at least 1".into()));
    }
    if side < 4 {
        return Err(DataError::Synthetic(format!(
            "side must be at least 4, got {side}"
        )));
    }
    if !(0.0..=0.5).contains(&noise) {
        return Err(DataError::Synthetic(format!(
            "noise {noise} outside [0, 0.5]"
        )));
    }

    let templates: Vec<Vec<f64>> = (0..classes).map(|k| template(k, classes, side)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (k, t) in templates.iter().enumerate() {
            let px = t
                .iter()
                .map(|&v| {
                    let n = if noise > 0.0 {
                        rng.random_range(-noise..=noise)
                    } else {
                        0.0
                    };
                    (v + n).clamp(0.0, 1.0)
                })
                .collect();
            images.push(Image::new(side, side, 3, px)?);
            labels.push(k);
        }
    }
    Dataset::new(images, labels, classes)
}

fn template(k: usize, classes: usize, side: usize) -> Vec<f64> {
    let base = base_color(k, classes);
    let angle = PI * k as f64 / classes as f64;
    let freq = 1.0 + (k % 3) as f64;
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut px = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 * ca + y as f64 * sa) / side as f64;
            let stripe = STRIPE_AMPLITUDE * (2.0 * PI * freq * u).sin();
            for c in base {
                px.push((c + stripe).clamp(0.0, 1.0));
            }
        }
    }
    px
}

/// Evenly spaced hues at saturation 0.6, value 0.65.
fn base_color(k: usize, classes: usize) -> [f64; 3] {
    let h = k as f64 / classes as f64;
    let (s, v) = (0.6, 0.65);
    let h6 = h * 6.0;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match h6.floor() as usize % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    }

    #[test]
    fn counts() {
        let d = gen_synthetic(4, 50, 8, 1).unwrap();
        assert_eq!(d.len(), 200);
        for idx in d.class_indices() {
            assert_eq!(idx.len(), 50);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            gen_synthetic(3, 5, 6, 9).unwrap(),
            gen_synthetic(3, 5, 6, 9).unwrap()
        );
        assert_ne!(
            gen_synthetic(3, 5, 6, 9).unwrap(),
            gen_synthetic(3, 5, 6, 10).unwrap()
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(gen_synthetic(1, 5, 8, 0).is_err());
        assert!(gen_synthetic(2, 0, 8, 0).is_err());
        assert!(gen_synthetic(2, 5, 3, 0).is_err());
    }

    fn nearest_centroid_accuracy(d: &Dataset) -> f64 {
        let dim = d.images()[0].len();
        let mut centroids = vec![vec![0.0; dim]; d.class_count()];
        for (class, idx) in d.class_indices().iter().enumerate() {
            for &i in idx {
                for (c, p) in centroids[class].iter_mut().zip(d.images()[i].pixels()) {
                    *c += p / idx.len() as f64;
                }
            }
        }
        let correct = d
            .images()
            .iter()
            .zip(d.labels())
            .filter(|(img, &l)| {
                let pred = (0..centroids.len())
                    .min_by(|&a, &b| {
                        sq_dist(img.pixels(), &centroids[a])
                            .total_cmp(&sq_dist(img.pixels(), &centroids[b]))
                    })
                    .unwrap();
                pred == l
            })
            .count();
        correct as f64 / d.len() as f64
    }

    #[test]
    fn noiseless_classes_separated_by_centroid() {
        for c in [2, 4, 10] {
            let d = gen_synthetic_with_noise(c, 5, 8, 0.0, 3).unwrap();
            assert_eq!(nearest_centroid_accuracy(&d), 1.0);
        }
    }

    #[test]
    fn noisy_classes_separated_by_centroid() {
        let d = gen_synthetic(10, 30, 8, 3).unwrap();
        assert_eq!(nearest_centroid_accuracy(&d), 1.0);
    }
}
