use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::imaging::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionPolicy {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSpec {
    pub policy: PartitionPolicy,
    /// Dirichlet concentration; ignored for IID.
    pub alpha: f64,
    pub n_vehicles: usize,
    pub min_per_vehicle: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            policy: PartitionPolicy::Iid,
            alpha: 0.1,
            n_vehicles: 95,
            min_per_vehicle: 520,
        }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_vehicles == 0 {
            return Err(DataError::Spec("n_vehicles must be positive".into()));
        }
        if self.min_per_vehicle == 0 {
            return Err(DataError::Spec("min_per_vehicle must be positive".into()));
        }
        if self.policy == PartitionPolicy::Dirichlet
            && !(self.alpha > 0.0 && self.alpha.is_finite())
        {
            return Err(DataError::Spec(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn check_size(&self, available: usize) -> Result<(), DataError> {
        let needed = self.n_vehicles * self.min_per_vehicle;
        if available < needed {
            return Err(DataError::Insufficient {
                needed,
                available,
                vehicles: self.n_vehicles,
                min_per_vehicle: self.min_per_vehicle,
            });
        }
        Ok(())
    }
}

/// The dataset indices held by one vehicle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub owner: usize,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The shard's images, without labels.
    pub fn images<'a>(&self, d: &'a Dataset) -> Vec<&'a Image> {
        self.indices.iter().map(|&i| &d.images()[i]).collect()
    }

    pub fn class_counts(&self, d: &Dataset) -> Vec<usize> {
        let mut counts = vec![0; d.class_count()];
        for &i in &self.indices {
            counts[d.labels()[i]] += 1;
        }
        counts
    }
}

pub fn partition(d: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<Shard>, DataError> {
    match spec.policy {
        PartitionPolicy::Iid => partition_iid(d, spec, seed),
        PartitionPolicy::Dirichlet => partition_dirichlet(d, spec, seed),
    }
}

/// Deals each class's shuffled indices round-robin over the vehicles, with
/// the dealing position carried across classes. Every image is assigned;
/// shard sizes and per-class counts differ by at most one.
pub fn partition_iid(
    d: &Dataset,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<Shard>, DataError> {
    spec.validate()?;
    spec.check_size(d.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = spec.n_vehicles;
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); v];
    let mut turn = 0usize;
    for mut idx in d.class_indices() {
        idx.shuffle(&mut rng);
        for i in idx {
            shards[turn % v].push(i);
            turn += 1;
        }
    }
    Ok(finish(shards))
}

/// Each vehicle draws class proportions from `Dirichlet(alpha·1_C)` and
/// fills a shard of `len / n_vehicles` images by sampling classes from them.
/// When a class runs out, the draw is redone over the vehicle's own
/// proportions restricted to classes that still have images; if those
/// classes carry no mass, the remaining classes are drawn uniformly.
pub fn partition_dirichlet(
    d: &Dataset,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<Shard>, DataError> {
    spec.validate()?;
    spec.check_size(d.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = d.class_count();
    let mut pools = d.class_indices();
    for p in &mut pools {
        p.shuffle(&mut rng);
    }
    let target = (d.len() / spec.n_vehicles).max(spec.min_per_vehicle);
    let gamma = Gamma::new(spec.alpha, 1.0).map_err(|e| DataError::Spec(e.to_string()))?;

    let mut shards = Vec::with_capacity(spec.n_vehicles);
    for _ in 0..spec.n_vehicles {
        let props = dirichlet(&gamma, classes, &mut rng);
        let mut shard = Vec::with_capacity(target);
        while shard.len() < target {
            let class =
                draw_class(&props, &pools, &mut rng).expect("size check guarantees images remain");
            shard.push(
                pools[class]
                    .pop()
                    .expect("class chosen among non-empty pools"),
            );
        }
        shards.push(shard);
    }
    Ok(finish(shards))
}

fn dirichlet<R: Rng>(gamma: &Gamma<f64>, k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    }
}

fn draw_class<R: Rng>(props: &[f64], pools: &[Vec<usize>], rng: &mut R) -> Option<usize> {
    let live: Vec<usize> = (0..pools.len()).filter(|&c| !pools[c].is_empty()).collect();
    if live.is_empty() {
        return None;
    }
    let mass: f64 = live.iter().map(|&c| props[c]).sum();
    if mass > 0.0 {
        let mut u = rng.random::<f64>() * mass;
        for &c in &live {
            u -= props[c];
            if u < 0.0 {
                return Some(c);
            }
        }
        // Rounding left u marginally non-negative; take the last live class
        // with mass.
        return live.iter().rev().copied().find(|&c| props[c] > 0.0);
    }
    Some(live[rng.random_range(0..live.len())])
}

fn finish(shards: Vec<Vec<usize>>) -> Vec<Shard> {
    shards
        .into_iter()
        .enumerate()
        .map(|(owner, mut indices)| {
            indices.sort_unstable();
            Shard { owner, indices }
        })
        .collect()
}

/// Fraction of a shard taken by its most frequent class.
pub fn max_class_fraction(shard: &Shard, d: &Dataset) -> f64 {
    let counts = shard.class_counts(d);
    let max = counts.iter().copied().max().unwrap_or(0);
    if shard.is_empty() {
        0.0
    } else {
        max as f64 / shard.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use std::collections::HashSet;

    fn spec(policy: PartitionPolicy, alpha: f64, n: usize, min: usize) -> PartitionSpec {
        PartitionSpec {
            policy,
            alpha,
            n_vehicles: n,
            min_per_vehicle: min,
        }
    }

    fn assert_disjoint(shards: &[Shard], n: usize) {
        let mut seen = HashSet::new();
        for s in shards {
            for &i in &s.indices {
                assert!(i < n);
                assert!(seen.insert(i), "index {i} in two shards");
            }
        }
    }

    #[test]
    fn iid_even_split() {
        let d = gen_synthetic(4, 50, 4, 0).unwrap();
        let shards = partition_iid(&d, &spec(PartitionPolicy::Iid, 0.0, 4, 10), 1).unwrap();
        assert_eq!(shards.len(), 4);
        assert_disjoint(&shards, d.len());
        for s in &shards {
            assert_eq!(s.len(), 50);
            for c in s.class_counts(&d) {
                assert!(c == 12 || c == 13, "{c}");
            }
        }
    }

    #[test]
    fn iid_class_counts_near_uniform() {
        let d = gen_synthetic(10, 37, 4, 0).unwrap();
        let shards = partition_iid(&d, &spec(PartitionPolicy::Iid, 0.0, 7, 10), 5).unwrap();
        assert_disjoint(&shards, d.len());
        let total: usize = shards.iter().map(Shard::len).sum();
        assert_eq!(total, d.len());
        let exact = 37.0 / 7.0;
        for s in &shards {
            for c in s.class_counts(&d) {
                assert!((c as f64 - exact).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn insufficient_data_names_shortfall() {
        let d = gen_synthetic(2, 10, 4, 0).unwrap();
        let err = partition_iid(&d, &spec(PartitionPolicy::Iid, 0.0, 5, 5), 0).unwrap_err();
        assert!(matches!(
            err,
            DataError::Insufficient {
                needed: 25,
                available: 20,
                ..
            }
        ));
        assert!(err.to_string().contains("short by 5"));
        let err =
            partition_dirichlet(&d, &spec(PartitionPolicy::Dirichlet, 1.0, 5, 5), 0).unwrap_err();
        assert!(matches!(err, DataError::Insufficient { .. }));
    }

    #[test]
    fn dirichlet_respects_minimum_and_disjointness() {
        let d = gen_synthetic(10, 200, 4, 0).unwrap();
        for alpha in [0.1, 1.0, 10.0] {
            for seed in 0..5 {
                let s = spec(PartitionPolicy::Dirichlet, alpha, 10, 150);
                let shards = partition_dirichlet(&d, &s, seed).unwrap();
                assert_disjoint(&shards, d.len());
                assert!(shards.iter().all(|sh| sh.len() >= 150));
            }
        }
    }

    #[test]
    fn dirichlet_requires_positive_alpha() {
        let d = gen_synthetic(2, 10, 4, 0).unwrap();
        assert!(partition_dirichlet(&d, &spec(PartitionPolicy::Dirichlet, 0.0, 2, 1), 0).is_err());
    }

    #[test]
    fn partitions_deterministic() {
        let d = gen_synthetic(5, 40, 4, 0).unwrap();
        for policy in [PartitionPolicy::Iid, PartitionPolicy::Dirichlet] {
            let s = spec(policy, 0.5, 4, 20);
            assert_eq!(partition(&d, &s, 3).unwrap(), partition(&d, &s, 3).unwrap());
        }
    }

    fn mean_max_fraction(d: &Dataset, alpha: f64, seeds: u64) -> f64 {
        let s = spec(PartitionPolicy::Dirichlet, alpha, 10, 100);
        let mut total = 0.0;
        let mut count = 0;
        for seed in 0..seeds {
            for sh in partition_dirichlet(d, &s, seed).unwrap() {
                total += max_class_fraction(&sh, d);
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn large_alpha_is_near_uniform() {
        let d = gen_synthetic(10, 200, 4, 0).unwrap();
        let m = mean_max_fraction(&d, 1e6, 50);
        assert!((m - 0.1).abs() < 0.05, "{m}");
    }

    #[test]
    fn small_alpha_is_skewed() {
        let d = gen_synthetic(10, 200, 4, 0).unwrap();
        let m = mean_max_fraction(&d, 0.1, 50);
        assert!(m > 0.5, "{m}");
    }

    #[test]
    fn paper_scale_iid_shards() {
        // 50,000 tiny images over 95 vehicles.
        let d = gen_synthetic(10, 5000, 4, 0).unwrap();
        let shards = partition_iid(&d, &PartitionSpec::default(), 0).unwrap();
        assert_eq!(shards.len(), 95);
        assert!(shards.iter().all(|s| s.len() >= 520));
    }
}
