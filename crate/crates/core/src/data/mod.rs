//! Labeled image corpora and their split into per-vehicle shards.
//!
//! Labels live on [`Dataset`] but the training path only ever receives
//! `&[Image]` views (see [`Dataset::images`] and [`Shard::images`]); the
//! evaluation probe is the only consumer of [`Dataset::labels`].

mod cifar;
mod partition;
mod synthetic;

pub use cifar::{load_cifar10, load_cifar10_test, load_record_file, write_record_file, CIFAR_SIDE};
pub use partition::{
    max_class_fraction, partition, partition_dirichlet, partition_iid, PartitionPolicy,
    PartitionSpec, Shard,
};
pub use synthetic::{gen_synthetic, gen_synthetic_with_noise};

use std::path::PathBuf;

use thiserror::Error;

use crate::imaging::{Image, ImagingError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: truncated record {record} ({got} of {expected} bytes)")]
    TruncatedRecord {
        path: PathBuf,
        record: usize,
        got: usize,
        expected: usize,
    },
    #[error("{path}: record {record} has label byte {label}, expected < {classes}")]
    BadLabel {
        path: PathBuf,
        record: usize,
        label: u8,
        classes: usize,
    },
    #[error("need at least {needed} images for {vehicles} vehicles x {min_per_vehicle}, have {available} (short by {})", needed - available)]
    Insufficient {
        needed: usize,
        available: usize,
        vehicles: usize,
        min_per_vehicle: usize,
    },
    #[error("invalid partition spec: {0}")]
    Spec(String),
    #[error("invalid synthetic dataset parameters: {0}")]
    Synthetic(String),
    #[error("images and labels differ in length ({images} vs {labels})")]
    LengthMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} not below class count {classes}")]
    LabelRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error(transparent)]
    Image(#[from] ImagingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<Image>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::LengthMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(DataError::LabelRange {
                index,
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    /// Class ids. Only the evaluation probe and the partitioner read these.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `(width, height, channels)` of the first image.
    pub fn image_dims(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(Image::dims)
    }

    /// Indices of each class, in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Subset in the order of `indices`.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}
