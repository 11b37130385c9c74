//! Labeled spike-train datasets, the synthetic generator, splitting and
//! target encoding.

mod generate;
mod io;

use std::collections::HashMap;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::spikes::SpikeTrain;

pub use generate::{generate_family, GeneratorConfig};
pub use io::{
    decode_dataset, encode_dataset, fingerprint, load_dataset, save_dataset, FORMAT_VERSION,
};

/// Category identifier. The position of an id in
/// [`LabeledDataset::categories`] is its output-neuron index.
pub type CategoryId = u32;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sample {sample}: {msg}")]
    Shape { sample: usize, msg: String },
    #[error("sample {sample} has label {label} which is not a dataset category")]
    UnknownLabel { sample: usize, label: CategoryId },
    #[error("duplicate category {0}")]
    DuplicateCategory(CategoryId),
    #[error("category {category} has {count} samples; stratified split needs at least 2")]
    Stratification { category: CategoryId, count: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header at byte {offset}: {msg}")]
    MalformedHeader { offset: usize, msg: String },
    #[error("unsupported format version {found} at byte {offset} (expected {expected})")]
    VersionMismatch {
        offset: usize,
        found: u64,
        expected: u64,
    },
    #[error("truncated sample block at byte {offset}: {msg}")]
    Truncated { offset: usize, msg: String },
    #[error("malformed sample record at byte {offset}: {msg}")]
    MalformedSample { offset: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub channels: Vec<SpikeTrain>,
    pub label: CategoryId,
}

impl LabeledSample {
    /// Per-channel spike counts.
    pub fn spike_counts(&self) -> Vec<usize> {
        self.channels.iter().map(SpikeTrain::count_ones).collect()
    }
}

/// A set of samples sharing `(d, T)`, with an ordered category list.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<LabeledSample>,
    categories: Vec<CategoryId>,
    label_index: Vec<usize>,
    channels: usize,
    steps: usize,
    dt_ms: f64,
}

impl LabeledDataset {
    pub fn new(
        samples: Vec<LabeledSample>,
        categories: Vec<CategoryId>,
        channels: usize,
        steps: usize,
        dt_ms: f64,
    ) -> Result<Self, DatasetError> {
        if !(dt_ms.is_finite() && dt_ms > 0.0) {
            return Err(DatasetError::Config(format!(
                "dt_ms must be > 0, got {dt_ms}"
            )));
        }
        let mut position = HashMap::with_capacity(categories.len());
        for (idx, &c) in categories.iter().enumerate() {
            if position.insert(c, idx).is_some() {
                return Err(DatasetError::DuplicateCategory(c));
            }
        }
        let mut label_index = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.channels.len() != channels {
                return Err(DatasetError::Shape {
                    sample: i,
                    msg: format!("{} channels, expected {channels}", s.channels.len()),
                });
            }
            if let Some(k) = s.channels.iter().position(|c| c.len() != steps) {
                return Err(DatasetError::Shape {
                    sample: i,
                    msg: format!(
                        "channel {k} has length {}, expected {steps}",
                        s.channels[k].len()
                    ),
                });
            }
            match position.get(&s.label) {
                Some(&idx) => label_index.push(idx),
                None => {
                    return Err(DatasetError::UnknownLabel {
                        sample: i,
                        label: s.label,
                    })
                }
            }
        }
        Ok(Self {
            samples,
            categories,
            label_index,
            channels,
            steps,
            dt_ms,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn categories(&self) -> &[CategoryId] {
        &self.categories
    }

    /// Channel count `d`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Time steps per train `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Output index of each sample's label, in sample order.
    pub fn label_indices(&self) -> &[usize] {
        &self.label_index
    }

    /// Number of samples per category, in category order.
    pub fn category_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.categories.len()];
        for &idx in &self.label_index {
            counts[idx] += 1;
        }
        counts
    }

    fn select(&self, keep: &[usize]) -> Self {
        Self {
            samples: keep.iter().map(|&i| self.samples[i].clone()).collect(),
            categories: self.categories.clone(),
            label_index: keep.iter().map(|&i| self.label_index[i]).collect(),
            channels: self.channels,
            steps: self.steps,
            dt_ms: self.dt_ms,
        }
    }
}

/// Datasets of strictly growing category sets, each containing every sample
/// of its predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedFamily {
    stages: Vec<LabeledDataset>,
}

impl NestedFamily {
    pub fn new(stages: Vec<LabeledDataset>) -> Result<Self, DatasetError> {
        for (k, pair) in stages.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.categories.len() <= a.categories.len()
                || b.categories[..a.categories.len()] != a.categories[..]
            {
                return Err(DatasetError::Config(format!(
                    "stage {} categories do not strictly extend stage {k}",
                    k + 1
                )));
            }
            if b.len() <= a.len() || a.samples.iter().any(|s| !b.samples.contains(s)) {
                return Err(DatasetError::Config(format!(
                    "stage {k} samples are not a strict subset of stage {}",
                    k + 1
                )));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[LabeledDataset] {
        &self.stages
    }

    pub fn into_stages(self) -> Vec<LabeledDataset> {
        self.stages
    }
}

/// Stratified split. Each category is shuffled with its own stream of
/// `seed`, so the split of a category does not depend on which other
/// categories are present: splitting nested stages yields nested splits.
pub fn split_train_test(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::Config(format!(
            "test_fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ds.categories.len()];
    for (i, &idx) in ds.label_index.iter().enumerate() {
        members[idx].push(i);
    }
    let mut is_test = vec![false; ds.len()];
    for (c, indices) in members.iter_mut().enumerate() {
        let category = ds.categories[c];
        let count = indices.len();
        if count < 2 {
            return Err(DatasetError::Stratification { category, count });
        }
        let n_test = ((count as f64 * test_fraction).round() as usize).clamp(1, count - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(category));
        indices.shuffle(&mut rng);
        for &i in &indices[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| is_test[i]);
    Ok((ds.select(&train), ds.select(&test)))
}

/// One-hot target table, `N x m`, columns in category order.
pub fn encode_targets(ds: &LabeledDataset) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(ds.len(), ds.categories.len());
    for (i, &idx) in ds.label_index.iter().enumerate() {
        f[(i, idx)] = 1.0;
    }
    f
}
