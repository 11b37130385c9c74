//! Fresh and experienced growth of networks, and their checkpoints.

mod checkpoint;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::construct::{grow_one, neuron_features, ConstructError, GrowOutcome, PruningConfig};
use crate::dataset::{encode_targets, fingerprint, CategoryId, LabeledDataset};
use crate::lif::{LifError, LifParams};
use crate::readout::{
    argmax, fit_output_weights, residual, FeatureTable, OutputWeights, ReadoutError, ResidualState,
};

pub use checkpoint::{
    decode_network, encode_network, load_network, save_network, CHECKPOINT_VERSION,
};

/// Relative slack allowed on the per-step residual certificate.
pub const CERTIFICATE_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset mismatch: {0}")]
    Mismatch(String),
    #[error("lineage error: {0}")]
    Lineage(String),
    #[error("no candidate neuron could be recruited on this data")]
    DegenerateData,
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Construct(#[from] ConstructError),
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error(transparent)]
    Lif(#[from] LifError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("checksum mismatch in section `{section}`")]
    Checksum { section: String },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenNeuron {
    pub w: Vec<f64>,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Fresh,
    OneLoop,
    Experienced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    TargetReached,
    Patience,
    MaxHidden,
    Saturated,
}

impl TerminalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalStatus::TargetReached => "target_reached",
            TerminalStatus::Patience => "patience",
            TerminalStatus::MaxHidden => "max_hidden",
            TerminalStatus::Saturated => "saturated",
        }
    }
}

/// One training invocation in a network's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineageRecord {
    pub kind: RunKind,
    /// SHA-256 of the canonical encoding of the training set.
    pub dataset_fingerprint: String,
    pub categories: usize,
    pub neurons_before: usize,
    pub neurons_after: usize,
    pub status: Option<TerminalStatus>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// A single-hidden-layer spiking classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    d: usize,
    lif: LifParams,
    hidden: Vec<HiddenNeuron>,
    frozen_prefix: usize,
    beta: OutputWeights,
    categories: Vec<CategoryId>,
    lineage: Vec<LineageRecord>,
}

impl Network {
    pub fn new(
        d: usize,
        lif: LifParams,
        hidden: Vec<HiddenNeuron>,
        frozen_prefix: usize,
        beta: OutputWeights,
        categories: Vec<CategoryId>,
        lineage: Vec<LineageRecord>,
    ) -> Result<Self, LearnerError> {
        lif.validate()?;
        if frozen_prefix > hidden.len() {
            return Err(LearnerError::Invariant(format!(
                "frozen prefix {frozen_prefix} exceeds {} hidden neurons",
                hidden.len()
            )));
        }
        if beta.hidden() != hidden.len() || beta.outputs() != categories.len() {
            return Err(LearnerError::Invariant(format!(
                "output weights are {}x{} for {} neurons and {} categories",
                beta.hidden(),
                beta.outputs(),
                hidden.len(),
                categories.len()
            )));
        }
        if let Some(k) = hidden.iter().position(|n| n.w.len() != d) {
            return Err(LearnerError::Invariant(format!(
                "neuron {k} has {} input weights, d = {d}",
                hidden[k].w.len()
            )));
        }
        Ok(Self {
            d,
            lif,
            hidden,
            frozen_prefix,
            beta,
            categories,
            lineage,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lif(&self) -> &LifParams {
        &self.lif
    }

    pub fn hidden(&self) -> &[HiddenNeuron] {
        &self.hidden
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden.len()
    }

    pub fn frozen_prefix(&self) -> usize {
        self.frozen_prefix
    }

    pub fn beta(&self) -> &OutputWeights {
        &self.beta
    }

    pub fn categories(&self) -> &[CategoryId] {
        &self.categories
    }

    pub fn lineage(&self) -> &[LineageRecord] {
        &self.lineage
    }

    /// `n (d + 1) + n m`: input and self-feedback weights plus output weights.
    pub fn space_complexity(&self) -> usize {
        let n = self.hidden.len();
        n * (self.d + 1) + n * self.categories.len()
    }

    /// Checks that `ds` has this network's input width and that its
    /// categories are a prefix of the network's.
    pub fn check_compatible(&self, ds: &LabeledDataset) -> Result<(), LearnerError> {
        if ds.channels() != self.d {
            return Err(LearnerError::Mismatch(format!(
                "dataset has {} channels, network expects {}",
                ds.channels(),
                self.d
            )));
        }
        let cats = ds.categories();
        if cats.len() > self.categories.len() || self.categories[..cats.len()] != cats[..] {
            return Err(LearnerError::Mismatch(format!(
                "dataset categories {cats:?} are not a prefix of network categories {:?}",
                self.categories
            )));
        }
        Ok(())
    }

    /// Rate features of every hidden neuron on `ds`, `N x n`.
    pub fn features(&self, ds: &LabeledDataset) -> Result<FeatureTable, LearnerError> {
        if ds.channels() != self.d {
            return Err(LearnerError::Mismatch(format!(
                "dataset has {} channels, network expects {}",
                ds.channels(),
                self.d
            )));
        }
        hidden_features(&self.hidden, ds, &self.lif)
    }

    /// Predicted category index (into [`Network::categories`]) per sample.
    pub fn predict(&self, ds: &LabeledDataset) -> Result<Vec<usize>, LearnerError> {
        self.check_compatible(ds)?;
        let h = self.features(ds)?;
        Ok(predict_rows(h.matrix(), &self.beta))
    }
}

fn hidden_features(
    hidden: &[HiddenNeuron],
    ds: &LabeledDataset,
    lif: &LifParams,
) -> Result<FeatureTable, LearnerError> {
    let columns = hidden
        .par_iter()
        .map(|n| neuron_features(&n.w, n.v, ds, lif))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureTable::from_columns(ds.len(), &columns))
}

fn predict_rows(h: &DMatrix<f64>, beta: &OutputWeights) -> Vec<usize> {
    if beta.hidden() == 0 {
        return vec![0; h.nrows()];
    }
    let out = h * beta.matrix();
    out.row_iter()
        .map(|r| argmax(&r.iter().copied().collect::<Vec<_>>()))
        .collect()
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthConfig {
    /// Stop once training accuracy reaches this ratio.
    pub target_train_accuracy: f64,
    pub max_hidden: usize,
    /// Test evaluations without improvement before stopping.
    pub patience: usize,
    /// Added neurons between patience evaluations.
    pub eval_every: usize,
    pub pruning: PruningConfig,
    pub lif: LifParams,
    pub rng_seed: u64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            target_train_accuracy: 0.95,
            max_hidden: 200,
            patience: 10,
            eval_every: 5,
            pruning: PruningConfig::default(),
            lif: LifParams::default(),
            rng_seed: 0,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.target_train_accuracy > 0.0 && self.target_train_accuracy <= 1.0) {
            return Err(LearnerError::Config(format!(
                "target_train_accuracy must lie in (0,1], got {}",
                self.target_train_accuracy
            )));
        }
        if self.max_hidden == 0 || self.patience == 0 || self.eval_every == 0 {
            return Err(LearnerError::Config(
                "max_hidden, patience and eval_every must be >= 1".into(),
            ));
        }
        self.pruning.validate()?;
        self.lif.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub neuron_count: usize,
    pub sq_norm: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub elapsed_seconds: f64,
    pub sigma_used: f64,
    pub retries_used: u32,
}

/// Per-step history of one growth run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingTrace {
    pub kind: RunKind,
    pub initial_neurons: usize,
    pub initial_sq_norm: f64,
    pub initial_train_accuracy: f64,
    pub initial_test_accuracy: f64,
    pub records: Vec<StepRecord>,
    pub status: TerminalStatus,
    /// Neuron count of the returned (best-test-accuracy) network.
    pub best_neurons: usize,
    pub best_test_accuracy: f64,
}

impl TrainingTrace {
    pub fn final_neurons(&self) -> usize {
        self.records
            .last()
            .map_or(self.initial_neurons, |r| r.neuron_count)
    }

    pub fn added_neurons(&self) -> usize {
        self.final_neurons() - self.initial_neurons
    }

    pub fn elapsed_seconds(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.elapsed_seconds)
    }

    pub fn final_train_accuracy(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_train_accuracy, |r| r.train_accuracy)
    }

    pub fn final_test_accuracy(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_test_accuracy, |r| r.test_accuracy)
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.records {
            r.elapsed_seconds = 0.0;
        }
        t
    }
}

fn check_pair(train: &LabeledDataset, test: &LabeledDataset) -> Result<(), LearnerError> {
    if train.is_empty() || test.is_empty() {
        return Err(LearnerError::Mismatch(
            "train and test sets must be nonempty".into(),
        ));
    }
    if train.channels() != test.channels()
        || train.steps() != test.steps()
        || train.categories() != test.categories()
    {
        return Err(LearnerError::Mismatch(format!(
            "train (d={}, T={}, {} categories) and test (d={}, T={}, {} categories) differ",
            train.channels(),
            train.steps(),
            train.categories().len(),
            test.channels(),
            test.steps(),
            test.categories().len()
        )));
    }
    Ok(())
}

/// Grows a network from zero hidden neurons.
pub fn train_fresh(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &GrowthConfig,
) -> Result<(Network, TrainingTrace), LearnerError> {
    cfg.validate()?;
    check_pair(train, test)?;
    let start = Growth::new(Vec::new(), 0, cfg.lif, train, test, RunKind::Fresh)?;
    start.run(cfg, Vec::new())
}

/// Freezes the seed's hidden layer and refits the readout on `enlarged`.
pub fn one_loop_adapt(seed: &Network, enlarged: &LabeledDataset) -> Result<Network, LearnerError> {
    check_lineage(seed, enlarged)?;
    let h = seed.features(enlarged)?;
    let f = encode_targets(enlarged);
    let beta = fit_or_zero(&h, &f)?;
    let predictions = predict_rows(h.matrix(), &beta);
    let mut lineage = seed.lineage.clone();
    lineage.push(LineageRecord {
        kind: RunKind::OneLoop,
        dataset_fingerprint: fingerprint(enlarged),
        categories: enlarged.categories().len(),
        neurons_before: seed.n_hidden(),
        neurons_after: seed.n_hidden(),
        status: None,
        train_accuracy: accuracy(&predictions, enlarged.label_indices()),
        test_accuracy: None,
    });
    Network::new(
        seed.d,
        seed.lif,
        seed.hidden.clone(),
        seed.n_hidden(),
        beta,
        enlarged.categories().to_vec(),
        lineage,
    )
}

/// One-loop adaptation followed by further growth on the enlarged data.
/// The seed's neurons are never modified.
pub fn train_experienced(
    seed: &Network,
    enlarged_train: &LabeledDataset,
    enlarged_test: &LabeledDataset,
    cfg: &GrowthConfig,
) -> Result<(Network, TrainingTrace), LearnerError> {
    cfg.validate()?;
    check_lineage(seed, enlarged_train)?;
    check_pair(enlarged_train, enlarged_test)?;
    let frozen = seed.n_hidden();
    let start = Growth::new(
        seed.hidden.clone(),
        frozen,
        seed.lif,
        enlarged_train,
        enlarged_test,
        RunKind::Experienced,
    )?;
    start.run(cfg, seed.lineage.clone())
}

fn check_lineage(seed: &Network, enlarged: &LabeledDataset) -> Result<(), LearnerError> {
    if enlarged.channels() != seed.d {
        return Err(LearnerError::Lineage(format!(
            "enlarged dataset has {} channels, seed network has {}",
            enlarged.channels(),
            seed.d
        )));
    }
    let old = &seed.categories;
    let new = enlarged.categories();
    if new.len() < old.len() || new[..old.len()] != old[..] {
        return Err(LearnerError::Lineage(format!(
            "enlarged categories {new:?} do not start with the seed categories {old:?}"
        )));
    }
    Ok(())
}

fn fit_or_zero(h: &FeatureTable, f: &DMatrix<f64>) -> Result<OutputWeights, LearnerError> {
    if h.cols() == 0 {
        Ok(OutputWeights::zeros(0, f.ncols()))
    } else {
        Ok(fit_output_weights(h.matrix(), f)?)
    }
}

struct Growth<'a> {
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
    lif: LifParams,
    kind: RunKind,
    hidden: Vec<HiddenNeuron>,
    frozen_prefix: usize,
    frozen_snapshot: Vec<HiddenNeuron>,
    h_train: FeatureTable,
    h_test: FeatureTable,
    targets: DMatrix<f64>,
    beta: OutputWeights,
    residual: ResidualState,
    train_accuracy: f64,
    test_accuracy: f64,
}

impl<'a> Growth<'a> {
    fn new(
        hidden: Vec<HiddenNeuron>,
        frozen_prefix: usize,
        lif: LifParams,
        train: &'a LabeledDataset,
        test: &'a LabeledDataset,
        kind: RunKind,
    ) -> Result<Self, LearnerError> {
        let h_train = hidden_features(&hidden, train, &lif)?;
        let h_test = hidden_features(&hidden, test, &lif)?;
        let targets = encode_targets(train);
        let beta = fit_or_zero(&h_train, &targets)?;
        let residual = ResidualState::from_matrix(&targets - h_train.matrix() * beta.matrix());
        let mut g = Self {
            train,
            test,
            lif,
            kind,
            frozen_snapshot: hidden[..frozen_prefix].to_vec(),
            hidden,
            frozen_prefix,
            h_train,
            h_test,
            targets,
            beta,
            residual,
            train_accuracy: 0.0,
            test_accuracy: 0.0,
        };
        g.score();
        Ok(g)
    }

    fn score(&mut self) {
        let p_train = predict_rows(self.h_train.matrix(), &self.beta);
        let p_test = predict_rows(self.h_test.matrix(), &self.beta);
        self.train_accuracy = accuracy(&p_train, self.train.label_indices());
        self.test_accuracy = accuracy(&p_test, self.test.label_indices());
    }

    fn run(
        mut self,
        cfg: &GrowthConfig,
        mut lineage: Vec<LineageRecord>,
    ) -> Result<(Network, TrainingTrace), LearnerError> {
        let clock = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let initial_neurons = self.hidden.len();
        let initial_sq_norm = self.residual.sq_norm;
        let initial_train_accuracy = self.train_accuracy;
        let initial_test_accuracy = self.test_accuracy;

        let mut best = (self.test_accuracy, self.hidden.len(), self.beta.clone());
        let mut best_checkpoint = self.test_accuracy;
        let mut stale = 0usize;
        let mut records = Vec::new();

        let status = loop {
            if self.train_accuracy >= cfg.target_train_accuracy || self.residual.sq_norm == 0.0 {
                break TerminalStatus::TargetReached;
            }
            if self.hidden.len() >= cfg.max_hidden {
                break TerminalStatus::MaxHidden;
            }
            let outcome = grow_one(
                &self.residual.e,
                self.train,
                &cfg.pruning,
                &self.lif,
                &mut rng,
            )?;
            let (selection, retries) = match outcome {
                GrowOutcome::Added { selection, retries } => (selection, retries),
                GrowOutcome::Saturated { .. } => {
                    if self.hidden.is_empty() {
                        return Err(LearnerError::DegenerateData);
                    }
                    break TerminalStatus::Saturated;
                }
            };
            let previous = self.residual.sq_norm;
            let test_column = neuron_features(
                &selection.winner.w,
                selection.winner.v,
                self.test,
                &self.lif,
            )?;
            self.hidden.push(HiddenNeuron {
                w: selection.winner.w.clone(),
                v: selection.winner.v,
            });
            self.h_train.push_column(&selection.feature);
            self.h_test.push_column(&test_column);
            self.beta = fit_output_weights(self.h_train.matrix(), &self.targets)?;
            self.residual = residual(self.h_train.matrix(), &self.beta, &self.targets)?;
            self.score();

            let current = self.residual.sq_norm;
            if !(current < previous
                && current <= selection.sigma * previous * (1.0 + CERTIFICATE_RTOL))
            {
                return Err(LearnerError::Invariant(format!(
                    "residual {current} after {} neurons does not certify sigma {} against {previous}",
                    self.hidden.len(),
                    selection.sigma
                )));
            }
            records.push(StepRecord {
                neuron_count: self.hidden.len(),
                sq_norm: current,
                train_accuracy: self.train_accuracy,
                test_accuracy: self.test_accuracy,
                elapsed_seconds: clock.elapsed().as_secs_f64(),
                sigma_used: selection.sigma,
                retries_used: retries,
            });
            if self.test_accuracy > best.0 {
                best = (self.test_accuracy, self.hidden.len(), self.beta.clone());
            }
            let added = self.hidden.len() - initial_neurons;
            if added.is_multiple_of(cfg.eval_every)
                && self.train_accuracy < cfg.target_train_accuracy
            {
                if self.test_accuracy > best_checkpoint {
                    best_checkpoint = self.test_accuracy;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break TerminalStatus::Patience;
                    }
                }
            }
        };

        if self.hidden[..self.frozen_prefix] != self.frozen_snapshot[..] {
            return Err(LearnerError::Invariant(
                "frozen neurons were modified".into(),
            ));
        }

        let (best_test, best_n, best_beta) = best;
        lineage.push(LineageRecord {
            kind: self.kind,
            dataset_fingerprint: fingerprint(self.train),
            categories: self.train.categories().len(),
            neurons_before: initial_neurons,
            neurons_after: best_n,
            status: Some(status),
            train_accuracy: if best_n == initial_neurons {
                initial_train_accuracy
            } else {
                records[best_n - initial_neurons - 1].train_accuracy
            },
            test_accuracy: Some(best_test),
        });
        self.hidden.truncate(best_n);
        let network = Network::new(
            self.train.channels(),
            self.lif,
            self.hidden,
            self.frozen_prefix,
            best_beta,
            self.train.categories().to_vec(),
            lineage,
        )?;
        let trace = TrainingTrace {
            kind: self.kind,
            initial_neurons,
            initial_sq_norm,
            initial_train_accuracy,
            initial_test_accuracy,
            records,
            status,
            best_neurons: best_n,
            best_test_accuracy: best_test,
        };
        Ok((network, trace))
    }
}
