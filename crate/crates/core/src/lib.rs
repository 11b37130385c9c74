//! Constructive spiking neural networks grown one hidden neuron at a time.
//!
//! Hidden units are leaky integrate-and-fire neurons with random input and
//! self-feedback weights. Each growth step samples a pool of candidates,
//! keeps those whose firing-rate feature certifies a geometric decrease of
//! the squared residual, recruits the best one, and refits the linear
//! readout by minimum-norm least squares. A trained network can seed
//! learning on an enlarged category set with its hidden layer frozen.

pub mod cli;
pub mod construct;
pub mod dataset;
pub mod eval;
mod fsutil;
pub mod learner;
pub mod lif;
pub mod readout;
pub mod spikes;

pub use construct::{Candidate, GrowOutcome, PruningConfig, SelectionResult};
pub use dataset::{CategoryId, GeneratorConfig, LabeledDataset, LabeledSample, NestedFamily};
pub use learner::{GrowthConfig, HiddenNeuron, Network, TerminalStatus, TrainingTrace};
pub use lif::{LifParams, NeuronState};
pub use spikes::SpikeTrain;
