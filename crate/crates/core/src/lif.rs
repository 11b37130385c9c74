//! Leaky integrate-and-fire neuron simulation.
//!
//! The recurrence, per time step `t = 1..T`:
//!
//! ```text
//! i(t) = exp(-dt/tau_syn) * i(t-1) + w . x(t) + v * s(t-1)
//! u(t) = exp(-dt/tau_mem) * u(t-1) + i(t-1) - s(t-1)
//! s(t) = 1 if u(t) >= theta else 0
//! ```
//!
//! The membrane update reads the *previous* synaptic current and spike, and
//! reset is by subtraction of the previous spike.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spikes::SpikeTrain;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifError {
    #[error("invalid LIF parameters: {0}")]
    InvalidParams(String),
    #[error("input shape mismatch: expected {expected} channels, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("channel {channel} has length {got}, expected {expected}")]
    RaggedInput {
        channel: usize,
        expected: usize,
        got: usize,
    },
    #[error("spike train is empty")]
    EmptyTrain,
}

/// Shared neuron constants. Times are in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifParams {
    pub dt: f64,
    pub tau_syn: f64,
    pub tau_mem: f64,
    pub theta: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            dt: 1.0,
            tau_syn: 5.0,
            tau_mem: 10.0,
            theta: 1.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<(), LifError> {
        let fields = [
            ("dt", self.dt),
            ("tau_syn", self.tau_syn),
            ("tau_mem", self.tau_mem),
            ("theta", self.theta),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(LifError::InvalidParams(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        let (syn, mem) = self.decays();
        if !(syn > 0.0 && syn < 1.0 && mem > 0.0 && mem < 1.0) {
            return Err(LifError::InvalidParams(format!(
                "decay factors must lie in (0,1), got syn={syn} mem={mem}"
            )));
        }
        Ok(())
    }

    /// `(exp(-dt/tau_syn), exp(-dt/tau_mem))`.
    #[inline]
    pub fn decays(&self) -> (f64, f64) {
        (
            (-self.dt / self.tau_syn).exp(),
            (-self.dt / self.tau_mem).exp(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeuronState {
    pub i: f64,
    pub u: f64,
    pub s_prev: u8,
}

/// Advances one neuron by one step.
///
/// `drive` is the full synaptic input for this step, i.e. the caller has
/// already added the self-feedback term `v * s_prev`.
pub fn lif_step(state: NeuronState, drive: f64, params: &LifParams) -> (NeuronState, u8) {
    let (syn, mem) = params.decays();
    step_with_decays(state, drive, syn, mem, params.theta)
}

#[inline(always)]
fn step_with_decays(
    state: NeuronState,
    drive: f64,
    syn_decay: f64,
    mem_decay: f64,
    theta: f64,
) -> (NeuronState, u8) {
    let i_new = syn_decay * state.i + drive;
    let u_new = mem_decay * state.u + state.i - f64::from(state.s_prev);
    let spike = u8::from(u_new >= theta);
    (
        NeuronState {
            i: i_new,
            u: u_new,
            s_prev: spike,
        },
        spike,
    )
}

/// Runs a neuron with input weights `w` and self-feedback `v` over a
/// `d`-channel input block from the zero state.
pub fn simulate_neuron(
    x: &[SpikeTrain],
    w: &[f64],
    v: f64,
    params: &LifParams,
) -> Result<SpikeTrain, LifError> {
    if x.len() != w.len() {
        return Err(LifError::ShapeMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    let steps = x.first().map_or(0, SpikeTrain::len);
    for (channel, train) in x.iter().enumerate() {
        if train.len() != steps {
            return Err(LifError::RaggedInput {
                channel,
                expected: steps,
                got: train.len(),
            });
        }
    }
    Ok(simulate_unchecked(x, steps, w, v, params))
}

/// Like [`simulate_neuron`] but returns only the spike count.
pub(crate) fn spike_count_unchecked(
    x: &[SpikeTrain],
    steps: usize,
    w: &[f64],
    v: f64,
    params: &LifParams,
) -> usize {
    let (syn, mem) = params.decays();
    let mut state = NeuronState::default();
    let mut count = 0;
    for t in 0..steps {
        let drive = weighted_input(x, w, t) + v * f64::from(state.s_prev);
        let (next, spike) = step_with_decays(state, drive, syn, mem, params.theta);
        state = next;
        count += spike as usize;
    }
    count
}

fn simulate_unchecked(
    x: &[SpikeTrain],
    steps: usize,
    w: &[f64],
    v: f64,
    params: &LifParams,
) -> SpikeTrain {
    let (syn, mem) = params.decays();
    let mut state = NeuronState::default();
    let mut out = SpikeTrain::zeros(steps);
    for t in 0..steps {
        let drive = weighted_input(x, w, t) + v * f64::from(state.s_prev);
        let (next, spike) = step_with_decays(state, drive, syn, mem, params.theta);
        state = next;
        if spike == 1 {
            out.set(t, true);
        }
    }
    out
}

// Channels are summed in index order; silent channels contribute exactly zero.
#[inline]
fn weighted_input(x: &[SpikeTrain], w: &[f64], t: usize) -> f64 {
    let mut acc = 0.0;
    for (train, &wk) in x.iter().zip(w) {
        if train.get(t) {
            acc += wk;
        }
    }
    acc
}

/// Mean firing rate, `popcount / T`.
pub fn rate_feature(s: &SpikeTrain) -> Result<f64, LifError> {
    if s.is_empty() {
        return Err(LifError::EmptyTrain);
    }
    Ok(s.count_ones() as f64 / s.len() as f64)
}
