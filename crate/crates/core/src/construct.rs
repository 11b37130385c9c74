//! Candidate recruitment: sample a pool of random hidden neurons, score each
//! by how much of the current residual its rate feature can explain, and
//! keep the best one that certifies a geometric decrease.
//!
//! For residual columns `E_q` and a candidate feature `h`, the optimal
//! single-neuron weight `<E_q,h>/<h,h>` leaves
//!
//! ```text
//! ||e_n||^2 = ||e_{n-1}||^2 - sum_q <E_q,h>^2 / <h,h>
//! ```
//!
//! so the index
//!
//! ```text
//! xi = sum_q [ <E_q,h>^2 / <h,h> - (1 - sigma) <E_q,E_q> ]
//! ```
//!
//! is non-negative exactly when `||e_n||^2 <= sigma ||e_{n-1}||^2`.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledDataset;
use crate::lif::{spike_count_unchecked, LifParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructError {
    #[error("invalid pruning configuration: {0}")]
    Config(String),
    #[error("candidate has {weights} input weights but the dataset has {channels} channels")]
    Shape { weights: usize, channels: usize },
    #[error("residual has {residual} rows but the dataset has {samples} samples")]
    ResidualShape { residual: usize, samples: usize },
    #[error("candidate feature is identically zero")]
    SilentCandidate,
    #[error("dataset has zero time steps")]
    EmptyWindow,
}

/// A randomly drawn hidden neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub w: Vec<f64>,
    pub v: f64,
    pub pool_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruningConfig {
    /// Candidates drawn per round.
    pub pool_size: usize,
    /// Weights are drawn from `[-lambda, lambda]`.
    pub lambda: f64,
    /// Initial convergence factor, in (0,1).
    pub sigma0: f64,
    /// Extra rounds tried after the first one fails.
    pub sigma_relax_steps: u32,
    /// `lambda` is multiplied by this on every extra round.
    pub lambda_growth: f64,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            pool_size: 50,
            lambda: 1.0,
            sigma0: 0.999,
            sigma_relax_steps: 8,
            lambda_growth: 1.0,
        }
    }
}

impl PruningConfig {
    pub fn validate(&self) -> Result<(), ConstructError> {
        if self.pool_size == 0 {
            return Err(ConstructError::Config("pool_size must be >= 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(ConstructError::Config(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.sigma0 > 0.0 && self.sigma0 < 1.0) {
            return Err(ConstructError::Config(format!(
                "sigma0 must lie in (0,1), got {}",
                self.sigma0
            )));
        }
        if !(self.lambda_growth.is_finite() && self.lambda_growth >= 1.0) {
            return Err(ConstructError::Config(format!(
                "lambda_growth must be >= 1, got {}",
                self.lambda_growth
            )));
        }
        Ok(())
    }

    /// `(sigma, lambda)` for round `k`: sigma relaxes halfway to 1 and lambda
    /// grows geometrically.
    pub fn round_schedule(&self, k: u32) -> (f64, f64) {
        let sigma = 1.0 - (1.0 - self.sigma0) / 2f64.powi(k as i32);
        let lambda = self.lambda * self.lambda_growth.powi(k as i32);
        (sigma, lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub winner: Candidate,
    pub xi: f64,
    /// Rate feature of the winner on every training sample.
    pub feature: Vec<f64>,
    /// `sum_q <E_q,h>^2 / <h,h>`, the squared-error drop under the optimal
    /// single-neuron weight.
    pub error_gain: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GrowOutcome {
    Added {
        selection: SelectionResult,
        retries: u32,
    },
    Saturated {
        rounds: u32,
    },
}

/// Draws `pool_size` candidates with weights uniform in `[-lambda, lambda]`.
/// Per candidate the `d` input weights are drawn first, then `v`.
pub fn sample_candidates<R: Rng + ?Sized>(
    cfg: &PruningConfig,
    d: usize,
    rng: &mut R,
) -> Vec<Candidate> {
    let lambda = cfg.lambda;
    let draw = |rng: &mut R| {
        if lambda == 0.0 {
            0.0
        } else {
            rng.random_range(-lambda..=lambda)
        }
    };
    (0..cfg.pool_size)
        .map(|pool_index| {
            let w = (0..d).map(|_| draw(rng)).collect();
            let v = draw(rng);
            Candidate { w, v, pool_index }
        })
        .collect()
}

/// Rate feature of a hidden neuron on every sample, in dataset order.
pub fn candidate_features(
    c: &Candidate,
    ds: &LabeledDataset,
    params: &LifParams,
) -> Result<Vec<f64>, ConstructError> {
    neuron_features(&c.w, c.v, ds, params)
}

pub(crate) fn neuron_features(
    w: &[f64],
    v: f64,
    ds: &LabeledDataset,
    params: &LifParams,
) -> Result<Vec<f64>, ConstructError> {
    if w.len() != ds.channels() {
        return Err(ConstructError::Shape {
            weights: w.len(),
            channels: ds.channels(),
        });
    }
    let steps = ds.steps();
    if steps == 0 {
        return Err(ConstructError::EmptyWindow);
    }
    let inv = steps as f64;
    Ok(ds
        .samples()
        .iter()
        .map(|s| spike_count_unchecked(&s.channels, steps, w, v, params) as f64 / inv)
        .collect())
}

/// `sum_q <E_q,h>^2 / <h,h>`; `None` for a silent feature.
fn projection_gain(e: &DMatrix<f64>, h: &[f64]) -> Option<f64> {
    let hh: f64 = h.iter().map(|x| x * x).sum();
    if hh == 0.0 {
        return None;
    }
    let gain = e
        .column_iter()
        .map(|col| {
            let dot: f64 = col.iter().zip(h).map(|(a, b)| a * b).sum();
            dot * dot
        })
        .sum::<f64>()
        / hh;
    Some(gain)
}

pub fn xi_index(e: &DMatrix<f64>, h: &[f64], sigma: f64) -> Result<f64, ConstructError> {
    assert_eq!(e.nrows(), h.len(), "residual rows vs feature length");
    let gain = projection_gain(e, h).ok_or(ConstructError::SilentCandidate)?;
    Ok(gain - (1.0 - sigma) * e.norm_squared())
}

/// Highest-`xi` candidate among the non-silent ones with `xi >= 0`; ties go
/// to the lowest `pool_index`.
pub fn select_best(
    pool: &[(Candidate, Vec<f64>)],
    e: &DMatrix<f64>,
    sigma: f64,
) -> Option<SelectionResult> {
    let slack = (1.0 - sigma) * e.norm_squared();
    let mut best: Option<(usize, f64, f64)> = None;
    for (k, (cand, h)) in pool.iter().enumerate() {
        let Some(gain) = projection_gain(e, h) else {
            continue;
        };
        let xi = gain - slack;
        if xi < 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((bk, bxi, _)) => {
                xi > bxi || (xi == bxi && cand.pool_index < pool[bk].0.pool_index)
            }
        };
        if better {
            best = Some((k, xi, gain));
        }
    }
    best.map(|(k, xi, gain)| SelectionResult {
        winner: pool[k].0.clone(),
        xi,
        feature: pool[k].1.clone(),
        error_gain: gain,
        sigma,
    })
}

/// One growth attempt: up to `1 + sigma_relax_steps` rounds of sampling and
/// selection with progressively relaxed `sigma`.
///
/// Callers stop before the residual vanishes; `e` must be nonzero.
pub fn grow_one<R: Rng + ?Sized>(
    e: &DMatrix<f64>,
    ds: &LabeledDataset,
    cfg: &PruningConfig,
    params: &LifParams,
    rng: &mut R,
) -> Result<GrowOutcome, ConstructError> {
    if e.nrows() != ds.len() {
        return Err(ConstructError::ResidualShape {
            residual: e.nrows(),
            samples: ds.len(),
        });
    }
    for k in 0..=cfg.sigma_relax_steps {
        let (sigma, lambda) = cfg.round_schedule(k);
        let round = PruningConfig { lambda, ..*cfg };
        let candidates = sample_candidates(&round, ds.channels(), rng);
        let pool = candidates
            .into_par_iter()
            .map(|c| {
                let h = candidate_features(&c, ds, params)?;
                Ok((c, h))
            })
            .collect::<Result<Vec<_>, ConstructError>>()?;
        if let Some(selection) = select_best(&pool, e, sigma) {
            return Ok(GrowOutcome::Added {
                selection,
                retries: k,
            });
        }
    }
    Ok(GrowOutcome::Saturated {
        rounds: cfg.sigma_relax_steps + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_family, GeneratorConfig, LabeledSample};
    use crate::lif::{rate_feature, simulate_neuron};
    use crate::spikes::SpikeTrain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn small_dataset() -> LabeledDataset {
        let cfg = GeneratorConfig {
            channels: 4,
            steps: 20,
            categories: 3,
            samples_per_category: 6,
            base_rate: 0.3,
            rng_seed: 5,
            ..Default::default()
        };
        generate_family(&cfg, &[3]).unwrap().into_stages().remove(0)
    }

    #[test]
    fn degenerate_range_gives_zero_weights() {
        let cfg = PruningConfig {
            pool_size: 1,
            lambda: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool = sample_candidates(&cfg, 5, &mut rng);
        assert_eq!(
            pool,
            vec![Candidate {
                w: vec![0.0; 5],
                v: 0.0,
                pool_index: 0
            }]
        );
    }

    #[test]
    fn sampled_weights_in_range_and_reproducible() {
        let cfg = PruningConfig {
            pool_size: 20,
            lambda: 0.7,
            ..Default::default()
        };
        let a = sample_candidates(&cfg, 6, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_candidates(&cfg, 6, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        for (k, c) in a.iter().enumerate() {
            assert_eq!(c.pool_index, k);
            assert!(c
                .w
                .iter()
                .chain(std::iter::once(&c.v))
                .all(|x| x.abs() <= 0.7));
        }
    }

    #[test]
    fn sampled_weights_have_zero_mean() {
        let cfg = PruningConfig {
            pool_size: 10_000,
            lambda: 1.0,
            ..Default::default()
        };
        let pool = sample_candidates(&cfg, 9, &mut ChaCha8Rng::seed_from_u64(8));
        let draws: Vec<f64> = pool
            .iter()
            .flat_map(|c| c.w.iter().copied().chain([c.v]))
            .collect();
        assert_eq!(draws.len(), 100_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        // Uniform on [-1,1] has variance 1/3.
        let se = (1.0f64 / 3.0 / draws.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn features_of_zero_candidate_are_silent() {
        let ds = small_dataset();
        let c = Candidate {
            w: vec![0.0; 4],
            v: 0.0,
            pool_index: 0,
        };
        let h = candidate_features(&c, &ds, &LifParams::default()).unwrap();
        assert_eq!(h, vec![0.0; ds.len()]);
        let wrong = Candidate {
            w: vec![0.0; 3],
            v: 0.0,
            pool_index: 0,
        };
        assert!(matches!(
            candidate_features(&wrong, &ds, &LifParams::default()),
            Err(ConstructError::Shape { .. })
        ));
    }

    #[test]
    fn features_match_simulator() {
        let ds = small_dataset();
        let params = LifParams::default();
        let c = Candidate {
            w: vec![0.8, -0.3, 0.5, 0.9],
            v: -0.4,
            pool_index: 0,
        };
        let h = candidate_features(&c, &ds, &params).unwrap();
        for (s, &hi) in ds.samples().iter().zip(&h) {
            let train = simulate_neuron(&s.channels, &c.w, c.v, &params).unwrap();
            assert_eq!(hi, rate_feature(&train).unwrap());
            assert!((0.0..=1.0).contains(&hi));
        }
    }

    #[test]
    fn single_sample_two_channel_feature() {
        // All-ones input with w = (1,1) fires at 9 of 10 steps.
        let ch = SpikeTrain::from_bools(vec![true; 10]);
        let sample = LabeledSample {
            channels: vec![ch.clone(), ch],
            label: 0,
        };
        let ds = LabeledDataset::new(vec![sample], vec![0], 2, 10, 1.0).unwrap();
        let c = Candidate {
            w: vec![1.0, 1.0],
            v: 0.0,
            pool_index: 0,
        };
        assert_eq!(
            candidate_features(&c, &ds, &LifParams::default()).unwrap(),
            vec![0.9]
        );
    }

    #[test]
    fn xi_hand_cases() {
        let e = col(&[1.0, 1.0]);
        assert!((xi_index(&e, &[1.0, 0.0], 0.9).unwrap() - 0.8).abs() < 1e-15);
        // Orthogonal: -(1 - sigma) ||E||^2.
        let e = col(&[1.0, -1.0]);
        let xi = xi_index(&e, &[1.0, 1.0], 0.5).unwrap();
        assert!((xi + 1.0).abs() < 1e-15);
        // Parallel: sigma ||E||^2.
        let e = col(&[2.0, 1.0]);
        let xi = xi_index(&e, &[0.4, 0.2], 0.7).unwrap();
        assert!((xi - 0.7 * 5.0).abs() < 1e-12);
        assert_eq!(
            xi_index(&e, &[0.0, 0.0], 0.7),
            Err(ConstructError::SilentCandidate)
        );
    }

    fn cand(k: usize) -> Candidate {
        Candidate {
            w: vec![k as f64],
            v: 0.0,
            pool_index: k,
        }
    }

    #[test]
    fn select_picks_max_and_breaks_ties_by_index() {
        let e = col(&[1.0, 1.0]);
        // sigma = 0.9 leaves slack 0.2; gains 1 and 2 give xi 0.8 and 1.8.
        let pool = vec![(cand(0), vec![1.0, 0.0]), (cand(1), vec![1.0, 1.0])];
        let best = select_best(&pool, &e, 0.9).unwrap();
        assert_eq!(best.winner.pool_index, 1);
        assert!((best.xi - 1.8).abs() < 1e-12);
        let single = select_best(&pool[..1], &e, 0.9).unwrap();
        assert_eq!(single.winner.pool_index, 0);
        assert!((single.error_gain - 1.0).abs() < 1e-12);
        let tie = vec![(cand(0), vec![1.0, 0.0]), (cand(1), vec![0.0, 1.0])];
        assert_eq!(select_best(&tie, &e, 0.9).unwrap().winner.pool_index, 0);
        let silent = vec![(cand(0), vec![0.0, 0.0])];
        assert!(select_best(&silent, &e, 0.9).is_none());
        let orthogonal = vec![(cand(0), vec![1.0, -1.0])];
        assert!(select_best(&orthogonal, &e, 0.9).is_none());
    }

    #[test]
    fn superset_pool_never_worse() {
        let ds = small_dataset();
        let params = LifParams::default();
        let e = crate::dataset::encode_targets(&ds);
        let small = PruningConfig {
            pool_size: 5,
            ..Default::default()
        };
        let big = PruningConfig {
            pool_size: 25,
            ..Default::default()
        };
        let eval = |cfg: &PruningConfig| {
            let cands = sample_candidates(cfg, ds.channels(), &mut ChaCha8Rng::seed_from_u64(21));
            let pool: Vec<_> = cands
                .into_iter()
                .map(|c| {
                    let h = candidate_features(&c, &ds, &params).unwrap();
                    (c, h)
                })
                .collect();
            select_best(&pool, &e, 0.999)
                .map(|s| s.xi)
                .unwrap_or(f64::NEG_INFINITY)
        };
        assert!(eval(&big) >= eval(&small));
    }

    #[test]
    fn first_round_success_uses_sigma0() {
        let ds = small_dataset();
        let e = crate::dataset::encode_targets(&ds);
        let cfg = PruningConfig::default();
        let out = grow_one(
            &e,
            &ds,
            &cfg,
            &LifParams::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        match out {
            GrowOutcome::Added { selection, retries } => {
                assert_eq!(retries, 0);
                assert_eq!(selection.sigma, cfg.sigma0);
                assert!(selection.xi >= 0.0);
                let expected = selection.xi + (1.0 - cfg.sigma0) * e.norm_squared();
                assert!((selection.error_gain - expected).abs() <= 1e-12 * expected);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn silent_data_saturates_after_all_rounds() {
        let sample = LabeledSample {
            channels: vec![SpikeTrain::zeros(10); 3],
            label: 0,
        };
        let other = LabeledSample {
            channels: vec![SpikeTrain::zeros(10); 3],
            label: 1,
        };
        let ds = LabeledDataset::new(vec![sample, other], vec![0, 1], 3, 10, 1.0).unwrap();
        let e = crate::dataset::encode_targets(&ds);
        let params = LifParams {
            theta: 1e12,
            ..Default::default()
        };
        let cfg = PruningConfig {
            pool_size: 4,
            sigma_relax_steps: 3,
            lambda_growth: 2.0,
            ..Default::default()
        };
        // Count rounds through the rng: each round draws pool_size * (d + 1) values.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = grow_one(&e, &ds, &cfg, &params, &mut rng).unwrap();
        assert_eq!(out, GrowOutcome::Saturated { rounds: 4 });
        let mut reference = ChaCha8Rng::seed_from_u64(2);
        for k in 0..4 {
            let (_, lambda) = cfg.round_schedule(k);
            sample_candidates(&PruningConfig { lambda, ..cfg }, 3, &mut reference);
        }
        assert_eq!(rng.random::<u64>(), reference.random::<u64>());
    }

    #[test]
    fn schedule_relaxes_sigma() {
        let cfg = PruningConfig {
            sigma0: 0.9,
            lambda_growth: 2.0,
            ..Default::default()
        };
        let (s0, l0) = cfg.round_schedule(0);
        let (s2, l2) = cfg.round_schedule(2);
        assert_eq!((s0, l0), (0.9, 1.0));
        assert!((s2 - 0.975).abs() < 1e-15);
        assert_eq!(l2, 4.0);
        assert!(PruningConfig {
            sigma0: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PruningConfig {
            pool_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PruningConfig {
            lambda_growth: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn winner_is_schedule_independent() {
        let ds = small_dataset();
        let e = crate::dataset::encode_targets(&ds);
        let cfg = PruningConfig::default();
        let params = LifParams::default();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                grow_one(&e, &ds, &cfg, &params, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
            })
        };
        assert_eq!(run(1), run(4));
    }
}
