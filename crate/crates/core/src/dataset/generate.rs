use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CategoryId, DatasetError, LabeledDataset, LabeledSample, NestedFamily};
use crate::spikes::SpikeTrain;

// Per-sample rates are kept this far inside (0,1).
const RATE_MARGIN: f64 = 1e-6;

/// Synthetic tactile-like spike rasters with per-category rate profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Input channels `d`.
    pub channels: usize,
    /// Time steps `T` per train.
    pub steps: usize,
    pub dt_ms: f64,
    pub categories: usize,
    pub samples_per_category: usize,
    /// Mean spike probability per step.
    pub base_rate: f64,
    /// Profile offset magnitude, as a fraction of `base_rate`.
    pub separation: f64,
    /// Per-sample rate perturbation, as a fraction of `base_rate`.
    pub jitter: f64,
    pub rng_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            steps: 25,
            dt_ms: 1.0,
            categories: 20,
            samples_per_category: 200,
            base_rate: 0.2,
            separation: 0.5,
            jitter: 0.1,
            rng_seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let err = |m: String| Err(DatasetError::Config(m));
        if self.channels == 0
            || self.steps == 0
            || self.categories == 0
            || self.samples_per_category == 0
        {
            return err("channels, steps, categories and samples_per_category must be >= 1".into());
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return err(format!(
                "base_rate must lie in (0,1), got {}",
                self.base_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return err(format!(
                "separation must lie in [0,1], got {}",
                self.separation
            ));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return err(format!("jitter must lie in [0,1], got {}", self.jitter));
        }
        if !(self.dt_ms.is_finite() && self.dt_ms > 0.0) {
            return err(format!("dt_ms must be > 0, got {}", self.dt_ms));
        }
        let hi = self.base_rate * (1.0 + self.separation);
        let lo = self.base_rate * (1.0 - self.separation);
        if hi >= 1.0 || lo <= 0.0 {
            return err(format!(
                "rate profile collapses to a constant: base_rate {} with separation {} gives range [{lo}, {hi}]",
                self.base_rate, self.separation
            ));
        }
        Ok(())
    }
}

/// Generates nested stages over the first `stage_sizes[k]` categories.
///
/// Category `c` draws its rate profile and all of its samples from stream
/// `c` of `rng_seed`, so a category's samples are identical in every stage
/// and in every family generated with more categories.
pub fn generate_family(
    cfg: &GeneratorConfig,
    stage_sizes: &[usize],
) -> Result<NestedFamily, DatasetError> {
    cfg.validate()?;
    if stage_sizes.is_empty() {
        return Err(DatasetError::Config("stage_sizes must be nonempty".into()));
    }
    if stage_sizes[0] == 0 || stage_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::Config(format!(
            "stage_sizes must be strictly increasing and positive, got {stage_sizes:?}"
        )));
    }
    let largest = *stage_sizes.last().unwrap();
    if largest > cfg.categories {
        return Err(DatasetError::Config(format!(
            "largest stage has {largest} categories but only {} are configured",
            cfg.categories
        )));
    }
    let per_category: Vec<Vec<LabeledSample>> = (0..largest as CategoryId)
        .map(|c| category_samples(cfg, c))
        .collect();

    let stages = stage_sizes
        .iter()
        .map(|&k| {
            let samples = per_category[..k].iter().flatten().cloned().collect();
            LabeledDataset::new(
                samples,
                (0..k as CategoryId).collect(),
                cfg.channels,
                cfg.steps,
                cfg.dt_ms,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    NestedFamily::new(stages)
}

fn category_samples(cfg: &GeneratorConfig, category: CategoryId) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(u64::from(category));
    let offset = cfg.separation * cfg.base_rate;
    let profile: Vec<f64> = (0..cfg.channels)
        .map(|_| {
            if rng.random::<bool>() {
                cfg.base_rate + offset
            } else {
                cfg.base_rate - offset
            }
        })
        .collect();
    let spread = cfg.jitter * cfg.base_rate;
    (0..cfg.samples_per_category)
        .map(|_| {
            let channels = profile
                .iter()
                .map(|&r| {
                    let p = if spread > 0.0 {
                        (r + spread * rng.random_range(-1.0..=1.0))
                            .clamp(RATE_MARGIN, 1.0 - RATE_MARGIN)
                    } else {
                        r
                    };
                    SpikeTrain::from_bools((0..cfg.steps).map(|_| rng.random::<f64>() < p))
                })
                .collect();
            LabeledSample {
                channels,
                label: category,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_family_sizes() {
        let cfg = GeneratorConfig::default();
        let fam = generate_family(&cfg, &[5, 10, 15, 20]).unwrap();
        let sizes: Vec<usize> = fam.stages().iter().map(LabeledDataset::len).collect();
        assert_eq!(sizes, vec![1000, 2000, 3000, 4000]);
        assert!(fam
            .stages()
            .iter()
            .all(|s| s.channels() == 64 && s.steps() == 25));
    }

    #[test]
    fn single_stage_one_sample_each() {
        let cfg = GeneratorConfig {
            channels: 3,
            steps: 5,
            categories: 4,
            samples_per_category: 1,
            ..Default::default()
        };
        let ds = generate_family(&cfg, &[4]).unwrap().into_stages().remove(0);
        assert_eq!(ds.len(), 4);
        let labels: Vec<CategoryId> = ds.samples().iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn flat_profile_matches_base_rate() {
        let cfg = GeneratorConfig {
            channels: 8,
            steps: 25,
            categories: 4,
            samples_per_category: 50,
            base_rate: 0.3,
            separation: 0.0,
            jitter: 0.0,
            rng_seed: 17,
            ..Default::default()
        };
        let ds = generate_family(&cfg, &[4]).unwrap().into_stages().remove(0);
        let trials = (ds.len() * cfg.steps) as f64;
        let sd = (cfg.base_rate * (1.0 - cfg.base_rate) / trials).sqrt();
        for k in 0..cfg.channels {
            let spikes: usize = ds
                .samples()
                .iter()
                .map(|s| s.channels[k].count_ones())
                .sum();
            let rate = spikes as f64 / trials;
            assert!(
                (rate - cfg.base_rate).abs() <= 3.0 * sd,
                "channel {k}: {rate} vs {}",
                cfg.base_rate
            );
        }
    }

    #[test]
    fn deterministic_and_nested() {
        let cfg = GeneratorConfig {
            channels: 6,
            steps: 10,
            categories: 6,
            samples_per_category: 5,
            rng_seed: 99,
            ..Default::default()
        };
        let a = generate_family(&cfg, &[2, 4, 6]).unwrap();
        let b = generate_family(&cfg, &[2, 4, 6]).unwrap();
        assert_eq!(a, b);
        for pair in a.stages().windows(2) {
            assert!(pair[0]
                .samples()
                .iter()
                .all(|s| pair[1].samples().contains(s)));
        }
        // A category's samples do not depend on the stage layout.
        let c = generate_family(&cfg, &[6]).unwrap();
        assert_eq!(a.stages()[2], c.stages()[0]);
        let other = generate_family(
            &GeneratorConfig {
                rng_seed: 100,
                ..cfg
            },
            &[2],
        )
        .unwrap();
        assert_ne!(other.stages()[0], a.stages()[0]);
    }

    #[test]
    fn config_errors() {
        let cfg = GeneratorConfig {
            categories: 5,
            ..Default::default()
        };
        assert!(generate_family(&cfg, &[3, 3]).is_err());
        assert!(generate_family(&cfg, &[4, 2]).is_err());
        assert!(generate_family(&cfg, &[6]).is_err());
        assert!(generate_family(&cfg, &[]).is_err());
        let collapse = GeneratorConfig {
            base_rate: 0.6,
            separation: 0.9,
            ..cfg.clone()
        };
        assert!(
            matches!(generate_family(&collapse, &[2]), Err(DatasetError::Config(m)) if m.contains("collapses"))
        );
        let zero = GeneratorConfig {
            separation: 1.0,
            ..cfg
        };
        assert!(generate_family(&zero, &[2]).is_err());
    }
}
