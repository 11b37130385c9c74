use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::GeneratorConfig;
use crate::learner::GrowthConfig;

/// The whole run configuration document. Every section and field is
/// optional and falls back to its default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub data: DataConfig,
    pub growth: GrowthConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Category counts of the nested stages written by `gen-data`.
    pub stages: Vec<usize>,
    /// Held-out fraction per category for training commands.
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            stages: vec![5, 10, 15, 20],
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

/// File locations; command-line flags take precedence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub seed_checkpoint: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string().replace('\n', " "))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Self::parse(&text).map_err(|e| format!("{}: {e}", p.display()))
            }
        }
    }
}
