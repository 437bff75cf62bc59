use std::path::Path;

use gns_core::datagen::{Manifest, SplitCounts};
use gns_core::metrics::MetricOptions;
use gns_core::train::TrainConfig;
use gns_core::{GnsConfig, GnsError, Result, Scenario};
use serde::{Deserialize, Serialize};

pub const CONFIG_ECHO: &str = "config.json";

/// Short-budget training used by each cell of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub steps: u64,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            steps: 2000,
            seeds: vec![0, 1, 2],
        }
    }
}

/// Everything a command can be configured with. Loaded from JSON, then
/// command-line flags and the dataset manifest fill in the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Full scenario; when absent the preset named by `--scenario` is used.
    pub scenario: Option<Scenario>,
    pub splits: SplitCounts,
    pub seed: u64,
    pub model: GnsConfig,
    pub train: TrainConfig,
    pub metrics: MetricOptions,
    /// Rollout horizon for evaluation; `None` rolls out whole trajectories.
    pub rollout_steps: Option<usize>,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: None,
            splits: SplitCounts::default(),
            seed: 0,
            model: GnsConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricOptions::default(),
            rollout_steps: None,
            ablation: AblationConfig::default(),
        }
    }
}

/// A loaded config plus the model keys the file set explicitly, so dataset
/// properties only fill what the user left open.
pub struct Loaded {
    pub config: RunConfig,
    explicit_model_keys: Vec<String>,
}

impl Loaded {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Loaded {
                config: RunConfig::default(),
                explicit_model_keys: Vec::new(),
            });
        };
        let text = std::fs::read_to_string(path).map_err(|e| GnsError::io(path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| GnsError::json(path, e))?;
        let explicit_model_keys = raw
            .get("model")
            .and_then(|m| m.as_object())
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default();
        let config = serde_json::from_value(raw).map_err(|e| GnsError::Config(format!("{}: {e}", path.display())))?;
        Ok(Loaded {
            config,
            explicit_model_keys,
        })
    }

    fn explicit(&self, key: &str) -> bool {
        self.explicit_model_keys.iter().any(|k| k == key)
    }

    /// Takes dimension, globals, radius and walls from the dataset unless
    /// the config file set them, then checks the two agree.
    pub fn adapt_to(mut self, manifest: &Manifest) -> Result<RunConfig> {
        let [dim, globals, radius, walls] = ["dim", "num_globals", "connectivity_radius", "walls"].map(|k| self.explicit(k));
        let m = &mut self.config.model;
        if !dim {
            m.dim = manifest.dim;
        }
        if !globals {
            m.num_globals = manifest.num_globals;
        }
        if !radius {
            m.connectivity_radius = manifest.connectivity_radius;
        }
        if !walls {
            m.walls = Some(manifest.scenario.bounds.clone());
        }
        if m.dim != manifest.dim || m.num_globals != manifest.num_globals {
            return Err(GnsError::Config(format!(
                "model expects dim {} with {} globals but the dataset has dim {} with {}",
                m.dim, m.num_globals, manifest.dim, manifest.num_globals
            )));
        }
        if self.config.scenario.is_none() {
            self.config.scenario = Some(manifest.scenario.clone());
        }
        Ok(self.config)
    }
}

pub fn echo(dir: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GnsError::io(dir, e))?;
    gns_core::json::write_json(&dir.join(CONFIG_ECHO), config)
}
