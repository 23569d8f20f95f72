//! One JSON document configures every command. Missing keys take their
//! defaults; unknown keys are rejected by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dqn::DqnConfig;
use crate::env::{SubjectProfile, LOWPASS_HZ};
use crate::nn::{LodConfig, TrainConfig};
use crate::session::{AugmentConfig, SplitConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub cutoff_hz: f64,
    /// Apply augmentation to training batches.
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub split: SplitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cutoff_hz: LOWPASS_HZ,
            augment: true,
            augmentation: AugmentConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Subject profile file; the built-in default profile when absent.
    pub profile: Option<PathBuf>,
    /// Overrides the profile's noise scale when set.
    pub noise_scale: Option<f64>,
}

/// Synthetic corpus for `simulate-session --count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub sessions: usize,
    /// Every n-th session is a transition to the next season; 0 disables.
    pub transition_every: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            sessions: 40,
            transition_every: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub max_cycles: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 100,
            max_cycles: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; component seeds derive from it unless set explicitly.
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub lod: LodConfig,
    pub cnn: TrainConfig,
    pub dqn: DqnConfig,
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            pipeline: PipelineConfig::default(),
            lod: LodConfig::default(),
            cnn: TrainConfig::default(),
            dqn: DqnConfig::default(),
            env: EnvConfig::default(),
            dataset: DatasetConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Use `seed` as the master seed and derive every component seed from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.pipeline.split.seed = seed;
        self.cnn.seed = seed.wrapping_add(1);
        self.dqn.seed = seed.wrapping_add(2);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let p = &self.pipeline;
        if !(p.cutoff_hz > 0.0 && p.cutoff_hz < 256.0) {
            return bad("pipeline.cutoff_hz must lie in (0, 256)");
        }
        if !(p.augmentation.sigma >= 0.0) {
            return bad("pipeline.augmentation.sigma must be >= 0");
        }
        let (v, t) = (p.split.val_fraction, p.split.test_fraction);
        if !(v > 0.0 && t > 0.0 && v + t < 1.0) {
            return bad("pipeline.split fractions must be positive and sum below 1");
        }
        if self.lod.k == 0 {
            return bad("lod.k must be >= 1");
        }
        if !(self.lod.aux_sse_weight >= 0.0) {
            return bad("lod.aux_sse_weight must be >= 0");
        }
        let c = &self.cnn;
        if !(c.lr > 0.0) || c.batch_size == 0 || c.max_epochs == 0 {
            return bad("cnn.lr, cnn.batch_size and cnn.max_epochs must be positive");
        }
        let d = &self.dqn;
        if !(0.0..=1.0).contains(&d.gamma) {
            return bad("dqn.gamma must lie in [0, 1]");
        }
        if !(d.lr > 0.0) || d.batch_size == 0 || d.buffer_capacity < d.batch_size {
            return bad(
                "dqn.lr and dqn.batch_size must be positive and fit in dqn.buffer_capacity",
            );
        }
        if d.decay_steps == 0 || d.target_interval == 0 {
            return bad("dqn.decay_steps and dqn.target_interval must be positive");
        }
        if !((0.0..=1.0).contains(&d.eps_start) && (0.0..=1.0).contains(&d.eps_final)) {
            return bad("dqn epsilon bounds must lie in [0, 1]");
        }
        if d.max_cycles == 0 || d.hidden == 0 {
            return bad("dqn.max_cycles and dqn.hidden must be positive");
        }
        if let Some(n) = self.env.noise_scale {
            if !(n >= 0.0 && n.is_finite()) {
                return bad("env.noise_scale must be >= 0");
            }
        }
        Ok(())
    }

    /// The configured subject profile with any noise override applied.
    pub fn profile(&self) -> Result<SubjectProfile, ConfigError> {
        let mut p = match &self.env.profile {
            Some(path) => {
                SubjectProfile::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => SubjectProfile::default(),
        };
        if let Some(n) = self.env.noise_scale {
            p.noise_scale = n;
        }
        p.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }
}
