use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::ProbeConfig;
use crate::geometry::make_base_grid;
use crate::model::EncoderConfig;
use crate::optim::AdamWConfig;
use crate::volume::{PhantomSpec, Shape3};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config value `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Where pretraining volumes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of `.vol1` files; when absent, phantoms are generated.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_num_volumes")]
    pub num_volumes: usize,
    #[serde(default = "default_volume_shape")]
    pub volume_shape: Shape3,
    /// Phantom sample seeds are `first_seed .. first_seed + num_volumes`.
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default = "PhantomSpec::toy")]
    pub phantom: PhantomSpec,
}

fn default_num_volumes() -> usize {
    16
}

fn default_volume_shape() -> Shape3 {
    [96, 96, 16]
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            num_volumes: default_num_volumes(),
            volume_shape: default_volume_shape(),
            first_seed: 0,
            phantom: PhantomSpec::toy(),
        }
    }
}

impl DataConfig {
    pub fn sample_seeds(&self) -> std::ops::Range<u64> {
        self.first_seed..self.first_seed + self.num_volumes as u64
    }
}

/// Pretraining hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub warmup_steps: u64,
    pub base_lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub batch_volumes: usize,
    pub crops_per_volume: usize,
    pub grid: Shape3,
    pub lambda: f64,
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Every volume is resampled to this shape before tiling.
    #[serde(default = "default_working_shape")]
    pub working_shape: Shape3,
    /// Random crop extent; defaults to one grid cell.
    #[serde(default)]
    pub crop_size: Option<Shape3>,
    /// Random flips and quarter turns about z, applied before tiling.
    #[serde(default = "default_true")]
    pub augment: bool,
    #[serde(default = "EncoderConfig::toy")]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
}

fn default_weight_decay() -> f64 {
    1e-2
}

fn default_working_shape() -> Shape3 {
    [96, 96, 16]
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    /// Desk-scale defaults: 2000 steps, 96x96x16 working volume, 4x4x1 grid,
    /// crop = one cell, C = 64, 2 volumes x 4 crops per step.
    pub fn toy() -> Self {
        Self {
            steps: 2000,
            warmup_steps: 100,
            base_lr: 1e-3,
            weight_decay: default_weight_decay(),
            batch_volumes: 2,
            crops_per_volume: 4,
            grid: [4, 4, 1],
            lambda: 1.0,
            seed: 0,
            deterministic: true,
            checkpoint_every: 500,
            working_shape: default_working_shape(),
            crop_size: None,
            augment: true,
            encoder: EncoderConfig::toy(),
            data: DataConfig::default(),
            probe: ProbeConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn effective_crop_size(&self) -> Shape3 {
        self.crop_size
            .unwrap_or_else(|| std::array::from_fn(|a| self.working_shape[a] / self.grid[a].max(1)))
    }

    pub fn num_bases(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.warmup_steps > self.steps {
            return Err(invalid(
                "warmup_steps",
                format!("{} exceeds steps = {}", self.warmup_steps, self.steps),
            ));
        }
        for (key, v) in [
            ("base_lr", self.base_lr),
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.batch_volumes == 0 {
            return Err(invalid("batch_volumes", "must be >= 1"));
        }
        if self.crops_per_volume == 0 {
            return Err(invalid("crops_per_volume", "must be >= 1"));
        }
        if self.num_bases() < 2 {
            return Err(invalid("grid", "needs at least 2 cells for the basis regularizer"));
        }
        make_base_grid(self.working_shape, self.grid).map_err(|e| invalid("grid", e.to_string()))?;
        let crop = self.effective_crop_size();
        if (0..3).any(|a| crop[a] == 0 || crop[a] > self.working_shape[a]) {
            return Err(invalid(
                "crop_size",
                format!("{crop:?} must fit inside working_shape {:?}", self.working_shape),
            ));
        }
        self.encoder.validate().map_err(|e| invalid("encoder", e.to_string()))?;
        let p = &self.probe;
        for (key, v) in [
            ("probe.train_volumes", p.train_volumes),
            ("probe.eval_volumes", p.eval_volumes),
            ("probe.crops_per_volume", p.crops_per_volume),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be >= 1"));
            }
        }
        if !(p.lr >= 0.0) || !p.lr.is_finite() {
            return Err(invalid("probe.lr", format!("must be finite and >= 0, got {}", p.lr)));
        }
        if self.data.dir.is_none() {
            if self.data.num_volumes == 0 {
                return Err(invalid("data.num_volumes", "must be >= 1"));
            }
            self.data
                .phantom
                .validate()
                .map_err(|e| invalid("data.phantom", e.to_string()))?;
            if self.data.volume_shape.iter().any(|&d| d < 8) {
                return Err(invalid("data.volume_shape", "phantoms need >= 8 voxels per axis"));
            }
        }
        Ok(())
    }
}
