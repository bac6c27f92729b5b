//! TOML run configuration.
//!
//! Every key is optional:
//!
//! ```toml
//! seed = 42
//! output_dir = "out"
//! top_percent = 29.0
//! variant = "tiny"        # or "resnet18"
//! use_mask = true
//!
//! [counts]                # train_pos, train_neg, val_pos, val_neg, test_pos, test_neg
//! [params]                # synthetic face generator
//! [train]                 # epochs, batch_size, learning_rate, optimizer, seed
//! [sweep]                 # thresholds, sweep_epochs
//! ```
//!
//! `train.seed` falls back to the master `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, SweepConfig};
use crate::mask::MaskSpec;
use crate::nn::{Optimizer, TrainConfig, Variant};
use crate::synth::{DatasetCounts, FaceParams};

/// Overrides the configured output directory.
pub const OUTPUT_ROOT_ENV: &str = "REDMASK_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            optimizer: d.optimizer,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub top_percent: f64,
    pub variant: Variant,
    pub use_mask: bool,
    pub counts: DatasetCounts,
    pub params: FaceParams,
    pub train: TrainSection,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            top_percent: 29.0,
            variant: Variant::Tiny,
            use_mask: true,
            counts: DatasetCounts::default(),
            params: FaceParams::default(),
            train: TrainSection::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            optimizer: self.train.optimizer,
            seed: self.train.seed.unwrap_or(self.seed),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            params: self.params.clone(),
            counts: self.counts.clone(),
            top_percent: self.top_percent,
            variant: self.variant,
            train: self.train_config(),
            use_mask: self.use_mask,
        }
    }

    /// Checks every component; failures are reported as config errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Argument(m) => Error::Config(m),
            other => other,
        };
        self.params.validate().map_err(as_config)?;
        let dims = self.params.dims().map_err(as_config)?;
        MaskSpec::new(self.top_percent, dims).map_err(as_config)?;
        self.train_config().validate().map_err(as_config)?;
        if self.sweep.thresholds.is_empty() {
            return Err(Error::Config("sweep.thresholds is empty".into()));
        }
        for &t in &self.sweep.thresholds {
            MaskSpec::new(t, dims).map_err(as_config)?;
        }
        if self.sweep.sweep_epochs == 0 {
            return Err(Error::Config("sweep.sweep_epochs must be at least 1".into()));
        }
        Ok(())
    }
}
