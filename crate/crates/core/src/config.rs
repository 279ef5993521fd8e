//! JSON run configuration shared by the command-line tools.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{file_err, invalid, io_err, Result};
use crate::model::{Ablation, ModelConfig};
use crate::train::TrainConfig;

/// Every field is optional in the file; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub image_size: [usize; 2],
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub augment: bool,
    pub channels: [usize; 3],
    pub st_dim: usize,
    pub st_layers: usize,
    pub st_heads: usize,
    pub st_ffn_mult: usize,
    pub ablate: BTreeSet<Ablation>,
    /// Training dataset manifest.
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Checkpoint to read for inference and evaluation.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            seed: 0,
            image_size: m.image_size,
            batch_size: t.batch_size,
            epochs: 300,
            lr: t.lr,
            betas: t.betas,
            eps: t.eps,
            augment: false,
            channels: m.channels,
            st_dim: m.st_dim,
            st_layers: m.st_layers,
            st_heads: m.st_heads,
            st_ffn_mult: m.st_ffn_mult,
            ablate: BTreeSet::new(),
            manifest: None,
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.image_size,
            channels: self.channels,
            st_dim: self.st_dim,
            st_layers: self.st_layers,
            st_heads: self.st_heads,
            st_ffn_mult: self.st_ffn_mult,
            ablate: self.ablate.clone(),
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            betas: self.betas,
            eps: self.eps,
            augment: self.augment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(invalid(format!("lr must be positive, got {}", self.lr)));
        }
        self.model().validate()?;
        self.training().validate()
    }

    /// Parses and validates a config file. Relative paths inside it are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| file_err(path, format!("invalid config: {e}")))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.manifest.as_mut().map(resolve);
        cfg.checkpoint.as_mut().map(resolve);
        resolve(&mut cfg.out_dir);
        cfg.validate().map_err(|e| file_err(path, e.to_string()))?;
        Ok(cfg)
    }
}
