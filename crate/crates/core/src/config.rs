use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::latent::{LatentRnnConfig, SplitBounds};
use crate::nn::AdamConfig;
use crate::vae::{VaeConfig, ZMode};

/// Everything that determines a training run besides the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub vae_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hard cap on optimizer steps per run, if any.
    pub max_steps: Option<usize>,
    pub patience: usize,
    pub adam: AdamConfig,
    pub vae: VaeConfig,
    pub latent: LatentRnnConfig,
    pub split: SplitBounds,
    /// Context latents during InpaintNet training.
    pub train_z_mode: ZMode,
    /// Context latents during evaluation.
    pub eval_z_mode: ZMode,
    /// Seed of the per-window evaluation splits.
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vae_epochs: 30,
            epochs: 100,
            batch_size: 32,
            max_steps: None,
            patience: 10,
            adam: AdamConfig::default(),
            vae: VaeConfig::full(0),
            latent: LatentRnnConfig::full(),
            split: SplitBounds::default(),
            train_z_mode: ZMode::Sample,
            eval_z_mode: ZMode::Mean,
            eval_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Small dimensions for quick runs on a laptop.
    pub fn desk() -> Self {
        let mut vae = VaeConfig::small(0, 16, 64);
        vae.dropout = 0.0;
        let mut latent = LatentRnnConfig::small(16, 32);
        latent.dropout = 0.0;
        Self {
            vae_epochs: 20,
            epochs: 40,
            vae,
            latent,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text)?)
    }

    pub fn vae_config(&self, vocab_size: usize) -> VaeConfig {
        VaeConfig {
            vocab_size,
            ..self.vae.clone()
        }
    }

    pub fn latent_config(&self) -> LatentRnnConfig {
        LatentRnnConfig {
            latent_dim: self.vae.latent_dim,
            ..self.latent.clone()
        }
    }
}
