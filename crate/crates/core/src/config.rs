//! Training configuration: a small TOML-friendly key-value bag with full
//! defaulting, so few-shot runs stay auditable.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything a training run needs. All fields have defaults, so an empty
/// config file is valid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_planner: f64,
    pub lr_generator: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub min_freq: usize,

    // ablation switches
    pub with_plan: bool,
    pub with_prefix: bool,
    pub with_spa: bool,
    pub finetune_base: bool,

    // planner dimensions
    pub d_embed: usize,
    pub lambda: f64,
    pub rank_cap: usize,

    // generator dimensions
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub prefix_len: usize,
    pub bottleneck: usize,
    pub max_positions: usize,
    pub max_gen_len: usize,
    pub prefix_prompt: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 200,
            batch_size: 10,
            lr_planner: 2e-4,
            lr_generator: 1e-5,
            weight_decay: 0.01,
            grad_clip: 1.0,
            min_freq: 1,
            with_plan: true,
            with_prefix: true,
            with_spa: true,
            finetune_base: false,
            d_embed: 128,
            lambda: 0.7,
            rank_cap: 16,
            d_model: 128,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            prefix_len: 10,
            bottleneck: 64,
            max_positions: 256,
            max_gen_len: 64,
            prefix_prompt: "summarize the following table :".to_string(),
        }
    }
}

/// Named ablation presets matching the switch combinations studied in the
/// ablation table: drop the content plan, the adapters, the prefix, or
/// fall back to plain fine-tuning of the base model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    NoPlan,
    NoSpa,
    NoPrefix,
    FullFinetune,
}

impl Ablation {
    pub fn parse(s: &str) -> Option<Ablation> {
        match s {
            "none" => Some(Ablation::None),
            "no_plan" => Some(Ablation::NoPlan),
            "no_spa" => Some(Ablation::NoSpa),
            "no_prefix" => Some(Ablation::NoPrefix),
            "full_finetune" => Some(Ablation::FullFinetune),
            _ => None,
        }
    }

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Ablation::None => {}
            Ablation::NoPlan => cfg.with_plan = false,
            Ablation::NoSpa => cfg.with_spa = false,
            Ablation::NoPrefix => cfg.with_prefix = false,
            Ablation::FullFinetune => {
                cfg.with_plan = false;
                cfg.with_prefix = false;
                cfg.with_spa = false;
                cfg.finetune_base = true;
            }
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Check the invariants that every run relies on.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lr_planner <= 0.0 || self.lr_generator <= 0.0 {
            return Err(ConfigError::Invalid("learning rates must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be ≥ 1".into()));
        }
        if self.d_embed % 2 != 0 {
            return Err(ConfigError::Invalid(
                "d_embed must be even (split across BiLSTM directions)".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ConfigError::Invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::Invalid("lambda must lie in [0, 1]".into()));
        }
        if self.rank_cap == 0 {
            return Err(ConfigError::Invalid("rank_cap must be ≥ 1".into()));
        }
        let tuned = self.with_prefix || self.with_spa;
        if self.finetune_base && tuned {
            return Err(ConfigError::Invalid(
                "finetune_base excludes prefix/adapter tuning; pick one".into(),
            ));
        }
        if !self.finetune_base && !tuned {
            return Err(ConfigError::Invalid(
                "no trainable parameters: enable with_prefix, with_spa, or finetune_base".into(),
            ));
        }
        Ok(())
    }
}
