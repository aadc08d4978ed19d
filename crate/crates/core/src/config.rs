//! Experiment configuration. Field names double as the config-file keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    Entropy,
    LeastConfidence,
    Margin,
    Alps,
    Batchbald,
    Indi,
    Group,
    Vote,
    Mix,
}

impl StrategyKind {
    /// Strategies that score annotator-specific predictions.
    pub fn is_multi_annotator(self) -> bool {
        matches!(self, Self::Indi | Self::Group | Self::Vote | Self::Mix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitializerKind {
    Kmeans,
    Dacs,
    Bmal,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorMode {
    Oracle,
    SimulatedMulti,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    OneHidden,
}

/// How a multi-annotator mixture turns per-annotator entropies into one
/// number per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndividualAggregate {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaptConfig {
    /// Number of frames each flat feature vector is split into.
    pub frames: usize,
    /// Embedding width; `0` means "same as the frame width".
    pub embed_dim: usize,
    pub codebook_size: usize,
    pub mask_ratio: f64,
    pub temperature: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TaptConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            embed_dim: 0,
            codebook_size: 16,
            mask_ratio: 0.15,
            temperature: 0.1,
            epochs: 30,
            learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotatorPoolConfig {
    pub count: usize,
    /// Probability an annotator reports the true class.
    pub accuracy: f64,
    pub multi_label_rate: f64,
}

impl Default for AnnotatorPoolConfig {
    fn default() -> Self {
        Self {
            count: 3,
            accuracy: 0.8,
            multi_label_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    pub initializer: InitializerKind,
    pub init_fraction: f64,
    /// Total number of samples acquired after initialization.
    pub budget: usize,
    pub iterations: usize,
    pub seed: u64,

    pub architecture: Architecture,
    pub hidden_width: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Continue from the previous round's classifier instead of
    /// re-initializing it.
    pub warm_start: bool,

    pub tapt_enabled: bool,
    pub tapt: TaptConfig,

    pub annotator_mode: AnnotatorMode,
    pub annotators: AnnotatorPoolConfig,
    /// Seconds the loop waits for human labels before pausing. `0` waits forever.
    pub human_timeout_secs: u64,

    pub mc_samples: usize,
    /// Largest batch whose joint outcomes are enumerated exactly.
    pub batchbald_exact_limit: usize,
    pub batchbald_outcome_samples: usize,
    pub knn: usize,
    pub k_max: usize,
    pub individual_aggregate: IndividualAggregate,

    /// Record wall-clock time per round. Off by default so reports are
    /// byte-for-byte reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Entropy,
            initializer: InitializerKind::Kmeans,
            init_fraction: 0.01,
            budget: 100,
            iterations: 10,
            seed: 0,
            architecture: Architecture::OneHidden,
            hidden_width: 64,
            dropout_rate: 0.3,
            learning_rate: 0.1,
            epochs: 200,
            patience: 20,
            warm_start: true,
            tapt_enabled: false,
            tapt: TaptConfig::default(),
            annotator_mode: AnnotatorMode::Oracle,
            annotators: AnnotatorPoolConfig::default(),
            human_timeout_secs: 0,
            mc_samples: 20,
            batchbald_exact_limit: 4,
            batchbald_outcome_samples: 1000,
            knn: 10,
            k_max: 10,
            individual_aggregate: IndividualAggregate::Mean,
            timing: false,
        }
    }
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(&toml_error_key(text, &e), e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Checks the config against a pool of `pool_size` samples.
    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(config_err("iterations", "must be at least 1"));
        }
        if self.budget > pool_size {
            return Err(config_err(
                "budget",
                format!("{} exceeds the pool size {pool_size}", self.budget),
            ));
        }
        if self.budget < self.iterations {
            return Err(config_err("budget", "must be at least `iterations`"));
        }
        if !(self.init_fraction > 0.0 && self.init_fraction <= 1.0) {
            return Err(config_err("init_fraction", "must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(config_err("dropout_rate", "must be in [0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning_rate", "must be positive"));
        }
        if self.architecture == Architecture::OneHidden && self.hidden_width == 0 {
            return Err(config_err("hidden_width", "must be positive"));
        }
        if self.strategy == StrategyKind::Batchbald && self.mc_samples < 2 {
            return Err(config_err("mc_samples", "BatchBALD needs at least 2 samples"));
        }
        if self.strategy.is_multi_annotator() && self.annotator_mode != AnnotatorMode::SimulatedMulti {
            return Err(config_err(
                "strategy",
                "multi-annotator strategies need annotator_mode = \"simulated_multi\"",
            ));
        }
        if self.annotator_mode == AnnotatorMode::SimulatedMulti && self.annotators.count == 0 {
            return Err(config_err("annotators.count", "must be at least 1"));
        }
        if self.k_max < 3 {
            return Err(config_err("k_max", "must be at least 3"));
        }
        if self.tapt_enabled {
            let t = &self.tapt;
            if t.frames == 0 {
                return Err(config_err("tapt.frames", "must be positive"));
            }
            if !(t.mask_ratio > 0.0 && t.mask_ratio < 1.0) {
                return Err(config_err("tapt.mask_ratio", "must be in (0, 1)"));
            }
            if t.temperature <= 0.0 {
                return Err(config_err("tapt.temperature", "must be positive"));
            }
            if t.codebook_size == 0 {
                return Err(config_err("tapt.codebook_size", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Best-effort name of the key a TOML error in `text` refers to: the field
/// named in the message, else the key on the line the error points at.
pub fn toml_error_key(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(key) = rest.split('`').next() {
                return key.to_string();
            }
        }
    }
    if let Some(span) = e.span() {
        let start = text[..span.start.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
        let line = text[start..].lines().next().unwrap_or("");
        if let Some((key, _)) = line.split_once('=') {
            return key.trim().trim_matches('"').to_string();
        }
    }
    "<document>".to_string()
}
