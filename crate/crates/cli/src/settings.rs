use std::fs;
use std::path::{Path, PathBuf};

use poolal::config::toml_error_key;
use poolal::{Error, ExperimentConfig, Result};
use serde::Deserialize;

pub const DEFAULT_PORT: u16 = 8080;
pub const BIND_ENV: &str = "POOLAL_BIND";

/// A run file: where the data lives, where results go, how the service
/// listens, and an `[experiment]` table whose keys are the
/// [`ExperimentConfig`] field names.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    /// Dataset manifest, resolved against the run file's directory.
    pub dataset: PathBuf,
    /// Separate evaluation manifest; when absent `eval_fraction` of the
    /// dataset is held out.
    pub eval_dataset: Option<PathBuf>,
    pub eval_fraction: f64,
    pub output_dir: PathBuf,
    pub port: u16,
    /// When set, every API request must carry it in `X-Annotation-Secret`.
    pub annotation_secret: Option<String>,
    pub experiment: ExperimentConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSettings {
    dataset: PathBuf,
    #[serde(default)]
    eval_dataset: Option<PathBuf>,
    #[serde(default = "default_eval_fraction")]
    eval_fraction: f64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default = "default_port")]
    port: u16,
    #[serde(default)]
    annotation_secret: Option<String>,
    #[serde(default)]
    experiment: toml::Table,
}

fn default_eval_fraction() -> f64 {
    0.2
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), reason: reason.into() }
}

impl RunSettings {
    /// Parses a run file. Relative paths are taken relative to `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let raw: RawSettings =
            toml::from_str(text).map_err(|e| config_err(&toml_error_key(text, &e), e.message()))?;
        let table = toml::to_string(&raw.experiment).map_err(|e| config_err("experiment", e.to_string()))?;
        let experiment = ExperimentConfig::from_toml_str(&table).map_err(|e| match e {
            Error::Config { key, reason } => config_err(&format!("experiment.{key}"), reason),
            other => other,
        })?;
        if !(0.0..1.0).contains(&raw.eval_fraction) {
            return Err(config_err("eval_fraction", "must be in [0, 1)"));
        }
        if raw.eval_dataset.is_none() && raw.eval_fraction == 0.0 {
            return Err(config_err("eval_fraction", "must be positive without an eval_dataset"));
        }
        Ok(Self {
            dataset: base.join(raw.dataset),
            eval_dataset: raw.eval_dataset.map(|p| base.join(p)),
            eval_fraction: raw.eval_fraction,
            output_dir: base.join(raw.output_dir),
            port: raw.port,
            annotation_secret: raw.annotation_secret,
            experiment,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// `POOLAL_BIND` when set, else loopback on the configured port.
    pub fn bind_address(&self) -> String {
        std::env::var(BIND_ENV).unwrap_or_else(|_| format!("127.0.0.1:{}", self.port))
    }
}
