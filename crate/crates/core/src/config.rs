//! Run configuration: one TOML file describing the dataset, engine, fit,
//! backend, and prompt-template choices of a run.

use crate::engine::EngineConfig;
use crate::fit::FitConfig;
use crate::llmio::SamplingParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Paths of a stored dataset (CSV plus JSON sidecar).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub csv: PathBuf,
    pub meta: PathBuf,
}

/// Which chat backend a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum BackendConfig {
    /// Deterministic scripted backend; `script` is a replay JSON file.
    Replay { script: PathBuf },
    /// Chat-completions HTTP endpoint. Unset fields fall back to the
    /// `EQSEARCH_API_BASE` / `EQSEARCH_API_KEY` / `EQSEARCH_MODEL`
    /// environment variables.
    Live {
        #[serde(default)]
        model: Option<String>,
        #[serde(default)]
        base_url: Option<String>,
        #[serde(default)]
        max_retries: Option<usize>,
        #[serde(default)]
        initial_backoff_ms: Option<u64>,
        #[serde(default)]
        timeout_s: Option<u64>,
    },
}

/// Optional per-role decoding overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SamplingOverrides {
    #[serde(default)]
    pub main: Option<SamplingParams>,
    #[serde(default)]
    pub data: Option<SamplingParams>,
    #[serde(default)]
    pub idea: Option<SamplingParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetRef,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub fit: FitConfig,
    pub backend: BackendConfig,
    /// Directory of prompt-template replacements; embedded defaults
    /// otherwise.
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    /// Run artifact directory; the CLI derives one next to the config when
    /// unset.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Idea-library JSON path for warm restarts; defaults into the run
    /// directory.
    #[serde(default)]
    pub idea_library: Option<PathBuf>,
    /// Relative-error threshold for the final tolerance-accuracy report;
    /// defaults to the dataset's `default_tau`.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub sampling: SamplingOverrides,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.engine.validate().map_err(ConfigError::Invalid)?;
        if self.fit.restarts == 0 {
            return Err(ConfigError::Invalid("fit.restarts must be positive".into()));
        }
        if self.fit.max_iters_per_restart == 0 {
            return Err(ConfigError::Invalid("fit.max_iters_per_restart must be positive".into()));
        }
        if self.fit.grad_step.is_nan() || self.fit.grad_step <= 0.0 {
            return Err(ConfigError::Invalid("fit.grad_step must be positive".into()));
        }
        if self.fit.tolerance.is_nan() || self.fit.tolerance <= 0.0 {
            return Err(ConfigError::Invalid("fit.tolerance must be positive".into()));
        }
        if let Some(tau) = self.tau {
            if tau.is_nan() || tau <= 0.0 {
                return Err(ConfigError::Invalid("tau must be positive".into()));
            }
        }
        Ok(())
    }

    /// Whether this run is the reduced loop: no insight injection and no
    /// idea sections, leaving only buffer-driven generation.
    pub fn is_reduced_loop(&self) -> bool {
        self.engine.insight_probability == 0.0 && self.engine.idea_toggles.all_off()
    }
}
