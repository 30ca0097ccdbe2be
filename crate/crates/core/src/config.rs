//! Command-line configuration file (JSON).
//!
//! Every field has a default, so `{}` is a valid config. Unknown fields are
//! rejected and parse errors name the offending field path.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::face_model::{DeformableFaceModel, DEFAULT_IPD};
use crate::failure::{FailurePredictor, HogParams};
use crate::geometry::CameraIntrinsics;
use crate::pipeline::TrackerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: field `{field}`: {message}")]
    Field { path: String, field: String, message: String },
    #[error("invalid config: field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: BackendMode,
    /// `host:port` of the alignment server; also the `serve` listen address.
    pub endpoint: String,
    pub timeout_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { mode: BackendMode::Local, endpoint: "127.0.0.1:7878".into(), timeout_ms: 100 }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Per-frame JSON-lines trace written by `track`.
    pub trace: Option<PathBuf>,
    /// JSON report written by `eval`.
    pub report: Option<PathBuf>,
    /// CED samples written by `eval`.
    pub ced_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Face model file; the bundled model when absent.
    pub model: Option<PathBuf>,
    /// Rescale the model to this pupil distance (meters) after loading.
    pub target_ipd: Option<f64>,
    /// Camera intrinsics; scenarios bring their own when absent.
    pub intrinsics: Option<CameraIntrinsics>,
    pub tracker: TrackerConfig,
    pub hog: HogParams,
    pub failure_predictor: Option<PathBuf>,
    pub backend: BackendConfig,
    pub scenario: Option<PathBuf>,
    pub output: OutputConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: None,
            target_ipd: Some(DEFAULT_IPD),
            intrinsics: None,
            tracker: TrackerConfig::default(),
            hog: HogParams::default(),
            failure_predictor: None,
            backend: BackendConfig::default(),
            scenario: None,
            output: OutputConfig::default(),
        }
    }
}

fn invalid(field: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.to_string() }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let cfg = Self::from_json_str(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validating; `origin` labels errors.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Field { path: origin.into(), field, message: e.into_inner().to_string() }
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(ipd) = self.target_ipd {
            if !(ipd > 0.0 && ipd.is_finite()) {
                return Err(invalid("target_ipd", "must be positive"));
            }
        }
        self.tracker.validate().map_err(|m| {
            let (field, msg) = m.split_once(": ").unwrap_or(("", &m));
            let field = if field.is_empty() { "tracker".to_string() } else { format!("tracker.{field}") };
            invalid(&field, msg)
        })?;
        self.hog.validate().map_err(|e| invalid("hog", e))?;
        if self.backend.timeout_ms == 0 {
            return Err(invalid("backend.timeout_ms", "must be positive"));
        }
        if self.backend.endpoint.parse::<SocketAddr>().is_err() && !self.backend.endpoint.contains(':') {
            return Err(invalid("backend.endpoint", format!("'{}' is not host:port", self.backend.endpoint)));
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Loads the configured model, scaled to `target_ipd` when set.
    pub fn load_model(&self) -> Result<DeformableFaceModel, ConfigError> {
        let model = match &self.model {
            Some(p) => DeformableFaceModel::load(p).map_err(|e| match e {
                crate::face_model::ModelError::Io { path, source } => ConfigError::Io { path, source },
                other => invalid("model", format!("{}: {other}", p.display())),
            })?,
            None => DeformableFaceModel::bundled(),
        };
        match self.target_ipd {
            Some(ipd) => model.scale_to_ipd(ipd).map_err(|e| invalid("target_ipd", e)),
            None => Ok(model),
        }
    }

    pub fn load_failure_predictor(&self) -> Result<Option<FailurePredictor>, ConfigError> {
        let Some(p) = &self.failure_predictor else { return Ok(None) };
        FailurePredictor::load(p).map(Some).map_err(|e| match e {
            crate::failure::FailureError::Io { path, source } => ConfigError::Io { path, source },
            other => invalid("failure_predictor", other),
        })
    }

    pub fn intrinsics_or(&self, fallback: CameraIntrinsics) -> CameraIntrinsics {
        self.intrinsics.unwrap_or(fallback)
    }
}
