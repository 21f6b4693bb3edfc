//! Gateway configuration.
//!
//! Values are layered: built-in defaults, then the TOML file, then the
//! `OVERLAPCHAT_BACKEND_URL` and `OVERLAPCHAT_LOG_DIR` environment variables,
//! then command-line flags.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use overlapchat::policy::{GenerationBackend, HttpBackend, Policy, PolicyKind, StubBackend};
use overlapchat::SessionConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_BACKEND_URL: &str = "OVERLAPCHAT_BACKEND_URL";
pub const ENV_LOG_DIR: &str = "OVERLAPCHAT_LOG_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("bad config file {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("remote backend needs a url")]
    MissingUrl,
    #[error("log directory {path} is not writable: {source}")]
    LogDir { path: PathBuf, source: std::io::Error },
    #[error("invalid session defaults: {0}")]
    Session(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: Option<String>,
    /// Deadline for one remote generation.
    pub timeout_ms: u64,
    /// Artificial delay of the stub backend.
    pub stub_latency_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Stub,
            url: None,
            timeout_ms: 10_000,
            stub_latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    pub backend: BackendConfig,
    pub session: SessionConfig,
    /// Where session logs go; `None` keeps logs in memory only.
    pub log_dir: Option<PathBuf>,
    pub policy: PolicyConfig,
    pub max_sessions: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            backend: BackendConfig::default(),
            session: SessionConfig::default(),
            log_dir: None,
            policy: PolicyConfig::default(),
            max_sessions: 1000,
        }
    }
}

/// Values taken from the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub listen: Option<SocketAddr>,
    pub backend_url: Option<String>,
    pub log_dir: Option<PathBuf>,
    pub policy: Option<PolicyKind>,
}

impl GatewayConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Builds the effective configuration. `env` is a lookup so tests need
    /// not touch the process environment.
    pub fn load(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        cli: &Overrides,
    ) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text, path)?
            }
            None => Self::default(),
        };
        if let Some(url) = env(ENV_BACKEND_URL).filter(|s| !s.is_empty()) {
            config.backend.url = Some(url);
            config.backend.kind = BackendKind::Remote;
        }
        if let Some(dir) = env(ENV_LOG_DIR).filter(|s| !s.is_empty()) {
            config.log_dir = Some(dir.into());
        }
        if let Some(listen) = cli.listen {
            config.listen = listen;
        }
        if let Some(url) = &cli.backend_url {
            config.backend.url = Some(url.clone());
            config.backend.kind = BackendKind::Remote;
        }
        if let Some(dir) = &cli.log_dir {
            config.log_dir = Some(dir.clone());
        }
        if let Some(kind) = cli.policy {
            config.policy.kind = kind;
        }
        Ok(config)
    }

    /// Checks the startup invariants, creating the log directory if needed.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.backend.kind == BackendKind::Remote && self.backend.url.as_deref().is_none_or(str::is_empty) {
            return Err(ConfigError::MissingUrl);
        }
        self.session
            .validate()
            .map_err(|e| ConfigError::Session(e.to_string()))?;
        if let Some(dir) = &self.log_dir {
            let err = |source| ConfigError::LogDir {
                path: dir.clone(),
                source,
            };
            std::fs::create_dir_all(dir).map_err(err)?;
            let probe = dir.join(".write-probe");
            std::fs::write(&probe, b"").map_err(err)?;
            let _ = std::fs::remove_file(probe);
        }
        Ok(())
    }

    pub fn backend(&self) -> Arc<dyn GenerationBackend> {
        match self.backend.kind {
            BackendKind::Stub if self.backend.stub_latency_ms > 0 => Arc::new(StubBackend::with_latency(
                Duration::from_millis(self.backend.stub_latency_ms),
            )),
            BackendKind::Stub => Arc::new(StubBackend::new()),
            BackendKind::Remote => Arc::new(HttpBackend::new(
                self.backend.url.as_deref().unwrap_or_default(),
                Duration::from_millis(self.backend.timeout_ms),
            )),
        }
    }

    pub fn policy(&self) -> Policy {
        Policy::new(self.policy.kind, self.backend())
    }
}
