//! Registry of live and finished sessions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use overlapchat::policy::Policy;
use overlapchat::SessionConfig;
use thiserror::Error;

use crate::live::{spawn_session, SessionHandle, SessionStatus};

#[derive(Debug, Error)]
pub enum HubError {
    #[error("LIMIT: {0} sessions are already active")]
    Limit(usize),
    #[error("BAD_OVERRIDE: {0}")]
    BadOverride(String),
    #[error("LOG_IO: {0}")]
    LogIo(#[from] std::io::Error),
}

impl HubError {
    pub fn code(&self) -> &'static str {
        match self {
            HubError::Limit(_) => "LIMIT",
            HubError::BadOverride(_) => "BAD_OVERRIDE",
            HubError::LogIo(_) => "LOG_IO",
        }
    }
}

pub struct Hub {
    defaults: SessionConfig,
    policy: Policy,
    log_dir: Option<PathBuf>,
    max_sessions: usize,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl Hub {
    pub fn new(defaults: SessionConfig, policy: Policy, log_dir: Option<PathBuf>, max_sessions: usize) -> Self {
        Self {
            defaults,
            policy,
            log_dir,
            max_sessions,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn active(&self) -> usize {
        self.sessions
            .read()
            .expect("hub poisoned")
            .values()
            .filter(|s| s.status() == SessionStatus::Active)
            .count()
    }

    /// Starts a session. `overrides` is a JSON object of config fields that
    /// replace the server defaults for this session only.
    pub fn create(&self, overrides: Option<&serde_json::Value>) -> Result<Arc<SessionHandle>, HubError> {
        let config = match overrides {
            Some(v) if !v.is_null() => self
                .defaults
                .with_overrides(v)
                .map_err(|e| HubError::BadOverride(e.to_string()))?,
            _ => self.defaults.clone(),
        };
        let mut sessions = self.sessions.write().expect("hub poisoned");
        let active = sessions.values().filter(|s| s.status() == SessionStatus::Active).count();
        if active >= self.max_sessions {
            return Err(HubError::Limit(active));
        }
        let id = loop {
            let id = format!("{:016x}", rand::random::<u64>());
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let handle = spawn_session(id.clone(), config, self.policy.clone(), self.log_dir.clone())?;
        sessions.insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Option<Arc<SessionHandle>> {
        self.sessions.read().expect("hub poisoned").get(id).cloned()
    }

    /// Closes every active session, e.g. on shutdown.
    pub fn close_all(&self) {
        for session in self.sessions.read().expect("hub poisoned").values() {
            session.close();
        }
    }
}
