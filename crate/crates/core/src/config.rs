use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config field `{field}` must be positive")]
pub struct ConfigError {
    pub field: &'static str,
}

/// Per-session timing and budget knobs. All durations are milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Client-side coalescing window for draft snapshots.
    pub debounce_ms: u64,
    /// Typing pause after which the overlap policy may be consulted.
    pub trigger_pause_ms: u64,
    pub min_trigger_tokens: usize,
    /// Minimum spacing between two overlap-policy invocations.
    pub cooldown_ms: u64,
    pub max_backchannels_per_draft: u32,
    pub max_preemptive_per_draft: u32,
    /// An interrupted response longer than this is sealed with "..." instead of deleted.
    pub interrupt_seal_threshold_chars: usize,
    pub bot_chars_per_second: u32,
    pub overlap_enabled: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            debounce_ms: 50,
            trigger_pause_ms: 700,
            min_trigger_tokens: 3,
            cooldown_ms: 2000,
            max_backchannels_per_draft: 1,
            max_preemptive_per_draft: 1,
            interrupt_seal_threshold_chars: 130,
            bot_chars_per_second: 30,
            overlap_enabled: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks: [(&'static str, bool); 8] = [
            ("debounce_ms", self.debounce_ms > 0),
            ("trigger_pause_ms", self.trigger_pause_ms > 0),
            ("min_trigger_tokens", self.min_trigger_tokens > 0),
            ("cooldown_ms", self.cooldown_ms > 0),
            ("max_backchannels_per_draft", self.max_backchannels_per_draft > 0),
            ("max_preemptive_per_draft", self.max_preemptive_per_draft > 0),
            ("interrupt_seal_threshold_chars", self.interrupt_seal_threshold_chars > 0),
            ("bot_chars_per_second", self.bot_chars_per_second > 0),
        ];
        match checks.into_iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(ConfigError { field }),
            None => Ok(()),
        }
    }

    /// Applies a JSON object of overrides on top of `self`.
    ///
    /// Unknown keys, wrongly typed values (including negatives) and non-positive
    /// values are all rejected.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self, OverrideError> {
        let patch = match overrides {
            serde_json::Value::Null => return Ok(self.clone()),
            serde_json::Value::Object(map) => map,
            _ => return Err(OverrideError::NotAnObject),
        };
        let mut base = serde_json::to_value(self).expect("config serializes");
        let obj = base.as_object_mut().expect("config is an object");
        for (key, value) in patch {
            if !obj.contains_key(key) {
                return Err(OverrideError::UnknownField(key.clone()));
            }
            obj.insert(key.clone(), value.clone());
        }
        let merged: SessionConfig =
            serde_json::from_value(base).map_err(|e| OverrideError::Invalid(e.to_string()))?;
        merged.validate()?;
        Ok(merged)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverrideError {
    #[error("overrides must be a JSON object")]
    NotAnObject,
    #[error("unknown config field `{0}`")]
    UnknownField(String),
    #[error("invalid override: {0}")]
    Invalid(String),
    #[error(transparent)]
    NotPositive(#[from] ConfigError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults() {
        let c = SessionConfig::default();
        assert_eq!(c.interrupt_seal_threshold_chars, 130);
        assert_eq!(c.bot_chars_per_second, 30);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn override_threshold() {
        let c = SessionConfig::default()
            .with_overrides(&json!({"interrupt_seal_threshold_chars": 200}))
            .unwrap();
        assert_eq!(c.interrupt_seal_threshold_chars, 200);
        assert_eq!(c.cooldown_ms, 2000);
    }

    #[test]
    fn bad_overrides() {
        let base = SessionConfig::default();
        assert!(matches!(
            base.with_overrides(&json!({"interrupt_seal_threshold_chars": -1})),
            Err(OverrideError::Invalid(_))
        ));
        assert!(matches!(
            base.with_overrides(&json!({"cooldown_ms": 0})),
            Err(OverrideError::NotPositive(ConfigError { field: "cooldown_ms" }))
        ));
        assert!(matches!(
            base.with_overrides(&json!({"nope": 1})),
            Err(OverrideError::UnknownField(_))
        ));
        assert_eq!(base.with_overrides(&json!([1])), Err(OverrideError::NotAnObject));
    }
}
