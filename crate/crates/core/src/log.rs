//! Append-only conversation log, persisted as newline-delimited JSON.
//!
//! Each line is `{"seq":int,"ts":unix_ms,"origin":"user"|"bot"|"system","event":{..}}`.
//! The first entry of a session log is a `system` hello that also carries the
//! session's config snapshot under an extra `"config"` key.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SessionConfig;
use crate::types::Role;
use crate::wire::WireEvent;

/// Allowed backwards clock jitter between consecutive entries.
pub const TS_TOLERANCE_MS: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    User,
    Bot,
    System,
}

impl From<Role> for Origin {
    fn from(role: Role) -> Self {
        match role {
            Role::User => Origin::User,
            Role::Bot => Origin::Bot,
        }
    }
}

impl Origin {
    /// The origin a frame is attributed to when the engine emits it.
    pub fn of(event: &WireEvent) -> Origin {
        match event {
            WireEvent::DraftUpdate { .. } | WireEvent::Send { .. } | WireEvent::UserMessageAck { .. } => {
                Origin::User
            }
            WireEvent::PeerDraft { role, .. } => (*role).into(),
            WireEvent::BotChar { .. }
            | WireEvent::BotRetract { .. }
            | WireEvent::BotSend { .. }
            | WireEvent::Status { .. } => Origin::Bot,
            WireEvent::Hello { .. } | WireEvent::Error { .. } => Origin::System,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub seq: u64,
    pub ts: u64,
    pub origin: Origin,
    pub event: WireEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SessionConfig>,
}

impl LogEntry {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log entries always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("REJECTED: ts {ts} is earlier than the last entry's ts {last}")]
    Rejected { ts: u64, last: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("CORRUPT_LOG at seq {seq}: {detail}")]
pub struct CorruptLog {
    pub seq: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConversationLog {
    pub session_id: String,
    pub config: SessionConfig,
    entries: Vec<LogEntry>,
}

impl ConversationLog {
    pub fn new(session_id: impl Into<String>, config: SessionConfig) -> Self {
        Self {
            session_id: session_id.into(),
            config,
            entries: Vec::new(),
        }
    }

    /// A log whose first entry is the session header.
    pub fn with_header(session_id: impl Into<String>, config: SessionConfig, ts: u64) -> Self {
        let mut log = Self::new(session_id, config);
        let header = LogEntry {
            seq: 0,
            ts,
            origin: Origin::System,
            event: WireEvent::Hello {
                session_id: log.session_id.clone(),
            },
            config: Some(log.config.clone()),
        };
        log.entries.push(header);
        log
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_ts(&self) -> Option<u64> {
        self.entries.last().map(|e| e.ts)
    }

    /// Appends an event. A timestamp up to [`TS_TOLERANCE_MS`] behind the last
    /// entry is clamped forward so `ts` stays non-decreasing; anything older is rejected.
    pub fn append(&mut self, origin: Origin, event: WireEvent, ts: u64) -> Result<&LogEntry, LogError> {
        let ts = match self.last_ts() {
            Some(last) if ts + TS_TOLERANCE_MS < last => return Err(LogError::Rejected { ts, last }),
            Some(last) => ts.max(last),
            None => ts,
        };
        let seq = self.entries.len() as u64;
        self.entries.push(LogEntry {
            seq,
            ts,
            origin,
            event,
            config: None,
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            let _ = writeln!(out, "{}", entry.to_line());
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorruptLog> {
        Self::from_reader(text.as_bytes())
    }

    /// Parses a log, stopping at the first line that is not a well-formed,
    /// in-sequence entry.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, CorruptLog> {
        let mut log = ConversationLog::default();
        for (index, line) in reader.lines().enumerate() {
            let seq = index as u64;
            let line = line.map_err(|e| CorruptLog {
                seq,
                detail: e.to_string(),
            })?;
            let entry: LogEntry = serde_json::from_str(&line).map_err(|e| CorruptLog {
                seq,
                detail: e.to_string(),
            })?;
            if entry.seq != seq {
                return Err(CorruptLog {
                    seq,
                    detail: format!("expected seq {seq}, found {}", entry.seq),
                });
            }
            if let Some(last) = log.last_ts() {
                if entry.ts < last {
                    return Err(CorruptLog {
                        seq,
                        detail: format!("ts {} goes backwards from {last}", entry.ts),
                    });
                }
            }
            if seq == 0 {
                if let WireEvent::Hello { session_id } = &entry.event {
                    log.session_id = session_id.clone();
                }
                if let Some(config) = &entry.config {
                    log.config = config.clone();
                }
            }
            log.entries.push(entry);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(ts: u64) -> WireEvent {
        WireEvent::DraftUpdate {
            text: "x".into(),
            ts,
        }
    }

    #[test]
    fn seqs_start_at_zero_and_increase() {
        let mut log = ConversationLog::new("s", SessionConfig::default());
        assert_eq!(log.append(Origin::User, draft(0), 1000).unwrap().seq, 0);
        assert_eq!(log.append(Origin::User, draft(5), 1005).unwrap().seq, 1);
    }

    #[test]
    fn backwards_ts_is_rejected() {
        let mut log = ConversationLog::new("s", SessionConfig::default());
        log.append(Origin::User, draft(0), 9000).unwrap();
        assert_eq!(
            log.append(Origin::User, draft(0), 5000).unwrap_err(),
            LogError::Rejected { ts: 5000, last: 9000 }
        );
        assert_eq!(log.len(), 1);
        // jitter within tolerance is clamped
        assert_eq!(log.append(Origin::User, draft(0), 8999).unwrap().ts, 9000);
    }

    #[test]
    fn header_carries_config() {
        let cfg = SessionConfig {
            interrupt_seal_threshold_chars: 200,
            ..SessionConfig::default()
        };
        let log = ConversationLog::with_header("abc", cfg.clone(), 77);
        let text = log.to_jsonl();
        assert!(text.starts_with(r#"{"seq":0,"ts":77,"origin":"system","event":{"type":"hello","session_id":"abc"},"config":"#));
        let parsed = ConversationLog::from_jsonl(&text).unwrap();
        assert_eq!(parsed.session_id, "abc");
        assert_eq!(parsed.config, cfg);
        assert_eq!(parsed, log);
    }

    #[test]
    fn truncated_line_is_reported_with_its_seq() {
        let mut log = ConversationLog::new("s", SessionConfig::default());
        for i in 0..3 {
            log.append(Origin::User, draft(i), 100 + i).unwrap();
        }
        let text = log.to_jsonl();
        let cut = &text[..text.len() - 10];
        let err = ConversationLog::from_jsonl(cut).unwrap_err();
        assert_eq!(err.seq, 2);
    }

    #[test]
    fn empty_text_is_empty_log() {
        assert!(ConversationLog::from_jsonl("").unwrap().is_empty());
    }
}
