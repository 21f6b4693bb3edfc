//! Frames exchanged between a chat client and the gateway.
//!
//! Every frame is a single-line JSON object whose `"type"` field selects the
//! variant. Client frames are `hello`, `draft_update` and `send`; everything
//! else flows from the server to the client.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Message, Role};

/// How an interrupted bot response is taken back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetractMode {
    /// The partial response disappears.
    Full,
    /// The partial response stays, terminated with "...".
    Seal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BotStatus {
    Typing,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireEvent {
    Hello { session_id: String },
    DraftUpdate { text: String, ts: u64 },
    Send { ts: u64 },
    PeerDraft { role: Role, text: String },
    BotChar { text_chunk: String },
    BotRetract { mode: RetractMode, visible_text: String },
    BotSend { message: Message },
    UserMessageAck { message: Message },
    Status { bot: BotStatus },
    Error { code: String, detail: String },
}

impl WireEvent {
    /// The `"type"` discriminator as it appears on the wire.
    pub fn kind(&self) -> &'static str {
        match self {
            WireEvent::Hello { .. } => "hello",
            WireEvent::DraftUpdate { .. } => "draft_update",
            WireEvent::Send { .. } => "send",
            WireEvent::PeerDraft { .. } => "peer_draft",
            WireEvent::BotChar { .. } => "bot_char",
            WireEvent::BotRetract { .. } => "bot_retract",
            WireEvent::BotSend { .. } => "bot_send",
            WireEvent::UserMessageAck { .. } => "user_message_ack",
            WireEvent::Status { .. } => "status",
            WireEvent::Error { .. } => "error",
        }
    }

    pub fn is_client_frame(&self) -> bool {
        matches!(
            self,
            WireEvent::Hello { .. } | WireEvent::DraftUpdate { .. } | WireEvent::Send { .. }
        )
    }

    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        WireEvent::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("PARSE_ERROR: {detail}")]
pub struct ParseError {
    pub detail: String,
}

impl ParseError {
    pub const CODE: &'static str = "PARSE_ERROR";
}

/// Encodes a frame as one line of JSON (no trailing newline).
pub fn encode_event(event: &WireEvent) -> String {
    // serde_json escapes control characters, so the output never spans lines.
    serde_json::to_string(event).expect("wire events always serialize")
}

pub fn decode_event(line: &str) -> Result<WireEvent, ParseError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    serde_json::from_str(line).map_err(|e| ParseError {
        detail: e.to_string(),
    })
}

/// Like [`decode_event`] but accepts arbitrary bytes.
pub fn decode_event_bytes(bytes: &[u8]) -> Result<WireEvent, ParseError> {
    let line = std::str::from_utf8(bytes).map_err(|e| ParseError {
        detail: format!("invalid utf-8: {e}"),
    })?;
    decode_event(line)
}

/// What the validator needs to know about the session a frame arrives at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSummary {
    pub session_id: String,
    pub bot_typing: bool,
    pub draft_rev: u64,
    pub draft_empty: bool,
    pub last_draft_ts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    EmptySend,
    StaleRevision,
    BadSession,
    WrongDirection,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptySend => "EMPTY_SEND",
            ViolationCode::StaleRevision => "STALE_REVISION",
            ViolationCode::BadSession => "BAD_SESSION",
            ViolationCode::WrongDirection => "WRONG_DIRECTION",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}: {detail}", code.as_str())]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

impl Violation {
    fn new(code: ViolationCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_wire(&self) -> WireEvent {
        WireEvent::error(self.code.as_str(), self.detail.clone())
    }
}

/// Checks that a client frame is legal in the current session state.
pub fn validate_event(event: &WireEvent, state: &StateSummary) -> Result<(), Violation> {
    match event {
        WireEvent::Hello { session_id } => {
            if *session_id != state.session_id {
                return Err(Violation::new(
                    ViolationCode::BadSession,
                    format!("unknown session `{session_id}`"),
                ));
            }
        }
        WireEvent::DraftUpdate { ts, .. } => {
            if state.draft_rev > 0 && *ts < state.last_draft_ts {
                return Err(Violation::new(
                    ViolationCode::StaleRevision,
                    format!("draft at ts {ts} is older than revision {} at ts {}", state.draft_rev, state.last_draft_ts),
                ));
            }
        }
        WireEvent::Send { .. } => {
            if state.draft_empty {
                return Err(Violation::new(ViolationCode::EmptySend, "cannot send an empty draft"));
            }
        }
        other => {
            return Err(Violation::new(
                ViolationCode::WrongDirection,
                format!("`{}` is a server frame", other.kind()),
            ))
        }
    }
    Ok(())
}
