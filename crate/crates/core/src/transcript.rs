//! Finalized-message view of a conversation log.

use std::fmt;

use serde::Serialize;

use crate::log::{ConversationLog, LogEntry};
use crate::types::{Message, Role};
use crate::wire::WireEvent;

fn finalized(entry: &LogEntry) -> Option<&Message> {
    match &entry.event {
        WireEvent::UserMessageAck { message } | WireEvent::BotSend { message } => Some(message),
        _ => None,
    }
}

/// Messages sorted by finalization time; a user send and a bot finalization
/// at the same instant put the user's message first.
fn ordered(log: &ConversationLog) -> Vec<(&LogEntry, &Message)> {
    let mut out: Vec<_> = log
        .entries()
        .iter()
        .filter_map(|e| finalized(e).map(|m| (e, m)))
        .collect();
    out.sort_by_key(|(e, m)| (e.ts, m.role != Role::User, e.seq));
    out
}

pub fn message_order(log: &ConversationLog) -> Vec<u64> {
    ordered(log).into_iter().map(|(_, m)| m.id).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn from_log(log: &ConversationLog) -> Self {
        Self {
            messages: ordered(log).into_iter().map(|(_, m)| m.clone()).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// One line per message: `<sent_ts>ms <role>: [<Act>] <text>`.
impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.messages {
            write!(f, "{}ms {}: ", m.sent_ts, m.role)?;
            if let Some(act) = m.act {
                write!(f, "{} ", act.tag())?;
            }
            writeln!(f, "{}", m.text)?;
        }
        Ok(())
    }
}
