//! Shared domain types: roles, policy decisions, messages and drafts.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which party a message or draft belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Bot,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Bot => "bot",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether the bot waits for the user or overlaps with their typing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingDecision {
    Await,
    Overlap,
}

impl TimingDecision {
    pub fn tag(self) -> &'static str {
        match self {
            TimingDecision::Await => "[Await]",
            TimingDecision::Overlap => "[Overlap]",
        }
    }
}

/// Kind of overlapping contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DialogueAct {
    /// Listener cue such as "yeah" (backchannel).
    Understanding,
    /// Preemptive reply to a turn that is still being typed.
    Answer,
}

impl DialogueAct {
    pub fn tag(self) -> &'static str {
        match self {
            DialogueAct::Understanding => "[Understanding]",
            DialogueAct::Answer => "[Answer]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("an overlap decision needs a dialogue act")]
    MissingAct,
    #[error("an overlap decision needs a non-empty utterance")]
    MissingUtterance,
    #[error("an await decision carries no act or utterance")]
    AwaitWithPayload,
}

/// Outcome of one policy invocation.
///
/// Construction goes through [`PolicyDecision::wait`], [`PolicyDecision::overlap`]
/// or [`PolicyDecision::try_new`]; the fields are private so an `Await` can never
/// carry an utterance and an `Overlap` can never lack an act.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolicyDecision {
    timing: TimingDecision,
    act: Option<DialogueAct>,
    utterance: Option<String>,
}

impl PolicyDecision {
    pub fn wait() -> Self {
        Self {
            timing: TimingDecision::Await,
            act: None,
            utterance: None,
        }
    }

    /// Surrounding whitespace is trimmed from `utterance`; an empty result is rejected.
    pub fn overlap(act: DialogueAct, utterance: impl Into<String>) -> Result<Self, DecisionError> {
        let mut utterance = utterance.into();
        let trimmed = utterance.trim();
        if trimmed.len() != utterance.len() {
            utterance = trimmed.to_string();
        }
        if utterance.is_empty() {
            return Err(DecisionError::MissingUtterance);
        }
        Ok(Self {
            timing: TimingDecision::Overlap,
            act: Some(act),
            utterance: Some(utterance),
        })
    }

    pub fn try_new(
        timing: TimingDecision,
        act: Option<DialogueAct>,
        utterance: Option<String>,
    ) -> Result<Self, DecisionError> {
        match timing {
            TimingDecision::Await => {
                if act.is_some() || utterance.is_some() {
                    Err(DecisionError::AwaitWithPayload)
                } else {
                    Ok(Self::wait())
                }
            }
            TimingDecision::Overlap => {
                let act = act.ok_or(DecisionError::MissingAct)?;
                let utterance = utterance.ok_or(DecisionError::MissingUtterance)?;
                Self::overlap(act, utterance)
            }
        }
    }

    pub fn timing(&self) -> TimingDecision {
        self.timing
    }

    pub fn act(&self) -> Option<DialogueAct> {
        self.act
    }

    pub fn utterance(&self) -> Option<&str> {
        self.utterance.as_deref()
    }

    pub fn is_overlap(&self) -> bool {
        self.timing == TimingDecision::Overlap
    }

    /// Serializes into the tag grammar, e.g. `[Overlap] [Understanding] yeah`.
    pub fn to_tags(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PolicyDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.act, &self.utterance) {
            (Some(act), Some(utterance)) => {
                write!(f, "{} {} {}", self.timing.tag(), act.tag(), utterance)
            }
            _ => f.write_str(self.timing.tag()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("sent_ts {sent} precedes draft_started_ts {started}")]
    TimeTravel { sent: u64, started: u64 },
    #[error("only bot messages can be sealed")]
    SealedUserMessage,
    #[error("sealed message must end with \"...\"")]
    SealWithoutEllipsis,
    #[error("only bot messages carry a dialogue act")]
    UserAct,
}

/// A finalized chat message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub id: u64,
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub sealed_with_ellipsis: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act: Option<DialogueAct>,
    pub sent_ts: u64,
    pub draft_started_ts: u64,
}

impl Message {
    pub const ELLIPSIS: &'static str = "...";

    pub fn validate(&self) -> Result<(), MessageError> {
        if self.sent_ts < self.draft_started_ts {
            return Err(MessageError::TimeTravel {
                sent: self.sent_ts,
                started: self.draft_started_ts,
            });
        }
        if self.sealed_with_ellipsis {
            if self.role != Role::Bot {
                return Err(MessageError::SealedUserMessage);
            }
            if !self.text.ends_with(Self::ELLIPSIS) {
                return Err(MessageError::SealWithoutEllipsis);
            }
        }
        if self.role == Role::User && self.act.is_some() {
            return Err(MessageError::UserAct);
        }
        Ok(())
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// A party's live, unsent text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftState {
    pub owner: Role,
    pub text: String,
    pub revision: u64,
    pub last_change_ts: u64,
    /// Timestamp of the first change since the draft was last empty after a send.
    pub started_ts: Option<u64>,
    pub backchannels_used: u32,
    pub preemptive_used: u32,
}

impl DraftState {
    pub fn new(owner: Role) -> Self {
        Self {
            owner,
            text: String::new(),
            revision: 0,
            last_change_ts: 0,
            started_ts: None,
            backchannels_used: 0,
            preemptive_used: 0,
        }
    }

    pub fn token_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    pub fn ends_with_whitespace(&self) -> bool {
        self.text.chars().last().is_some_and(char::is_whitespace)
    }
}

/// A draft change is a deletion when the previous text is not a prefix of the new one.
pub fn is_deletion(previous: &str, next: &str) -> bool {
    !next.starts_with(previous)
}
