//! Overlap-capable human/bot chat.
//!
//! The bot sees the user's message while it is being typed and may
//! backchannel ("yeah") or start answering before the user hits Enter; the
//! user may interrupt the bot mid-response by sending. This crate holds the
//! pieces that do not need a network:
//!
//! - [`wire`] and [`log`]: the frame codec and the append-only conversation log;
//! - [`engine`]: the per-session state machine;
//! - [`policy`]: the await/overlap policies and generation backends;
//! - [`analytics`]: conversation metrics computed from a log;
//! - [`corpus`]: overlap-tagged sample construction and evaluation scoring;
//! - [`transcript`] and [`sim`]: transcripts, virtual-time runs and replay.

pub mod analytics;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod log;
pub mod policy;
pub mod sim;
pub mod transcript;
pub mod types;
pub mod wire;

pub use config::SessionConfig;
pub use engine::{Effect, Session};
pub use log::{ConversationLog, LogEntry, Origin};
pub use types::{DialogueAct, DraftState, Message, PolicyDecision, Role, TimingDecision};
pub use wire::{decode_event, encode_event, WireEvent};

// The guide's examples run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sessions.md")]
    mod sessions {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/logs.md")]
    mod logs {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
