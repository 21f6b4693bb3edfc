//! Parser for the tag grammar a policy model answers in:
//!
//! ```text
//! output := "[Await]" | "[Overlap]" WS act WS utterance
//! act    := "[Understanding]" | "[Answer]"
//! ```

use thiserror::Error;

use crate::types::{DialogueAct, PolicyDecision};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("MALFORMED: {reason}")]
pub struct Malformed {
    pub reason: &'static str,
}

fn malformed(reason: &'static str) -> Malformed {
    Malformed { reason }
}

pub fn parse_tagged_output(text: &str) -> Result<PolicyDecision, Malformed> {
    let text = text.trim();
    if text == "[Await]" {
        return Ok(PolicyDecision::wait());
    }
    let rest = text
        .strip_prefix("[Overlap]")
        .ok_or_else(|| malformed("expected [Await] or [Overlap]"))?;
    let rest = require_whitespace(rest, "missing dialogue act")?;
    let (act, rest) = if let Some(r) = rest.strip_prefix("[Understanding]") {
        (DialogueAct::Understanding, r)
    } else if let Some(r) = rest.strip_prefix("[Answer]") {
        (DialogueAct::Answer, r)
    } else {
        return Err(malformed("expected [Understanding] or [Answer]"));
    };
    let utterance = require_whitespace(rest, "missing utterance")?;
    if utterance.is_empty() {
        return Err(malformed("missing utterance"));
    }
    PolicyDecision::overlap(act, utterance).map_err(|_| malformed("missing utterance"))
}

/// Strips the mandatory whitespace run before the next grammar element.
fn require_whitespace<'a>(s: &'a str, reason: &'static str) -> Result<&'a str, Malformed> {
    let trimmed = s.trim_start();
    if trimmed.len() == s.len() {
        return Err(malformed(reason));
    }
    Ok(trimmed)
}

/// Fail-quiet variant used by the engine: anything malformed means wait.
pub fn parse_or_await(text: &str) -> PolicyDecision {
    parse_tagged_output(text).unwrap_or_else(|_| PolicyDecision::wait())
}
