//! Await/overlap policies.
//!
//! Two policies are available. The rule policy is a deterministic reference
//! that backchannels on a fixed token cadence and answers questions early. The
//! model policy renders the context as a prompt, sends it to a
//! [`GenerationBackend`] and parses the tag-grammar reply.

mod backend;
mod prompt;
mod tags;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{DialogueAct, Message, PolicyDecision, TimingDecision};

#[cfg(feature = "http-backend")]
pub use backend::HttpBackend;
pub use backend::{
    BackendError, CancelToken, GenerationBackend, GenerationRequest, GenerationResponse, StubBackend,
    StubCall, STUB_ANSWER_TEMPLATE,
};
pub use prompt::{render_prompt, BOT_TURN_MARKER, PARTIAL_TURN_MARKER, USER_TURN_MARKER};
pub use tags::{parse_or_await, parse_tagged_output, Malformed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// The user is still typing; the policy may overlap.
    OverlapTrigger,
    /// The user sent a message; a complete reply is needed.
    FullResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DraftBudgets {
    pub backchannels_used: u32,
    pub backchannels_left: u32,
    pub preemptive_left: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub transcript: Vec<Message>,
    pub live_draft: String,
    pub budgets: DraftBudgets,
    pub mode: PolicyMode,
}

impl PolicyContext {
    pub fn full_response(transcript: Vec<Message>) -> Self {
        Self {
            transcript,
            live_draft: String::new(),
            budgets: DraftBudgets::default(),
            mode: PolicyMode::FullResponse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackchannelSelection {
    #[default]
    Rotate,
    Seeded {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackchannelTable {
    utterances: Vec<String>,
    #[serde(default)]
    pub selection: BackchannelSelection,
}

impl Default for BackchannelTable {
    fn default() -> Self {
        Self::new(["yeah", "uh huh", "right", "mm hmm"]).expect("default table is non-empty")
    }
}

impl BackchannelTable {
    /// Returns `None` for an empty table.
    pub fn new<I, S>(utterances: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let utterances: Vec<String> = utterances.into_iter().map(Into::into).collect();
        if utterances.is_empty() {
            return None;
        }
        Some(Self {
            utterances,
            selection: BackchannelSelection::Rotate,
        })
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.selection = BackchannelSelection::Seeded { seed };
        self
    }

    pub fn utterances(&self) -> &[String] {
        &self.utterances
    }
}

/// Picks the backchannel for the `k`-th cue of the current draft.
pub fn select_backchannel(k: usize, table: &BackchannelTable) -> &str {
    let n = table.utterances.len();
    let index = match table.selection {
        BackchannelSelection::Rotate => k % n,
        BackchannelSelection::Seeded { seed } => {
            ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64)).random_range(0..n)
        }
    };
    &table.utterances[index]
}

pub const QUESTION_STARTERS: &[&str] = &[
    "what", "who", "when", "where", "why", "how", "do", "does", "did", "is", "are", "can", "could",
    "would", "will", "have", "has",
];

/// Rule-policy verdict. Early answers need an utterance from a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyPlan {
    Decided(PolicyDecision),
    DelegateAnswer,
}

impl PolicyPlan {
    pub fn timing(&self) -> TimingDecision {
        match self {
            PolicyPlan::Decided(d) => d.timing(),
            PolicyPlan::DelegateAnswer => TimingDecision::Overlap,
        }
    }

    pub fn act(&self) -> Option<DialogueAct> {
        match self {
            PolicyPlan::Decided(d) => d.act(),
            PolicyPlan::DelegateAnswer => Some(DialogueAct::Answer),
        }
    }
}

/// Deterministic reference policy for the overlap trigger.
///
/// 1. a draft opening with a question word, at least 4 tokens long, answers early;
/// 2. otherwise every 6th token (6, 12, ...) earns a backchannel;
/// 3. otherwise wait.
///
/// Each rule only fires while its per-draft budget lasts.
pub fn rule_policy(ctx: &PolicyContext, table: &BackchannelTable) -> PolicyPlan {
    let tokens: Vec<String> = ctx
        .live_draft
        .split_whitespace()
        .map(str::to_lowercase)
        .collect();
    let Some(first) = tokens.first() else {
        return PolicyPlan::Decided(PolicyDecision::wait());
    };
    if QUESTION_STARTERS.contains(&first.as_str()) && tokens.len() >= 4 && ctx.budgets.preemptive_left > 0 {
        return PolicyPlan::DelegateAnswer;
    }
    if tokens.len() >= 6 && tokens.len().is_multiple_of(6) && ctx.budgets.backchannels_left > 0 {
        let cue = select_backchannel(ctx.budgets.backchannels_used as usize, table);
        let decision =
            PolicyDecision::overlap(DialogueAct::Understanding, cue).expect("backchannel table entries are non-empty");
        return PolicyPlan::Decided(decision);
    }
    PolicyPlan::Decided(PolicyDecision::wait())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Rule,
    Model,
}

/// Sent in place of a full response when the backend fails.
pub const APOLOGY: &str = "Sorry, I lost my train of thought. Could you say that again?";

/// What a policy invocation hands back to the session engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyReply {
    Decision(PolicyDecision),
    FullResponse(String),
    Cancelled,
}

/// A policy bound to a backend.
#[derive(Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    pub backend: Arc<dyn GenerationBackend>,
    pub backchannels: BackchannelTable,
    pub max_chars: usize,
    pub stop: Vec<String>,
}

impl std::fmt::Debug for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Policy")
            .field("kind", &self.kind)
            .field("backend", &self.backend.name())
            .field("max_chars", &self.max_chars)
            .finish()
    }
}

impl Policy {
    pub fn new(kind: PolicyKind, backend: Arc<dyn GenerationBackend>) -> Self {
        Self {
            kind,
            backend,
            backchannels: BackchannelTable::default(),
            max_chars: 400,
            stop: vec![format!("\n{USER_TURN_MARKER}")],
        }
    }

    pub fn stub(kind: PolicyKind) -> Self {
        Self::new(kind, Arc::new(StubBackend::new()))
    }

    fn request(&self, ctx: &PolicyContext) -> GenerationRequest {
        GenerationRequest {
            prompt: render_prompt(ctx),
            max_chars: self.max_chars,
            stop: self.stop.clone(),
        }
    }

    /// Runs one invocation. Backend failures degrade to `Await` (while typing)
    /// or to [`APOLOGY`] (after a send); cancellation is reported as such.
    pub async fn respond(&self, ctx: &PolicyContext, cancel: &CancelToken) -> PolicyReply {
        match ctx.mode {
            PolicyMode::FullResponse => match self.backend.generate(&self.request(ctx), cancel).await {
                Ok(r) => match r.text.trim() {
                    "" => PolicyReply::FullResponse(APOLOGY.to_string()),
                    text => PolicyReply::FullResponse(text.to_string()),
                },
                Err(BackendError::Cancelled) => PolicyReply::Cancelled,
                Err(_) => PolicyReply::FullResponse(APOLOGY.to_string()),
            },
            PolicyMode::OverlapTrigger => {
                let generated = match self.kind {
                    PolicyKind::Rule => match rule_policy(ctx, &self.backchannels) {
                        PolicyPlan::Decided(d) => return PolicyReply::Decision(d),
                        PolicyPlan::DelegateAnswer => self
                            .backend
                            .generate(&self.request(ctx), cancel)
                            .await
                            .map(|r| PolicyDecision::overlap(DialogueAct::Answer, r.text).unwrap_or_else(|_| PolicyDecision::wait())),
                    },
                    PolicyKind::Model => self
                        .backend
                        .generate(&self.request(ctx), cancel)
                        .await
                        .map(|r| parse_or_await(&r.text)),
                };
                match generated {
                    Ok(d) => PolicyReply::Decision(d),
                    Err(BackendError::Cancelled) => PolicyReply::Cancelled,
                    Err(_) => PolicyReply::Decision(PolicyDecision::wait()),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trigger_ctx(draft: &str) -> PolicyContext {
        PolicyContext {
            transcript: vec![],
            live_draft: draft.into(),
            budgets: DraftBudgets {
                backchannels_used: 0,
                backchannels_left: 1,
                preemptive_left: 1,
            },
            mode: PolicyMode::OverlapTrigger,
        }
    }

    #[test]
    fn backchannel_rotation() {
        let t = BackchannelTable::default();
        assert_eq!(select_backchannel(0, &t), "yeah");
        assert_eq!(select_backchannel(1, &t), "uh huh");
        assert_eq!(select_backchannel(4, &t), "yeah");
    }

    #[test]
    fn seeded_selection_is_reproducible() {
        let t = BackchannelTable::default().seeded(9);
        let a: Vec<_> = (0..8).map(|k| select_backchannel(k, &t).to_string()).collect();
        let b: Vec<_> = (0..8).map(|k| select_backchannel(k, &t).to_string()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_table_is_refused() {
        assert!(BackchannelTable::new(Vec::<String>::new()).is_none());
    }

    #[test]
    fn question_gets_early_answer() {
        let plan = rule_policy(&trigger_ctx("do you remember who the movie direc"), &BackchannelTable::default());
        assert_eq!(plan, PolicyPlan::DelegateAnswer);
        assert_eq!(plan.act(), Some(DialogueAct::Answer));
    }

    #[test]
    fn six_tokens_get_backchannel() {
        let plan = rule_policy(&trigger_ctx("today i went to the store"), &BackchannelTable::default());
        assert_eq!(
            plan,
            PolicyPlan::Decided(PolicyDecision::overlap(DialogueAct::Understanding, "yeah").unwrap())
        );
    }

    #[test]
    fn short_draft_waits() {
        let plan = rule_policy(&trigger_ctx("hello"), &BackchannelTable::default());
        assert_eq!(plan, PolicyPlan::Decided(PolicyDecision::wait()));
        assert_eq!(plan.timing(), TimingDecision::Await);
    }

    #[test]
    fn exhausted_budgets_wait() {
        let mut ctx = trigger_ctx("do you remember who the movie direc");
        ctx.budgets.preemptive_left = 0;
        // 7 tokens: not a multiple of six
        assert_eq!(rule_policy(&ctx, &BackchannelTable::default()).timing(), TimingDecision::Await);
        let mut ctx = trigger_ctx("today i went to the store");
        ctx.budgets.backchannels_left = 0;
        assert_eq!(rule_policy(&ctx, &BackchannelTable::default()).timing(), TimingDecision::Await);
    }

    #[tokio::test]
    async fn rule_policy_delegates_to_stub() {
        let policy = Policy::stub(PolicyKind::Rule);
        let reply = policy
            .respond(&trigger_ctx("do you remember who the movie direc"), &CancelToken::new())
            .await;
        assert_eq!(
            reply,
            PolicyReply::Decision(
                PolicyDecision::overlap(DialogueAct::Answer, "(re: direc) You mean the director?").unwrap()
            )
        );
    }

    #[tokio::test]
    async fn model_policy_with_non_tag_output_waits() {
        let policy = Policy::stub(PolicyKind::Model);
        let reply = policy.respond(&trigger_ctx("have you painted"), &CancelToken::new()).await;
        assert_eq!(reply, PolicyReply::Decision(PolicyDecision::wait()));
    }

    #[tokio::test]
    async fn full_response_echoes() {
        let msg = Message {
            id: 0,
            role: crate::types::Role::User,
            text: "hello".into(),
            sealed_with_ellipsis: false,
            act: None,
            sent_ts: 1,
            draft_started_ts: 0,
        };
        let policy = Policy::stub(PolicyKind::Rule);
        let reply = policy
            .respond(&PolicyContext::full_response(vec![msg]), &CancelToken::new())
            .await;
        assert_eq!(reply, PolicyReply::FullResponse("Echo: hello".into()));
    }

    #[tokio::test]
    async fn failures_degrade() {
        let policy = Policy::stub(PolicyKind::Rule);
        // no user turn at all: the stub cannot answer
        let reply = policy.respond(&PolicyContext::full_response(vec![]), &CancelToken::new()).await;
        assert_eq!(reply, PolicyReply::FullResponse(APOLOGY.into()));
        let cancelled = CancelToken::new();
        cancelled.cancel();
        let reply = policy
            .respond(&trigger_ctx("do you remember who the movie direc"), &cancelled)
            .await;
        assert_eq!(reply, PolicyReply::Cancelled);
    }
}
