//! Per-session state machine.
//!
//! The engine is a pure transition function: every operation mutates the
//! [`SessionState`] and returns a list of [`Effect`]s for the caller to carry
//! out (send frames, call the policy, cancel a generation, arm a timer). It
//! never performs I/O and never reads a clock; `now` is always passed in as
//! milliseconds since the session was created.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SessionConfig;
use crate::policy::{DraftBudgets, PolicyContext, PolicyMode, PolicyReply};
use crate::types::{is_deletion, DialogueAct, DraftState, Message, PolicyDecision, Role};
use crate::wire::{validate_event, BotStatus, RetractMode, StateSummary, Violation, WireEvent};

pub const MAX_DRAFT_CHARS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetractAction {
    FullRetract,
    SealWithEllipsis,
}

impl From<RetractAction> for RetractMode {
    fn from(action: RetractAction) -> Self {
        match action {
            RetractAction::FullRetract => RetractMode::Full,
            RetractAction::SealWithEllipsis => RetractMode::Seal,
        }
    }
}

/// Interrupted responses strictly longer than `threshold` characters are sealed.
pub fn resolve_interruption(emitted_chars: usize, threshold: usize) -> RetractAction {
    if emitted_chars > threshold {
        RetractAction::SealWithEllipsis
    } else {
        RetractAction::FullRetract
    }
}

pub type RequestId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyInvocation {
    pub request_id: RequestId,
    /// Draft revision the context was captured at.
    pub draft_revision: u64,
    pub context: PolicyContext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    EmitWire(WireEvent),
    InvokePolicy(PolicyInvocation),
    CancelGeneration { request_id: RequestId },
    ScheduleTick { at: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("OVERSIZE: draft has {0} characters (limit {MAX_DRAFT_CHARS})")]
    Oversize(usize),
    #[error("EMPTY_SEND: nothing to send")]
    EmptySend,
    #[error("BUSY: a bot response is already being emitted")]
    Busy,
    #[error("STALE_REVISION: change at {ts} predates the last one at {last}")]
    Stale { ts: u64, last: u64 },
    #[error(transparent)]
    Invalid(#[from] Violation),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Oversize(_) => "OVERSIZE",
            EngineError::EmptySend => "EMPTY_SEND",
            EngineError::Busy => "BUSY",
            EngineError::Stale { .. } => "STALE_REVISION",
            EngineError::Invalid(v) => v.code.as_str(),
        }
    }

    pub fn to_wire(&self) -> WireEvent {
        WireEvent::error(self.code(), self.to_string())
    }
}

/// A bot response being typed out character by character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BotEmission {
    pub request_id: RequestId,
    pub full_text: Vec<char>,
    pub act: Option<DialogueAct>,
    pub emitted_chars: usize,
    pub started_ts: u64,
}

impl BotEmission {
    pub fn visible_text(&self) -> String {
        self.full_text[..self.emitted_chars].iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingGeneration {
    pub request_id: RequestId,
    pub mode: PolicyMode,
    pub draft_revision: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    pub user_draft: DraftState,
    pub bot_emission: Option<BotEmission>,
    pub messages: Vec<Message>,
    pub last_policy_invocation_ts: Option<u64>,
    pub next_message_id: u64,
    pub pending: Option<PendingGeneration>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self {
            user_draft: DraftState::new(Role::User),
            bot_emission: None,
            messages: Vec::new(),
            last_policy_invocation_ts: None,
            next_message_id: 0,
            pending: None,
        }
    }
}

/// What the bot is about to type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BotResponse {
    /// An overlap produced while the user is typing.
    Overlap(PolicyDecision),
    /// A complete reply to a sent message.
    Full(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftApplied {
    pub effects: Vec<Effect>,
    pub deletion: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    session_id: String,
    config: SessionConfig,
    state: SessionState,
    next_request_id: RequestId,
    last_client_draft_ts: u64,
}

impl Session {
    pub fn new(session_id: impl Into<String>, config: SessionConfig) -> Self {
        Self {
            session_id: session_id.into(),
            config,
            state: SessionState::default(),
            next_request_id: 0,
            last_client_draft_ts: 0,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn messages(&self) -> &[Message] {
        &self.state.messages
    }

    pub fn summary(&self) -> StateSummary {
        StateSummary {
            session_id: self.session_id.clone(),
            bot_typing: self.state.bot_emission.is_some(),
            draft_rev: self.state.user_draft.revision,
            draft_empty: self.state.user_draft.text.is_empty(),
            last_draft_ts: self.last_client_draft_ts,
        }
    }

    /// Request ids whose generation is still open: the pending invocation and
    /// the one feeding the current emission.
    pub fn open_requests(&self) -> Vec<RequestId> {
        let mut ids = Vec::new();
        if let Some(p) = &self.state.pending {
            ids.push(p.request_id);
        }
        if let Some(e) = &self.state.bot_emission {
            ids.push(e.request_id);
        }
        ids
    }

    /// Validates and applies a client frame at server time `now`.
    pub fn handle_client_event(&mut self, event: &WireEvent, now: u64) -> Result<Vec<Effect>, EngineError> {
        validate_event(event, &self.summary())?;
        match event {
            WireEvent::Hello { .. } => Ok(Vec::new()),
            WireEvent::DraftUpdate { text, ts } => {
                let applied = self.apply_user_draft(text, now)?;
                self.last_client_draft_ts = *ts;
                Ok(applied.effects)
            }
            WireEvent::Send { .. } => self.apply_user_send(now),
            _ => unreachable!("validate_event rejects server frames"),
        }
    }

    pub fn apply_user_draft(&mut self, text: &str, now: u64) -> Result<DraftApplied, EngineError> {
        let len = text.chars().count();
        if len > MAX_DRAFT_CHARS {
            return Err(EngineError::Oversize(len));
        }
        let draft = &mut self.state.user_draft;
        if draft.revision > 0 && now < draft.last_change_ts {
            return Err(EngineError::Stale {
                ts: now,
                last: draft.last_change_ts,
            });
        }
        if draft.text == text {
            return Ok(DraftApplied {
                effects: Vec::new(),
                deletion: false,
            });
        }
        let deletion = is_deletion(&draft.text, text);
        draft.text = text.to_string();
        draft.revision += 1;
        draft.last_change_ts = now;
        if draft.started_ts.is_none() && !text.is_empty() {
            draft.started_ts = Some(now);
        }

        let mut effects = vec![Effect::EmitWire(WireEvent::PeerDraft {
            role: Role::User,
            text: text.to_string(),
        })];
        // a trigger computed for an older draft is worthless now
        if let Some(p) = self.state.pending {
            if p.mode == PolicyMode::OverlapTrigger {
                self.state.pending = None;
                effects.push(Effect::CancelGeneration {
                    request_id: p.request_id,
                });
            }
        }
        effects.extend(self.trigger_followup(now));
        Ok(DraftApplied { effects, deletion })
    }

    pub fn apply_user_send(&mut self, now: u64) -> Result<Vec<Effect>, EngineError> {
        if self.state.user_draft.text.is_empty() {
            return Err(EngineError::EmptySend);
        }
        let draft = &mut self.state.user_draft;
        let text = std::mem::take(&mut draft.text);
        let started = draft.started_ts.take().unwrap_or(now).min(now);
        draft.revision += 1;
        draft.last_change_ts = now;
        draft.backchannels_used = 0;
        draft.preemptive_used = 0;

        let user_message = self.push_message(Role::User, text, None, false, now, started);
        let mut effects = vec![Effect::EmitWire(WireEvent::UserMessageAck {
            message: user_message,
        })];

        if let Some(emission) = self.state.bot_emission.take() {
            let action = resolve_interruption(emission.emitted_chars, self.config.interrupt_seal_threshold_chars);
            let visible = match action {
                RetractAction::FullRetract => String::new(),
                RetractAction::SealWithEllipsis => emission.visible_text(),
            };
            effects.push(Effect::EmitWire(WireEvent::BotRetract {
                mode: action.into(),
                visible_text: visible.clone(),
            }));
            if action == RetractAction::SealWithEllipsis {
                let sealed = self.push_message(
                    Role::Bot,
                    format!("{visible}{}", Message::ELLIPSIS),
                    emission.act,
                    true,
                    now,
                    emission.started_ts,
                );
                effects.push(Effect::EmitWire(WireEvent::BotSend { message: sealed }));
            }
            effects.push(Effect::EmitWire(WireEvent::Status { bot: BotStatus::Idle }));
            effects.push(Effect::CancelGeneration {
                request_id: emission.request_id,
            });
        }
        if let Some(p) = self.state.pending.take() {
            effects.push(Effect::CancelGeneration {
                request_id: p.request_id,
            });
        }

        let invocation = self.invoke(PolicyMode::FullResponse, now);
        effects.push(Effect::InvokePolicy(invocation));
        Ok(effects)
    }

    /// True when every overlap-trigger condition holds at `now`.
    pub fn trigger_ready(&self, now: u64) -> bool {
        let s = &self.state;
        let c = &self.config;
        let draft = &s.user_draft;
        let paused = draft.ends_with_whitespace() || now.saturating_sub(draft.last_change_ts) >= c.trigger_pause_ms;
        let cooled = s
            .last_policy_invocation_ts
            .is_none_or(|last| now.saturating_sub(last) >= c.cooldown_ms);
        c.overlap_enabled
            && s.bot_emission.is_none()
            && s.pending.is_none()
            && draft.token_count() >= c.min_trigger_tokens
            && paused
            && cooled
            && self.has_overlap_budget()
    }

    /// Invokes the overlap policy if [`Session::trigger_ready`] holds.
    pub fn schedule_policy_trigger(&mut self, now: u64) -> Option<Effect> {
        if !self.trigger_ready(now) {
            return None;
        }
        Some(Effect::InvokePolicy(self.invoke(PolicyMode::OverlapTrigger, now)))
    }

    fn has_overlap_budget(&self) -> bool {
        let d = &self.state.user_draft;
        d.backchannels_used < self.config.max_backchannels_per_draft
            || d.preemptive_used < self.config.max_preemptive_per_draft
    }

    /// Fires the trigger now, or arms a timer for the earliest moment it could fire.
    fn trigger_followup(&mut self, now: u64) -> Vec<Effect> {
        if let Some(effect) = self.schedule_policy_trigger(now) {
            return vec![effect];
        }
        let c = &self.config;
        let draft = &self.state.user_draft;
        if !c.overlap_enabled || draft.token_count() < c.min_trigger_tokens || !self.has_overlap_budget() {
            return Vec::new();
        }
        let pause_at = if draft.ends_with_whitespace() {
            draft.last_change_ts
        } else {
            draft.last_change_ts + c.trigger_pause_ms
        };
        let cool_at = self
            .state
            .last_policy_invocation_ts
            .map_or(0, |last| last + c.cooldown_ms);
        let at = pause_at.max(cool_at);
        if at > now {
            vec![Effect::ScheduleTick { at }]
        } else {
            Vec::new()
        }
    }

    fn invoke(&mut self, mode: PolicyMode, now: u64) -> PolicyInvocation {
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        let draft = &self.state.user_draft;
        let context = PolicyContext {
            transcript: self.state.messages.clone(),
            live_draft: match mode {
                PolicyMode::OverlapTrigger => draft.text.clone(),
                PolicyMode::FullResponse => String::new(),
            },
            budgets: match mode {
                PolicyMode::OverlapTrigger => DraftBudgets {
                    backchannels_used: draft.backchannels_used,
                    backchannels_left: self.config.max_backchannels_per_draft.saturating_sub(draft.backchannels_used),
                    preemptive_left: self.config.max_preemptive_per_draft.saturating_sub(draft.preemptive_used),
                },
                PolicyMode::FullResponse => DraftBudgets::default(),
            },
            mode,
        };
        self.state.pending = Some(PendingGeneration {
            request_id,
            mode,
            draft_revision: draft.revision,
        });
        self.state.last_policy_invocation_ts = Some(now);
        PolicyInvocation {
            request_id,
            draft_revision: draft.revision,
            context,
        }
    }

    /// Applies the result of an earlier [`Effect::InvokePolicy`].
    ///
    /// Replies to superseded requests, and overlap decisions made against a
    /// draft that has since changed, are dropped.
    pub fn apply_policy_reply(&mut self, request_id: RequestId, reply: PolicyReply, now: u64) -> Vec<Effect> {
        let Some(pending) = self.state.pending else {
            return Vec::new();
        };
        if pending.request_id != request_id {
            return Vec::new();
        }
        self.state.pending = None;
        let response = match (pending.mode, reply) {
            (_, PolicyReply::Cancelled) => return Vec::new(),
            (PolicyMode::OverlapTrigger, PolicyReply::Decision(decision)) => {
                if pending.draft_revision != self.state.user_draft.revision || !decision.is_overlap() {
                    return Vec::new();
                }
                BotResponse::Overlap(decision)
            }
            (PolicyMode::FullResponse, PolicyReply::FullResponse(text)) if !text.is_empty() => BotResponse::Full(text),
            (PolicyMode::FullResponse, _) => BotResponse::Full(crate::policy::APOLOGY.to_string()),
            (PolicyMode::OverlapTrigger, PolicyReply::FullResponse(_)) => return Vec::new(),
        };
        self.begin_with_request(response, request_id, now).unwrap_or_default()
    }

    /// Starts typing out a response. Overlaps consume the per-draft budget of their act;
    /// an overlap whose budget is exhausted, or an `Await`, starts nothing.
    pub fn begin_bot_response(&mut self, response: BotResponse, now: u64) -> Result<Vec<Effect>, EngineError> {
        let request_id = self.next_request_id;
        self.next_request_id += 1;
        self.begin_with_request(response, request_id, now)
    }

    fn begin_with_request(
        &mut self,
        response: BotResponse,
        request_id: RequestId,
        now: u64,
    ) -> Result<Vec<Effect>, EngineError> {
        if self.state.bot_emission.is_some() {
            return Err(EngineError::Busy);
        }
        let (text, act) = match response {
            BotResponse::Full(text) => (text, None),
            BotResponse::Overlap(decision) => {
                let (Some(act), Some(utterance)) = (decision.act(), decision.utterance()) else {
                    return Ok(Vec::new());
                };
                let draft = &mut self.state.user_draft;
                let (used, cap) = match act {
                    DialogueAct::Understanding => (&mut draft.backchannels_used, self.config.max_backchannels_per_draft),
                    DialogueAct::Answer => (&mut draft.preemptive_used, self.config.max_preemptive_per_draft),
                };
                if *used >= cap {
                    return Ok(Vec::new());
                }
                *used += 1;
                (utterance.to_string(), Some(act))
            }
        };
        let emission = BotEmission {
            request_id,
            full_text: text.chars().collect(),
            act,
            emitted_chars: 0,
            started_ts: now,
        };
        let first_char_at = self.char_due_at(&emission, 1);
        self.state.bot_emission = Some(emission);
        Ok(vec![
            Effect::EmitWire(WireEvent::Status { bot: BotStatus::Typing }),
            Effect::ScheduleTick { at: first_char_at },
        ])
    }

    /// Time at which the `n`-th character of the emission becomes due.
    fn char_due_at(&self, emission: &BotEmission, n: usize) -> u64 {
        let rate = u64::from(self.config.bot_chars_per_second);
        emission.started_ts + (n as u64 * 1000).div_ceil(rate)
    }

    /// Advances the emission to `floor(elapsed * rate)` characters.
    pub fn tick_bot_emission(&mut self, now: u64) -> Vec<Effect> {
        let Some(mut emission) = self.state.bot_emission.take() else {
            return Vec::new();
        };
        let rate = u64::from(self.config.bot_chars_per_second);
        let elapsed = now.saturating_sub(emission.started_ts);
        let due = ((elapsed * rate / 1000) as usize).min(emission.full_text.len());
        let mut effects = Vec::new();
        if due > emission.emitted_chars {
            let chunk: String = emission.full_text[emission.emitted_chars..due].iter().collect();
            emission.emitted_chars = due;
            effects.push(Effect::EmitWire(WireEvent::BotChar { text_chunk: chunk }));
        }
        if emission.emitted_chars == emission.full_text.len() {
            let text: String = emission.full_text.iter().collect();
            let message = self.push_message(Role::Bot, text, emission.act, false, now, emission.started_ts);
            effects.push(Effect::EmitWire(WireEvent::BotSend { message }));
            effects.push(Effect::EmitWire(WireEvent::Status { bot: BotStatus::Idle }));
            effects.extend(self.trigger_followup(now));
        } else {
            let at = self.char_due_at(&emission, emission.emitted_chars + 1);
            self.state.bot_emission = Some(emission);
            effects.push(Effect::ScheduleTick { at });
        }
        effects
    }

    /// Timer callback: advances the emission, then re-checks the overlap trigger.
    pub fn on_timer(&mut self, now: u64) -> Vec<Effect> {
        let mut effects = self.tick_bot_emission(now);
        let already_invoked = effects.iter().any(|e| matches!(e, Effect::InvokePolicy(_)));
        if !already_invoked {
            effects.extend(self.schedule_policy_trigger(now));
        }
        effects
    }

    fn push_message(
        &mut self,
        role: Role,
        text: String,
        act: Option<DialogueAct>,
        sealed: bool,
        sent_ts: u64,
        draft_started_ts: u64,
    ) -> Message {
        let message = Message {
            id: self.state.next_message_id,
            role,
            text,
            sealed_with_ellipsis: sealed,
            act,
            sent_ts,
            draft_started_ts: draft_started_ts.min(sent_ts),
        };
        debug_assert!(message.validate().is_ok());
        self.state.next_message_id += 1;
        self.state.messages.push(message.clone());
        message
    }
}
