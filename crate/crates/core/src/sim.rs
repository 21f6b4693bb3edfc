//! Virtual-time session driver and log replay.
//!
//! A trace is a JSONL script of client frames (`draft_update` and `send`),
//! each stamped with the virtual millisecond at which it arrives. The driver
//! advances a virtual clock from one due item to the next: trace frames,
//! policy replies and engine timers, in that order at equal instants. Policy
//! latency is virtual too, so a run is a pure function of the trace, config
//! and policy, independent of the machine it runs on.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::analytics::{build_report, MetricsReport};
use crate::config::SessionConfig;
use crate::engine::{Effect, PolicyInvocation, RequestId, Session};
use crate::log::{ConversationLog, Origin};
use crate::policy::{CancelToken, Policy, PolicyReply};
use crate::transcript::Transcript;
use crate::wire::{decode_event, WireEvent};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("BAD_TRACE: line {line}: {detail}")]
pub struct BadTrace {
    pub line: usize,
    pub detail: String,
}

/// Reads a trace. Only `draft_update` and `send` frames are allowed and their
/// `ts` must not decrease.
pub fn parse_trace(text: &str) -> Result<Vec<WireEvent>, BadTrace> {
    let mut out: Vec<WireEvent> = Vec::new();
    let mut last = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| BadTrace { line: i + 1, detail };
        let event = decode_event(line).map_err(|e| bad(e.detail))?;
        let ts = match &event {
            WireEvent::DraftUpdate { ts, .. } | WireEvent::Send { ts } => *ts,
            other => return Err(bad(format!("{} frames cannot appear in a trace", other.kind()))),
        };
        if ts < last {
            return Err(bad(format!("ts {ts} goes back before {last}")));
        }
        last = ts;
        out.push(event);
    }
    Ok(out)
}

fn trace_ts(event: &WireEvent) -> u64 {
    match event {
        WireEvent::DraftUpdate { ts, .. } | WireEvent::Send { ts } => *ts,
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Virtual time between a policy invocation and its reply.
    pub policy_latency_ms: u64,
    /// How long the clock may run past the last trace frame.
    pub drain_ms: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            policy_latency_ms: 0,
            drain_ms: 120_000,
        }
    }
}

/// A generation cancelled by the engine, and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cancellation {
    pub request_id: RequestId,
    pub at: u64,
    /// Whether the reply was still outstanding at that moment.
    pub in_flight: bool,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub log: ConversationLog,
    pub transcript: Transcript,
    pub report: MetricsReport,
    pub invocations: Vec<(u64, PolicyInvocation)>,
    pub cancellations: Vec<Cancellation>,
}

/// Drives one [`Session`] through a trace on a virtual clock.
pub struct Simulation {
    session: Session,
    policy: Policy,
    options: SimOptions,
    log: ConversationLog,
    now: u64,
    timers: BTreeSet<u64>,
    replies: BTreeMap<(u64, RequestId), PolicyReply>,
    invocations: Vec<(u64, PolicyInvocation)>,
    cancellations: Vec<Cancellation>,
}

impl Simulation {
    pub fn new(session_id: &str, config: SessionConfig, policy: Policy, options: SimOptions) -> Self {
        Self {
            session: Session::new(session_id, config.clone()),
            policy,
            options,
            log: ConversationLog::with_header(session_id, config, 0),
            now: 0,
            timers: BTreeSet::new(),
            replies: BTreeMap::new(),
            invocations: Vec::new(),
            cancellations: Vec::new(),
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn log(&self) -> &ConversationLog {
        &self.log
    }

    fn record(&mut self, event: WireEvent) {
        let origin = Origin::of(&event);
        self.log
            .append(origin, event, self.now)
            .expect("the virtual clock never runs backwards");
    }

    async fn apply(&mut self, effects: Vec<Effect>) {
        let mut queue: VecDeque<Effect> = effects.into();
        while let Some(effect) = queue.pop_front() {
            match effect {
                Effect::EmitWire(event) => self.record(event),
                Effect::ScheduleTick { at } => {
                    self.timers.insert(at.max(self.now));
                }
                Effect::CancelGeneration { request_id } => {
                    let key = self.replies.keys().find(|(_, id)| *id == request_id).copied();
                    let in_flight = key.is_some();
                    if let Some(key) = key {
                        self.replies.remove(&key);
                    }
                    self.cancellations.push(Cancellation {
                        request_id,
                        at: self.now,
                        in_flight,
                    });
                }
                Effect::InvokePolicy(invocation) => {
                    let reply = self.policy.respond(&invocation.context, &CancelToken::new()).await;
                    let due = self.now + self.options.policy_latency_ms;
                    self.replies.insert((due, invocation.request_id), reply);
                    self.invocations.push((self.now, invocation));
                }
            }
        }
    }

    /// Runs the whole trace, then lets the bot finish until the session is
    /// quiet or the drain window closes.
    pub async fn run(mut self, trace: &[WireEvent]) -> SimOutcome {
        let horizon = trace.last().map_or(0, trace_ts) + self.options.drain_ms;
        let mut next = 0;
        loop {
            let client_at = trace.get(next).map(trace_ts);
            let reply_at = self.replies.keys().next().map(|(at, _)| *at);
            let timer_at = self.timers.first().copied();
            let Some(at) = [client_at, reply_at, timer_at].into_iter().flatten().min() else {
                break;
            };
            if at > horizon {
                break;
            }
            self.now = self.now.max(at);
            if client_at == Some(at) {
                let event = trace[next].clone();
                next += 1;
                self.record(event.clone());
                match self.session.handle_client_event(&event, self.now) {
                    Ok(effects) => self.apply(effects).await,
                    Err(e) => self.record(e.to_wire()),
                }
            } else if reply_at == Some(at) {
                let key = *self.replies.keys().next().expect("reply is due");
                let reply = self.replies.remove(&key).expect("key was just read");
                let effects = self.session.apply_policy_reply(key.1, reply, self.now);
                self.apply(effects).await;
            } else {
                self.timers.remove(&at);
                let effects = self.session.on_timer(self.now);
                self.apply(effects).await;
            }
        }
        SimOutcome {
            transcript: Transcript::from_log(&self.log),
            report: build_report(&self.log),
            log: self.log,
            invocations: self.invocations,
            cancellations: self.cancellations,
        }
    }
}

/// Runs `trace` in a fresh session.
pub async fn simulate(trace: &[WireEvent], config: SessionConfig, policy: Policy, options: SimOptions) -> SimOutcome {
    Simulation::new("sim", config, policy, options).run(trace).await
}

/// Rebuilds transcript and metrics from a log alone.
pub fn replay(log: &ConversationLog) -> (Transcript, MetricsReport) {
    (Transcript::from_log(log), build_report(log))
}

/// Types `text` one character at a time, `ms_per_char` apart, starting at
/// `start`. Returns the frames and the instant of the last one.
pub fn typing(text: &str, start: u64, ms_per_char: u64) -> (Vec<WireEvent>, u64) {
    let mut frames = Vec::new();
    let mut typed = String::new();
    let mut ts = start;
    for (i, c) in text.chars().enumerate() {
        typed.push(c);
        ts = start + i as u64 * ms_per_char;
        frames.push(WireEvent::DraftUpdate {
            text: typed.clone(),
            ts,
        });
    }
    (frames, ts)
}

pub fn trace_to_jsonl(trace: &[WireEvent]) -> String {
    trace.iter().map(|e| crate::wire::encode_event(e) + "\n").collect()
}
