//! Live sessions: one task per session owns the engine, its timers, the
//! in-flight policy calls and the log.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use overlapchat::analytics::{build_report, MetricsReport};
use overlapchat::engine::{Effect, RequestId, Session};
use overlapchat::log::Origin;
use overlapchat::policy::{CancelToken, Policy, PolicyMode, PolicyReply};
use overlapchat::transcript::Transcript;
use overlapchat::{ConversationLog, SessionConfig, WireEvent};
use tokio::sync::{mpsc, oneshot, Notify};
use tokio::time::Instant;

/// Frames waiting to be written to the client.
///
/// A stalled client makes the queue grow; consecutive `bot_char` frames that
/// have not been sent yet merge into one, so the bot's text arrives whole and
/// in order, only in fewer pieces.
#[derive(Debug, Default)]
pub struct Outbox {
    queue: Mutex<VecDeque<WireEvent>>,
    notify: Notify,
    closed: AtomicBool,
}

impl Outbox {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn push(&self, event: WireEvent) {
        let mut queue = self.queue.lock().expect("outbox poisoned");
        if let (Some(WireEvent::BotChar { text_chunk: tail }), WireEvent::BotChar { text_chunk }) =
            (queue.back_mut(), &event)
        {
            tail.push_str(text_chunk);
        } else {
            queue.push_back(event);
        }
        drop(queue);
        self.notify.notify_one();
    }

    fn pop(&self) -> Option<WireEvent> {
        self.queue.lock().expect("outbox poisoned").pop_front()
    }

    /// Waits for the next frame; `None` once closed and drained.
    pub async fn next(&self) -> Option<WireEvent> {
        loop {
            if let Some(event) = self.pop() {
                return Some(event);
            }
            if self.closed.load(Ordering::Acquire) {
                return None;
            }
            self.notify.notified().await;
        }
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::Release);
        self.notify.notify_one();
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("outbox poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Latency samples collected by a session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyStats {
    /// Client frame received to first resulting frame emitted, in ms of real time.
    pub event_to_effect_ms: Vec<f64>,
    /// Overlap policy invoked to first character of the response, in ms of session time.
    pub trigger_to_char_ms: Vec<f64>,
}

impl LatencyStats {
    pub fn merge(&mut self, other: &LatencyStats) {
        self.event_to_effect_ms.extend(&other.event_to_effect_ms);
        self.trigger_to_char_ms.extend(&other.trigger_to_char_ms);
    }
}

/// Nearest-rank percentile; `None` for no samples.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

enum Command {
    Client {
        event: WireEvent,
        received: std::time::Instant,
    },
    Attach(Arc<Outbox>),
    /// A frame the gateway itself raises, such as a parse error.
    Notice(WireEvent),
    Close,
    Snapshot(oneshot::Sender<(ConversationLog, LatencyStats)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Active,
    Closed,
}

/// Shared face of a running session.
#[derive(Debug)]
pub struct SessionHandle {
    pub id: String,
    pub created_at: SystemTime,
    pub config: SessionConfig,
    tx: mpsc::UnboundedSender<Command>,
    attached: AtomicBool,
    closed: AtomicBool,
    final_state: OnceLock<(ConversationLog, LatencyStats)>,
    log_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AttachError {
    #[error("ALREADY_ATTACHED")]
    AlreadyAttached,
    #[error("NOT_FOUND")]
    NotFound,
}

impl AttachError {
    pub fn code(self) -> &'static str {
        match self {
            AttachError::AlreadyAttached => "ALREADY_ATTACHED",
            AttachError::NotFound => "NOT_FOUND",
        }
    }
}

/// A client's attachment. Dropping it closes the session.
#[derive(Debug)]
pub struct Attachment {
    pub handle: Arc<SessionHandle>,
    pub outbox: Arc<Outbox>,
}

impl Attachment {
    /// Hands a client frame to the session, stamped with its arrival time.
    pub fn send(&self, event: WireEvent) {
        self.handle.submit(event);
    }
}

impl Drop for Attachment {
    fn drop(&mut self) {
        self.handle.close();
    }
}

impl SessionHandle {
    pub fn status(&self) -> SessionStatus {
        if self.closed.load(Ordering::Acquire) {
            SessionStatus::Closed
        } else {
            SessionStatus::Active
        }
    }

    pub fn log_path(&self) -> Option<&PathBuf> {
        self.log_path.as_ref()
    }

    pub fn attach(self: &Arc<Self>) -> Result<Attachment, AttachError> {
        if self.status() == SessionStatus::Closed {
            return Err(AttachError::NotFound);
        }
        if self.attached.swap(true, Ordering::AcqRel) {
            return Err(AttachError::AlreadyAttached);
        }
        let outbox = Outbox::new();
        let _ = self.tx.send(Command::Attach(outbox.clone()));
        Ok(Attachment {
            handle: self.clone(),
            outbox,
        })
    }

    pub fn submit(&self, event: WireEvent) {
        let _ = self.tx.send(Command::Client {
            event,
            received: std::time::Instant::now(),
        });
    }

    /// Logs `event` and sends it to the attached client.
    pub fn notify(&self, event: WireEvent) {
        let _ = self.tx.send(Command::Notice(event));
    }

    pub fn close(&self) {
        if !self.closed.swap(true, Ordering::AcqRel) {
            let _ = self.tx.send(Command::Close);
        }
    }

    /// The log so far and the latency samples.
    pub async fn snapshot(&self) -> (ConversationLog, LatencyStats) {
        if let Some(done) = self.final_state.get() {
            return done.clone();
        }
        let (reply, rx) = oneshot::channel();
        if self.tx.send(Command::Snapshot(reply)).is_ok() {
            if let Ok(state) = rx.await {
                return state;
            }
        }
        // the actor finished between the two checks
        self.wait_closed().await
    }

    /// Waits until the session task has stopped and returns its final state.
    pub async fn wait_closed(&self) -> (ConversationLog, LatencyStats) {
        loop {
            if let Some(done) = self.final_state.get() {
                return done.clone();
            }
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
    }

    pub async fn transcript(&self) -> Transcript {
        Transcript::from_log(&self.snapshot().await.0)
    }

    pub async fn metrics(&self) -> MetricsReport {
        build_report(&self.snapshot().await.0)
    }
}

fn wall_ms(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Starts a session task and returns its handle.
pub fn spawn_session(id: String, config: SessionConfig, policy: Policy, log_dir: Option<PathBuf>) -> std::io::Result<Arc<SessionHandle>> {
    let created_at = SystemTime::now();
    let log = ConversationLog::with_header(id.clone(), config.clone(), wall_ms(created_at));
    let log_path = log_dir.map(|d| d.join(format!("{id}.jsonl")));
    let mut writer = match &log_path {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };
    if let Some(w) = writer.as_mut() {
        writeln!(w, "{}", log.entries()[0].to_line())?;
        w.flush()?;
    }
    let (tx, rx) = mpsc::unbounded_channel();
    let handle = Arc::new(SessionHandle {
        id: id.clone(),
        created_at,
        config: config.clone(),
        tx,
        attached: AtomicBool::new(false),
        closed: AtomicBool::new(false),
        final_state: OnceLock::new(),
        log_path,
    });
    let (done_tx, done_rx) = mpsc::unbounded_channel();
    let actor = Actor {
        session: Session::new(id, config),
        log,
        writer,
        policy,
        epoch: Instant::now(),
        wall_start: wall_ms(created_at),
        timers: BTreeSet::new(),
        tokens: HashMap::new(),
        outbox: None,
        done_tx,
        triggers: HashMap::new(),
        stats: LatencyStats::default(),
    };
    let shared = handle.clone();
    tokio::spawn(async move {
        let state = actor.run(rx, done_rx).await;
        let _ = shared.final_state.set(state);
    });
    Ok(handle)
}

struct Actor {
    session: Session,
    log: ConversationLog,
    writer: Option<BufWriter<File>>,
    policy: Policy,
    epoch: Instant,
    wall_start: u64,
    timers: BTreeSet<u64>,
    tokens: HashMap<RequestId, CancelToken>,
    outbox: Option<Arc<Outbox>>,
    done_tx: mpsc::UnboundedSender<(RequestId, PolicyReply)>,
    /// Session time at which each open overlap invocation was made.
    triggers: HashMap<RequestId, u64>,
    stats: LatencyStats,
}

impl Actor {
    fn now(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn record(&mut self, event: WireEvent, now: u64, to_client: bool) {
        let origin = Origin::of(&event);
        // the engine clock is monotonic, so the envelope never goes backwards
        let entry = match self.log.append(origin, event.clone(), self.wall_start + now) {
            Ok(entry) => entry.to_line(),
            Err(e) => {
                tracing::error!(session = self.session.session_id(), "log append failed: {e}");
                return;
            }
        };
        if let Some(w) = self.writer.as_mut() {
            if let Err(e) = writeln!(w, "{entry}") {
                tracing::error!(session = self.session.session_id(), "log write failed: {e}");
            }
        }
        if to_client {
            if let Some(outbox) = &self.outbox {
                outbox.push(event);
            }
        }
    }

    fn flush(&mut self) {
        if let Some(w) = self.writer.as_mut() {
            if let Err(e) = w.flush() {
                tracing::error!(session = self.session.session_id(), "log flush failed: {e}");
            }
        }
    }

    fn apply(&mut self, effects: Vec<Effect>, now: u64, received: Option<std::time::Instant>) {
        let mut received = received;
        let emitting = self.session.state().bot_emission.as_ref().map(|e| e.request_id);
        for effect in effects {
            match effect {
                Effect::EmitWire(event) => {
                    if let Some(t) = received.take() {
                        self.stats.event_to_effect_ms.push(t.elapsed().as_secs_f64() * 1000.0);
                    }
                    // the first character of a triggered overlap closes its sample
                    if let (WireEvent::BotChar { .. }, Some(id)) = (&event, emitting) {
                        if let Some(at) = self.triggers.remove(&id) {
                            self.stats.trigger_to_char_ms.push(now.saturating_sub(at) as f64);
                        }
                    }
                    self.record(event, now, true);
                }
                Effect::ScheduleTick { at } => {
                    self.timers.insert(at);
                }
                Effect::CancelGeneration { request_id } => {
                    if let Some(token) = self.tokens.remove(&request_id) {
                        token.cancel();
                    }
                    self.triggers.remove(&request_id);
                }
                Effect::InvokePolicy(invocation) => {
                    let token = CancelToken::new();
                    self.tokens.insert(invocation.request_id, token.clone());
                    if invocation.context.mode == PolicyMode::OverlapTrigger {
                        self.triggers.insert(invocation.request_id, now);
                    }
                    let policy = self.policy.clone();
                    let done = self.done_tx.clone();
                    tokio::spawn(async move {
                        let reply = policy.respond(&invocation.context, &token).await;
                        let _ = done.send((invocation.request_id, reply));
                    });
                }
            }
        }
        // forget generations the engine no longer tracks, without cancelling them
        let open = self.session.open_requests();
        self.tokens.retain(|id, _| open.contains(id));
        self.triggers.retain(|id, _| open.contains(id));
        self.flush();
    }

    fn on_client(&mut self, event: WireEvent, received: std::time::Instant) {
        let now = self.now();
        self.record(event.clone(), now, false);
        match self.session.handle_client_event(&event, now) {
            Ok(effects) => self.apply(effects, now, Some(received)),
            Err(e) => {
                self.record(e.to_wire(), now, true);
                self.flush();
            }
        }
    }

    async fn run(
        mut self,
        mut commands: mpsc::UnboundedReceiver<Command>,
        mut done: mpsc::UnboundedReceiver<(RequestId, PolicyReply)>,
    ) -> (ConversationLog, LatencyStats) {
        loop {
            let next_timer = self.timers.first().map(|at| self.epoch + Duration::from_millis(*at));
            tokio::select! {
                command = commands.recv() => match command {
                    Some(Command::Client { event, received }) => self.on_client(event, received),
                    Some(Command::Attach(outbox)) => {
                        let now = self.now();
                        self.outbox = Some(outbox);
                        let hello = WireEvent::Hello { session_id: self.session.session_id().to_string() };
                        self.record(hello, now, true);
                        self.flush();
                    }
                    Some(Command::Notice(event)) => {
                        let now = self.now();
                        self.record(event, now, true);
                        self.flush();
                    }
                    Some(Command::Snapshot(reply)) => {
                        let _ = reply.send((self.log.clone(), self.stats.clone()));
                    }
                    Some(Command::Close) | None => break,
                },
                Some((request_id, reply)) = done.recv() => {
                    let now = self.now();
                    let effects = self.session.apply_policy_reply(request_id, reply, now);
                    self.apply(effects, now, None);
                }
                _ = tokio::time::sleep_until(next_timer.unwrap_or_else(Instant::now)), if next_timer.is_some() => {
                    let now = self.now();
                    self.timers = self.timers.split_off(&(now + 1));
                    let effects = self.session.on_timer(now);
                    self.apply(effects, now, None);
                }
            }
        }
        for (_, token) in self.tokens.drain() {
            token.cancel();
        }
        if let Some(outbox) = &self.outbox {
            outbox.close();
        }
        self.flush();
        (self.log, self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bot_chars_coalesce_in_order() {
        let outbox = Outbox::default();
        outbox.push(WireEvent::BotChar { text_chunk: "ab".into() });
        outbox.push(WireEvent::BotChar { text_chunk: "c".into() });
        outbox.push(WireEvent::Status {
            bot: overlapchat::wire::BotStatus::Idle,
        });
        outbox.push(WireEvent::BotChar { text_chunk: "d".into() });
        assert_eq!(outbox.len(), 3);
        assert_eq!(outbox.pop(), Some(WireEvent::BotChar { text_chunk: "abc".into() }));
    }

    #[test]
    fn percentiles() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 99.0), Some(99.0));
        assert_eq!(percentile(&s, 100.0), Some(100.0));
        assert_eq!(percentile(&[], 99.0), None);
    }
}
