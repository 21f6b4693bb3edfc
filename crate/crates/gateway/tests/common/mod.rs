#![allow(dead_code)]

use overlapchat::policy::{Policy, PolicyKind};
use overlapchat::sim::{parse_trace, simulate, typing, SimOptions, SimOutcome};
use overlapchat::{SessionConfig, WireEvent};

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{FIXTURES}/{name}")).unwrap()
}

pub fn golden_trace() -> Vec<WireEvent> {
    parse_trace(&fixture("golden_trace.jsonl")).unwrap()
}

/// A 250-character message the stub echoes back at 30 chars/s.
pub fn long_message() -> String {
    let words = "the quick brown fox jumps over a lazy dog while we talk ";
    words.repeat(5).chars().take(250).collect::<String>().trim_end().to_string()
}

/// Sends a long message, then interrupts the echo after about `chars` of it
/// have been typed out by the bot.
pub fn interruption_trace(chars: u64) -> Vec<WireEvent> {
    let mut trace = vec![
        WireEvent::DraftUpdate {
            text: long_message(),
            ts: 0,
        },
        WireEvent::Send { ts: 100 },
    ];
    // at 30 chars/s, one character every 33.3 ms from the start at 100 ms
    let at = 100 + chars * 1000 / 30 + 20;
    let (frames, last) = typing("hold on", at - 300, 40);
    trace.extend(frames);
    assert!(last < at);
    trace.push(WireEvent::Send { ts: at });
    trace
}

pub fn rule_stub() -> Policy {
    Policy::stub(PolicyKind::Rule)
}

pub fn run(trace: &[WireEvent]) -> SimOutcome {
    run_with(trace, SessionConfig::default(), SimOptions::default())
}

pub fn run_with(trace: &[WireEvent], config: SessionConfig, options: SimOptions) -> SimOutcome {
    tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .build()
        .unwrap()
        .block_on(simulate(trace, config, rule_stub(), options))
}

pub fn count(outcome: &SimOutcome, kind: &str) -> usize {
    outcome.log.entries().iter().filter(|e| e.event.kind() == kind).count()
}

use std::sync::Arc;
use std::time::Duration;

use overlapchat::policy::StubBackend;
use overlapchat_gateway::hub::Hub;
use overlapchat_gateway::live::LatencyStats;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const WORDS: &[&str] = &[
    "today", "i", "went", "to", "the", "store", "what", "did", "you", "paint", "yesterday", "my", "friend",
    "said", "we", "should", "try", "that", "new", "place", "how", "is", "your", "week", "going",
];

pub fn stub_hub(stub: StubBackend, log_dir: Option<std::path::PathBuf>, max_sessions: usize) -> Arc<Hub> {
    Arc::new(Hub::new(
        SessionConfig::default(),
        Policy::new(PolicyKind::Rule, Arc::new(stub)),
        log_dir,
        max_sessions,
    ))
}

/// One user typing sentences for `span`: keystrokes 80-220 ms apart, the odd
/// backspace, a pause, a send, then a while reading the reply.
async fn typist(hub: Arc<Hub>, span: Duration, seed: u64) -> LatencyStats {
    let handle = hub.create(None).unwrap();
    let attachment = handle.attach().unwrap();
    let outbox = attachment.outbox.clone();
    let reader = tokio::spawn(async move { while outbox.next().await.is_some() {} });
    let mut rng = StdRng::seed_from_u64(seed);
    let start = tokio::time::Instant::now();
    let ms = |start: tokio::time::Instant| start.elapsed().as_millis() as u64;
    while start.elapsed() < span {
        let words = rng.random_range(4..12);
        let sentence: Vec<&str> = (0..words).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        let sentence = sentence.join(" ");
        let mut draft = String::new();
        for c in sentence.chars() {
            tokio::time::sleep(Duration::from_millis(rng.random_range(80..220))).await;
            if rng.random_bool(0.04) && !draft.is_empty() {
                draft.pop();
            } else {
                draft.push(c);
            }
            attachment.send(WireEvent::DraftUpdate {
                text: draft.clone(),
                ts: ms(start),
            });
        }
        tokio::time::sleep(Duration::from_millis(rng.random_range(300..1500))).await;
        attachment.send(WireEvent::Send { ts: ms(start) });
        tokio::time::sleep(Duration::from_millis(rng.random_range(1000..4000))).await;
    }
    drop(attachment);
    let (_, stats) = handle.wait_closed().await;
    let _ = reader.await;
    stats
}

/// Runs `sessions` typists side by side and pools their latency samples.
pub async fn desk_load(hub: Arc<Hub>, sessions: usize, span: Duration) -> LatencyStats {
    let tasks: Vec<_> = (0..sessions)
        .map(|i| tokio::spawn(typist(hub.clone(), span, i as u64)))
        .collect();
    let mut pooled = LatencyStats::default();
    for task in tasks {
        pooled.merge(&task.await.unwrap());
    }
    pooled
}
