//! End-to-end scripted conversations on the virtual clock.

mod common;

use common::*;
use overlapchat::engine::PolicyInvocation;
use overlapchat::policy::PolicyMode;
use overlapchat::sim::{replay, SimOptions};
use overlapchat::wire::RetractMode;
use overlapchat::{ConversationLog, DialogueAct, Role, SessionConfig, WireEvent};

#[test]
fn golden_transcript_is_frozen() {
    let expected_text = fixture("golden_transcript.txt");
    let expected_log = fixture("golden_log.jsonl");
    for _ in 0..10 {
        let out = run(&golden_trace());
        assert_eq!(out.transcript.to_string(), expected_text);
        assert_eq!(out.log.to_jsonl(), expected_log);
    }
}

#[test]
fn golden_backchannel_lands_before_the_send() {
    let out = run(&golden_trace());
    let send_ts = golden_trace().last().map(|e| match e {
        WireEvent::Send { ts } => *ts,
        _ => unreachable!(),
    });
    let yeah = &out.transcript.messages[0];
    assert_eq!(yeah.role, Role::Bot);
    assert_eq!(yeah.act, Some(DialogueAct::Understanding));
    assert_eq!(yeah.text, "yeah");
    assert!(Some(yeah.sent_ts) < send_ts);
}

#[test]
fn long_interruption_seals_with_ellipsis() {
    let out = run(&interruption_trace(200));
    let retracts: Vec<_> = out
        .log
        .entries()
        .iter()
        .filter_map(|e| match &e.event {
            WireEvent::BotRetract { mode, visible_text } => Some((*mode, visible_text.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(retracts.len(), 1);
    assert_eq!(retracts[0].0, RetractMode::Seal);
    let visible = retracts[0].1.chars().count();
    assert!((195..=210).contains(&visible), "{visible} chars were visible");

    let sealed: Vec<_> = out.transcript.messages.iter().filter(|m| m.sealed_with_ellipsis).collect();
    assert_eq!(sealed.len(), 1);
    assert!(sealed[0].text.ends_with("..."));
    assert!(format!("Echo: {}", long_message()).starts_with(sealed[0].text.trim_end_matches("...")));
}

#[test]
fn short_interruption_retracts_everything() {
    let out = run(&interruption_trace(60));
    let modes: Vec<_> = out
        .log
        .entries()
        .iter()
        .filter_map(|e| match &e.event {
            WireEvent::BotRetract { mode, visible_text } => Some((*mode, visible_text.is_empty())),
            _ => None,
        })
        .collect();
    assert_eq!(modes, vec![(RetractMode::Full, true)]);
    assert!(out.transcript.messages.iter().all(|m| !m.sealed_with_ellipsis));
}

#[test]
fn interrupting_send_is_placed_above_the_sealed_reply() {
    let out = run(&interruption_trace(200));
    let (replayed, _) = replay(&ConversationLog::from_jsonl(&out.log.to_jsonl()).unwrap());
    for transcript in [&out.transcript, &replayed] {
        let shape: Vec<(Role, bool)> = transcript
            .messages
            .iter()
            .map(|m| (m.role, m.sealed_with_ellipsis))
            .collect();
        assert_eq!(
            shape,
            vec![
                (Role::User, false),
                (Role::User, false),
                (Role::Bot, true),
                (Role::Bot, false),
            ]
        );
        assert_eq!(transcript.messages[1].text, "hold on");
        // both finalize at the same instant; the user still comes first
        assert_eq!(transcript.messages[1].sent_ts, transcript.messages[2].sent_ts);
    }
}

fn last_user_line(invocation: &PolicyInvocation) -> Option<String> {
    invocation
        .context
        .transcript
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.text.clone())
}

#[test]
fn interruption_regenerates_once_for_the_new_message() {
    let trace = interruption_trace(90);
    let out = run(&trace);
    assert_eq!(count(&out, "bot_retract"), 1);

    let interrupt_at = match trace.last() {
        Some(WireEvent::Send { ts }) => *ts,
        _ => unreachable!(),
    };
    let first_reply = out.invocations[0].1.request_id;
    assert!(out
        .cancellations
        .iter()
        .any(|c| c.request_id == first_reply && c.at == interrupt_at));

    let after: Vec<_> = out.invocations.iter().filter(|(at, _)| *at >= interrupt_at).collect();
    assert_eq!(after.len(), 1);
    assert_eq!(after[0].1.context.mode, PolicyMode::FullResponse);
    assert_eq!(last_user_line(&after[0].1).as_deref(), Some("hold on"));
    let last = out.transcript.messages.last().unwrap();
    assert_eq!((last.role, last.text.as_str()), (Role::Bot, "Echo: hold on"));
}

#[test]
fn pending_generation_is_cancelled_by_send() {
    let trace = vec![
        WireEvent::DraftUpdate {
            text: "hello".into(),
            ts: 0,
        },
        WireEvent::Send { ts: 10 },
        WireEvent::DraftUpdate {
            text: "again".into(),
            ts: 20,
        },
        WireEvent::Send { ts: 30 },
    ];
    let options = SimOptions {
        policy_latency_ms: 500,
        ..SimOptions::default()
    };
    let out = run_with(&trace, SessionConfig::default(), options);
    assert_eq!(out.cancellations.len(), 1);
    assert!(out.cancellations[0].in_flight);
    assert_eq!(out.cancellations[0].at, 30);
    let bot: Vec<_> = out
        .transcript
        .messages
        .iter()
        .filter(|m| m.role == Role::Bot)
        .map(|m| m.text.as_str())
        .collect();
    assert_eq!(bot, vec!["Echo: again"]);
}

#[test]
fn overlap_disabled_means_no_bot_output_before_send() {
    let config = SessionConfig {
        overlap_enabled: false,
        ..SessionConfig::default()
    };
    let out = run_with(&golden_trace(), config, SimOptions::default());
    let first_bot = out
        .log
        .entries()
        .iter()
        .position(|e| matches!(e.event, WireEvent::BotChar { .. }))
        .unwrap();
    let send = out
        .log
        .entries()
        .iter()
        .position(|e| matches!(e.event, WireEvent::Send { .. }))
        .unwrap();
    assert!(send < first_bot);
    assert_eq!(out.report.overlap_ratio, Some(0.0));
}

#[test]
fn replay_reproduces_the_simulated_report() {
    for trace in [golden_trace(), interruption_trace(200), interruption_trace(60)] {
        let out = run(&trace);
        let reread = ConversationLog::from_jsonl(&out.log.to_jsonl()).unwrap();
        let (transcript, report) = replay(&reread);
        assert_eq!(transcript, out.transcript);
        assert_eq!(report, out.report);
    }
}

#[test]
fn truncated_log_replays_up_to_the_cut() {
    let out = run(&interruption_trace(200));
    let text = out.log.to_jsonl();
    let lines: Vec<&str> = text.lines().collect();
    for cut in 1..lines.len() {
        let prefix = lines[..cut].join("\n") + "\n";
        let log = ConversationLog::from_jsonl(&prefix).unwrap();
        assert_eq!(log.len(), cut);
        let (transcript, _) = replay(&log);
        assert!(transcript.messages.len() <= out.transcript.messages.len());
    }
    // a torn final line is reported at the sequence number it would have had
    let torn = format!("{}\n{}", lines[..10].join("\n"), &lines[10][..lines[10].len() / 2]);
    let err = ConversationLog::from_jsonl(&torn).unwrap_err();
    assert_eq!(err.seq, 10);
}
