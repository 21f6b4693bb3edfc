use overlapchat::analytics::{overlap_ratio, turns_per_minute};
use overlapchat::corpus::{
    build_conversation_samples, build_instruction_sample, classification_report, corpus_bleu, rouge_l, tokenize,
    AnnotatedUtterance, Average,
};
use overlapchat::engine::{resolve_interruption, BotResponse, Effect, EngineError, RetractAction, Session};
use overlapchat::log::Origin;
use overlapchat::policy::{
    parse_tagged_output, rule_policy, BackchannelTable, DraftBudgets, PolicyContext, PolicyMode,
    PolicyReply,
};
use overlapchat::wire::{BotStatus, RetractMode};
use overlapchat::{
    decode_event, encode_event, ConversationLog, DialogueAct, Message, PolicyDecision, Role, SessionConfig, WireEvent,
};
use proptest::prelude::*;

fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::User), Just(Role::Bot)]
}

fn message() -> impl Strategy<Value = Message> {
    (
        any::<u64>(),
        role(),
        any::<String>(),
        any::<bool>(),
        prop::option::of(prop_oneof![Just(DialogueAct::Understanding), Just(DialogueAct::Answer)]),
        any::<u64>(),
        any::<u64>(),
    )
        .prop_map(|(id, role, text, sealed, act, sent_ts, draft_started_ts)| Message {
            id,
            role,
            text,
            sealed_with_ellipsis: sealed,
            act,
            sent_ts,
            draft_started_ts,
        })
}

fn wire_event() -> impl Strategy<Value = WireEvent> {
    prop_oneof![
        any::<String>().prop_map(|session_id| WireEvent::Hello { session_id }),
        (any::<String>(), any::<u64>()).prop_map(|(text, ts)| WireEvent::DraftUpdate { text, ts }),
        any::<u64>().prop_map(|ts| WireEvent::Send { ts }),
        (role(), any::<String>()).prop_map(|(role, text)| WireEvent::PeerDraft { role, text }),
        any::<String>().prop_map(|text_chunk| WireEvent::BotChar { text_chunk }),
        (prop_oneof![Just(RetractMode::Full), Just(RetractMode::Seal)], any::<String>())
            .prop_map(|(mode, visible_text)| WireEvent::BotRetract { mode, visible_text }),
        message().prop_map(|message| WireEvent::BotSend { message }),
        message().prop_map(|message| WireEvent::UserMessageAck { message }),
        prop_oneof![Just(BotStatus::Typing), Just(BotStatus::Idle)].prop_map(|bot| WireEvent::Status { bot }),
        (any::<String>(), any::<String>()).prop_map(|(code, detail)| WireEvent::Error { code, detail }),
    ]
}

fn decision() -> impl Strategy<Value = PolicyDecision> {
    prop_oneof![
        Just(PolicyDecision::wait()),
        (
            prop_oneof![Just(DialogueAct::Understanding), Just(DialogueAct::Answer)],
            "[ -~]{0,12}[!-~][ -~]{0,12}",
        )
            .prop_map(|(act, text)| PolicyDecision::overlap(act, text).unwrap()),
    ]
}

/// Strings that look like the grammar often enough to reach every branch.
fn near_grammar() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        Just("[Await]".to_string()),
        Just("[Overlap]".to_string()),
        Just("[Understanding]".to_string()),
        Just("[Answer]".to_string()),
        Just(" ".to_string()),
        Just("\t".to_string()),
        Just("\n".to_string()),
        Just("[".to_string()),
        "\\PC{0,4}",
    ];
    prop::collection::vec(piece, 0..6).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn codec_round_trip(event in wire_event()) {
        let line = encode_event(&event);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(decode_event(&line).unwrap(), event.clone());
        prop_assert_eq!(decode_event(&(line + "\n")).unwrap(), event);
    }

    #[test]
    fn tag_round_trip(d in decision()) {
        prop_assert_eq!(parse_tagged_output(&d.to_tags()).unwrap(), d);
    }

    #[test]
    fn parser_is_total(text in near_grammar()) {
        if let Ok(d) = parse_tagged_output(&text) {
            // whatever parses renders back to something that parses the same way
            prop_assert_eq!(parse_tagged_output(&d.to_tags()).unwrap(), d);
        }
    }

    #[test]
    fn overlap_without_act_is_unrepresentable(text in any::<Option<String>>()) {
        prop_assert!(PolicyDecision::try_new(overlapchat::TimingDecision::Overlap, None, text.clone()).is_err());
        if text.is_some() {
            prop_assert!(PolicyDecision::try_new(overlapchat::TimingDecision::Await, None, text).is_err());
        }
    }

    #[test]
    fn rule_policy_respects_budgets(
        draft in prop::collection::vec(prop_oneof![Just("what"), Just("did"), Just("you"), Just("paint"), Just("so")], 0..14),
        used in 0u32..3,
        bc_left in 0u32..2,
        pre_left in 0u32..2,
    ) {
        let ctx = PolicyContext {
            transcript: vec![],
            live_draft: draft.join(" "),
            budgets: DraftBudgets { backchannels_used: used, backchannels_left: bc_left, preemptive_left: pre_left },
            mode: PolicyMode::OverlapTrigger,
        };
        let table = BackchannelTable::default();
        let plan = rule_policy(&ctx, &table);
        prop_assert_eq!(&plan, &rule_policy(&ctx.clone(), &table));
        match plan.act() {
            Some(DialogueAct::Understanding) => prop_assert!(bc_left > 0),
            Some(DialogueAct::Answer) => prop_assert!(pre_left > 0),
            None => {}
        }
    }
}

#[test]
fn seal_boundary_is_strict() {
    for n in 0..=300 {
        let expected = if n > 130 { RetractAction::SealWithEllipsis } else { RetractAction::FullRetract };
        assert_eq!(resolve_interruption(n, 130), expected, "n = {n}");
    }
}

#[derive(Debug, Clone)]
enum Op {
    Type(char),
    Backspace,
    Send,
    Advance(u64),
    Reply(u8),
    Direct(bool),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => prop_oneof![Just('a'), Just('b'), Just(' '), Just('?')].prop_map(Op::Type),
        1 => Just(Op::Backspace),
        1 => Just(Op::Send),
        4 => (1u64..1500).prop_map(Op::Advance),
        3 => (0u8..4).prop_map(Op::Reply),
        1 => any::<bool>().prop_map(Op::Direct),
    ]
}

fn config() -> impl Strategy<Value = SessionConfig> {
    (1usize..40, 5u32..80, 1u32..3, 1u32..3, 100u64..1500, 100u64..3000, 1usize..4).prop_map(
        |(seal, cps, bc, pre, pause, cooldown, min_tokens)| SessionConfig {
            interrupt_seal_threshold_chars: seal,
            bot_chars_per_second: cps,
            max_backchannels_per_draft: bc,
            max_preemptive_per_draft: pre,
            trigger_pause_ms: pause,
            cooldown_ms: cooldown,
            min_trigger_tokens: min_tokens,
            ..SessionConfig::default()
        },
    )
}

/// Checks the engine's output laws while a random script drives it.
struct Checker {
    typing: bool,
    understanding_begun: u32,
    answers_begun: u32,
    last_sent_ts: u64,
    pending: Vec<(u64, PolicyMode)>,
}

impl Checker {
    fn absorb(&mut self, effects: &[Effect], session: &Session, overlap_act: Option<DialogueAct>) {
        for effect in effects {
            match effect {
                Effect::EmitWire(WireEvent::Status { bot: BotStatus::Typing }) => {
                    assert!(!self.typing, "second emission began while one was active");
                    self.typing = true;
                    match overlap_act {
                        Some(DialogueAct::Understanding) => self.understanding_begun += 1,
                        Some(DialogueAct::Answer) => self.answers_begun += 1,
                        None => {}
                    }
                }
                Effect::EmitWire(WireEvent::Status { bot: BotStatus::Idle }) => {
                    assert!(self.typing);
                    self.typing = false;
                }
                Effect::EmitWire(WireEvent::BotChar { .. }) => assert!(self.typing),
                Effect::EmitWire(WireEvent::BotSend { message } | WireEvent::UserMessageAck { message }) => {
                    assert!(message.validate().is_ok());
                    assert!(message.sent_ts >= self.last_sent_ts);
                    self.last_sent_ts = message.sent_ts;
                }
                Effect::InvokePolicy(inv) => self.pending.push((inv.request_id, inv.context.mode)),
                _ => {}
            }
        }
        assert_eq!(self.typing, session.state().bot_emission.is_some());
        let c = session.config();
        assert!(self.understanding_begun <= c.max_backchannels_per_draft);
        assert!(self.answers_begun <= c.max_preemptive_per_draft);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn engine_laws(cfg in config(), ops in prop::collection::vec(op(), 1..120)) {
        let mut session = Session::new("p", cfg);
        let mut now = 0u64;
        let mut draft = String::new();
        let mut check = Checker {
            typing: false,
            understanding_begun: 0,
            answers_begun: 0,
            last_sent_ts: 0,
            pending: vec![],
        };
        for op in ops {
            match op {
                Op::Type(c) => {
                    draft.push(c);
                    let ev = WireEvent::DraftUpdate { text: draft.clone(), ts: now };
                    let effects = session.handle_client_event(&ev, now).unwrap();
                    check.absorb(&effects, &session, None);
                }
                Op::Backspace => {
                    draft.pop();
                    let ev = WireEvent::DraftUpdate { text: draft.clone(), ts: now };
                    let effects = session.handle_client_event(&ev, now).unwrap();
                    check.absorb(&effects, &session, None);
                }
                Op::Send => {
                    let was_typing = check.typing;
                    match session.handle_client_event(&WireEvent::Send { ts: now }, now) {
                        Ok(effects) => {
                            let retracts = effects
                                .iter()
                                .filter(|e| matches!(e, Effect::EmitWire(WireEvent::BotRetract { .. })))
                                .count();
                            prop_assert_eq!(retracts, usize::from(was_typing));
                            let fresh = effects
                                .iter()
                                .filter(|e| matches!(e, Effect::InvokePolicy(i) if i.context.mode == PolicyMode::FullResponse))
                                .count();
                            prop_assert_eq!(fresh, 1);
                            check.understanding_begun = 0;
                            check.answers_begun = 0;
                            check.absorb(&effects, &session, None);
                            draft.clear();
                        }
                        Err(e) => prop_assert!(matches!(e, EngineError::Invalid(_)) && draft.is_empty()),
                    }
                }
                Op::Advance(dt) => {
                    now += dt;
                    let effects = session.on_timer(now);
                    check.absorb(&effects, &session, None);
                }
                Op::Reply(kind) => {
                    let Some((request_id, mode)) = check.pending.pop() else { continue };
                    let (reply, act) = match (mode, kind) {
                        (PolicyMode::FullResponse, _) => (PolicyReply::FullResponse("a reply that is long enough to seal".into()), None),
                        (_, 0) => (PolicyReply::Decision(PolicyDecision::wait()), None),
                        (_, 1) => (
                            PolicyReply::Decision(PolicyDecision::overlap(DialogueAct::Understanding, "yeah").unwrap()),
                            Some(DialogueAct::Understanding),
                        ),
                        (_, 2) => (
                            PolicyReply::Decision(PolicyDecision::overlap(DialogueAct::Answer, "sure, the director").unwrap()),
                            Some(DialogueAct::Answer),
                        ),
                        _ => (PolicyReply::Cancelled, None),
                    };
                    let effects = session.apply_policy_reply(request_id, reply, now);
                    check.absorb(&effects, &session, act);
                }
                Op::Direct(answer) => {
                    let response = if answer {
                        BotResponse::Overlap(PolicyDecision::overlap(DialogueAct::Answer, "hm").unwrap())
                    } else {
                        BotResponse::Overlap(PolicyDecision::overlap(DialogueAct::Understanding, "ok").unwrap())
                    };
                    let act = if answer { DialogueAct::Answer } else { DialogueAct::Understanding };
                    match session.begin_bot_response(response, now) {
                        Ok(effects) => check.absorb(&effects, &session, Some(act)),
                        Err(e) => prop_assert!(matches!(e, EngineError::Busy) && check.typing),
                    }
                }
            }
        }
    }
}

fn utterance() -> impl Strategy<Value = AnnotatedUtterance> {
    (
        prop_oneof![Just("A"), Just("B")],
        prop::collection::vec(prop_oneof![Just("so"), Just("yeah"), Just("we"), Just("went"), Just("out?")], 0..9),
        prop_oneof![Just("sd"), Just("b"), Just("aa"), Just("qy"), Just("??")],
        prop::option::of(0usize..10),
    )
        .prop_map(|(speaker, words, act, onset)| AnnotatedUtterance {
            dialogue_id: String::new(),
            speaker: speaker.into(),
            text: words.join(" "),
            act_label: act.into(),
            overlap_onset: onset,
        })
}

/// Clamps onsets so they are valid for the previous utterance.
fn fix_onsets(mut d: Vec<AnnotatedUtterance>) -> Vec<AnnotatedUtterance> {
    for i in 0..d.len() {
        let prev = if i == 0 { 0 } else { d[i - 1].text.split_whitespace().count() };
        d[i].overlap_onset = match d[i].overlap_onset {
            Some(o) if prev > 0 => Some(o % prev),
            _ => None,
        };
    }
    d
}

proptest! {
    #[test]
    fn corpus_targets_parse_and_prefixes_are_word_prefixes(
        dialogue in prop::collection::vec(utterance(), 2..12).prop_map(fix_onsets),
        seed in any::<u64>(),
    ) {
        let samples = build_conversation_samples(&dialogue, seed).unwrap();
        prop_assert_eq!(&samples, &build_conversation_samples(&dialogue, seed).unwrap());
        for s in &samples {
            prop_assert!(parse_tagged_output(&s.target).is_ok(), "{}", s.target);
            let prefix: Vec<&str> = s.prefix.split_whitespace().collect();
            let source = &dialogue[s.context.len()].text;
            let words: Vec<&str> = source.split_whitespace().collect();
            prop_assert!(words.starts_with(&prefix));
        }
    }

    #[test]
    fn instruction_samples_are_deterministic(words in prop::collection::vec("[a-z]{1,6}", 4..20), seed in any::<u64>()) {
        let text = words.join(" ");
        let a = build_instruction_sample(&text, seed).unwrap();
        prop_assert_eq!(a.to_line(), build_instruction_sample(&text, seed).unwrap().to_line());
        prop_assert!(parse_tagged_output(&a.target).is_ok());
        prop_assert!(text.starts_with(&a.prefix));
    }

    #[test]
    fn classification_identity(labels in prop::collection::vec(0u8..4, 1..40)) {
        for average in [Average::Macro, Average::Weighted] {
            let r = classification_report(&labels, &labels, average).unwrap();
            prop_assert_eq!(r.accuracy, 1.0);
            for v in [r.precision, r.recall, r.f1] {
                prop_assert!((v - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn text_score_laws(c in prop::collection::vec("[abc]", 0..8), r in prop::collection::vec("[abc]", 0..8)) {
        let (cs, rs) = (c.join(" "), r.join(" "));
        let bleu = corpus_bleu(&[&cs], &[&rs]).unwrap();
        let rouge = rouge_l(&cs, &rs);
        prop_assert!((0.0..=1.0).contains(&bleu));
        prop_assert!((0.0..=1.0).contains(&rouge));
        if !c.is_empty() {
            prop_assert_eq!(corpus_bleu(&[&cs], &[&cs]).unwrap(), 1.0);
        }
        prop_assert_eq!(rouge == 1.0, !c.is_empty() && tokenize(&cs) == tokenize(&rs));
        if bleu == 1.0 {
            let (mut cu, mut ru) = (tokenize(&cs), tokenize(&rs));
            cu.sort();
            ru.sort();
            prop_assert_eq!(cu, ru);
        }
    }
}

/// BLEU-4 sees only n-grams up to length 4, so two different sequences that
/// share every such n-gram, and their endpoints, still score 1.
#[test]
fn bleu_cannot_separate_rearranged_repeats() {
    let c = "a a a a b a a a";
    let r = "a a a b a a a a";
    assert_ne!(c, r);
    assert_eq!(corpus_bleu(&[c], &[r]).unwrap(), 1.0);
    assert!(rouge_l(c, r) < 1.0);
}

fn push(log: &mut ConversationLog, ts: u64, event: WireEvent) {
    log.append(Origin::of(&event), event, ts).unwrap();
}

fn activity(user: bool, i: usize) -> WireEvent {
    if user {
        WireEvent::DraftUpdate { text: "x".repeat(i + 1), ts: 0 }
    } else {
        WireEvent::BotChar { text_chunk: "y".into() }
    }
}

fn ack() -> WireEvent {
    WireEvent::UserMessageAck {
        message: Message {
            id: 0,
            role: Role::User,
            text: "x".into(),
            sealed_with_ellipsis: false,
            act: None,
            sent_ts: 0,
            draft_started_ts: 0,
        },
    }
}

proptest! {
    #[test]
    fn doubling_a_log_keeps_rates(
        events in prop::collection::vec((0u64..1000, 0u8..3), 1..50),
        bins in 2u64..20,
        bin_ms in prop_oneof![Just(250u64), Just(1000)],
    ) {
        let span = bins * bin_ms;
        let mut events: Vec<(u64, u8)> = events.into_iter().map(|(t, k)| (t * span / 1000, k)).collect();
        events.sort();
        let build = |copies: u64| {
            let mut log = ConversationLog::new("p", SessionConfig::default());
            for copy in 0..copies {
                push(&mut log, copy * span, activity(true, 0));
                for (i, (t, kind)) in events.iter().enumerate() {
                    let event = match kind { 0 => activity(true, i), 1 => activity(false, i), _ => ack() };
                    push(&mut log, copy * span + t, event);
                }
            }
            push(&mut log, copies * span, WireEvent::Status { bot: BotStatus::Idle });
            log
        };
        let (once, twice) = (build(1), build(2));
        let t1 = turns_per_minute(&once, Role::User).unwrap();
        let t2 = turns_per_minute(&twice, Role::User).unwrap();
        prop_assert!((t1 - t2).abs() <= 1e-9 * t1.max(1.0));
        let r1 = overlap_ratio(&once, bin_ms).unwrap();
        let r2 = overlap_ratio(&twice, bin_ms).unwrap();
        prop_assert!((r1 - r2).abs() <= 100.0 / (2 * bins) as f64 + 1e-9);
    }

    #[test]
    fn extra_bot_char_never_lowers_overlap(
        events in prop::collection::vec((0u64..10_000, any::<bool>()), 2..40),
        extra in 0u64..10_000,
        bin_ms in 200u64..2000,
    ) {
        let mut events = events;
        events.sort();
        let (first, last) = (events[0].0, events[events.len() - 1].0);
        prop_assume!(last - first >= bin_ms);
        let extra = first + extra % (last - first);
        let build = |with_extra: bool| {
            let mut all: Vec<(u64, bool, bool)> = events.iter().map(|(t, u)| (*t, *u, false)).collect();
            if with_extra {
                all.push((extra, false, true));
                all.sort();
            }
            let mut log = ConversationLog::new("p", SessionConfig::default());
            for (i, (t, user, _)) in all.iter().enumerate() {
                push(&mut log, *t, activity(*user, i));
            }
            log
        };
        prop_assert!(overlap_ratio(&build(true), bin_ms).unwrap() >= overlap_ratio(&build(false), bin_ms).unwrap());
    }

    #[test]
    fn log_reappend_is_byte_identical(events in prop::collection::vec((wire_event(), 0u64..500), 0..30)) {
        let mut log = ConversationLog::with_header("p", SessionConfig::default(), 7);
        let mut ts = 7;
        for (event, dt) in events {
            ts += dt;
            push(&mut log, ts, event);
        }
        let text = log.to_jsonl();
        let parsed = ConversationLog::from_jsonl(&text).unwrap();
        let mut rebuilt = ConversationLog::with_header(&parsed.session_id, parsed.config.clone(), parsed.entries()[0].ts);
        for entry in &parsed.entries()[1..] {
            rebuilt.append(entry.origin, entry.event.clone(), entry.ts).unwrap();
        }
        prop_assert_eq!(rebuilt.to_jsonl(), text.clone());

        // any prefix cut at a line boundary still loads
        let lines: Vec<&str> = text.lines().collect();
        for cut in 1..=lines.len() {
            let prefix = lines[..cut].join("\n");
            prop_assert_eq!(ConversationLog::from_jsonl(&prefix).unwrap().len(), cut);
        }
    }
}
