use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActConsolidator, AnnotatedUtterance, ConsolidatedAct, ContextTurn, CorpusError, TaggedSample};
use crate::policy::{select_backchannel, BackchannelTable};
use crate::types::{DialogueAct, PolicyDecision};

/// Listener cues inserted into instruction samples.
pub const INSTRUCTION_BACKCHANNELS: &[&str] = &["Yeah.", "Uh-huh.", "Right.", "Mm-hmm.", "I see."];

/// Offset separating the seed streams of instructions from those of dialogues.
const INSTRUCTION_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildOptions {
    /// Fractions of the token count bounding the seeded truncation point.
    pub window: (f64, f64),
    /// `[Await]` samples drawn per positive sample in a dialogue.
    pub negatives_per_positive: usize,
    /// Chance that an instruction sample is labelled `[Await]`.
    pub instruction_await_probability: f64,
    pub instruction_backchannels: Vec<String>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            window: (0.25, 0.75),
            negatives_per_positive: 1,
            instruction_await_probability: 0.5,
            instruction_backchannels: INSTRUCTION_BACKCHANNELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl BuildOptions {
    /// Seeded cut point in `1..=n`, drawn from the window and kept short of the
    /// full utterance when it has more than one token.
    fn cut(&self, n: usize, rng: &mut ChaCha8Rng) -> usize {
        let ceiling = n.saturating_sub(1).max(1);
        let lo = ((n as f64 * self.window.0).ceil() as usize).clamp(1, ceiling);
        let hi = ((n as f64 * self.window.1).floor() as usize).clamp(lo, ceiling);
        rng.random_range(lo..=hi)
    }
}

fn tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn context(turns: &[AnnotatedUtterance]) -> Vec<ContextTurn> {
    turns
        .iter()
        .map(|u| ContextTurn {
            speaker: u.speaker.clone(),
            text: u.text.clone(),
        })
        .collect()
}

/// Sample builder holding options and the act-label warning counter.
#[derive(Debug, Clone, Default)]
pub struct SampleBuilder {
    pub options: BuildOptions,
    pub consolidator: ActConsolidator,
}

impl SampleBuilder {
    pub fn new(options: BuildOptions, consolidator: ActConsolidator) -> Self {
        Self { options, consolidator }
    }

    pub fn conversation(
        &mut self,
        dialogue: &[AnnotatedUtterance],
        seed: u64,
    ) -> Result<Vec<TaggedSample>, CorpusError> {
        if dialogue.len() < 2 {
            return Err(CorpusError::EmptyDialogue);
        }
        for pair in dialogue.windows(2) {
            if let Some(onset) = pair[1].overlap_onset {
                let n = tokens(&pair[0].text).len();
                if onset >= n {
                    return Err(CorpusError::BadOnset { onset, tokens: n });
                }
            }
        }
        let acts: Vec<ConsolidatedAct> = dialogue
            .iter()
            .map(|u| self.consolidator.consolidate(&u.act_label))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut out: Vec<(usize, TaggedSample)> = Vec::new();
        for i in 0..dialogue.len() - 1 {
            let (turn, next) = (&dialogue[i], &dialogue[i + 1]);
            let turn_tokens = tokens(&turn.text);
            let reply = tokens(&next.text).join(" ");
            if turn.speaker == next.speaker || turn_tokens.is_empty() || reply.is_empty() {
                continue;
            }
            let act = if acts[i + 1] == ConsolidatedAct::Understanding {
                DialogueAct::Understanding
            } else if turn.text.trim_end().ends_with('?') && next.overlap_onset.is_some() {
                DialogueAct::Answer
            } else {
                continue;
            };
            let k = match next.overlap_onset {
                Some(onset) if onset > 0 => onset,
                _ => self.options.cut(turn_tokens.len(), &mut rng),
            };
            let target = PolicyDecision::overlap(act, reply).expect("reply is non-empty").to_tags();
            out.push((
                i,
                TaggedSample {
                    context: context(&dialogue[..i]),
                    prefix: turn_tokens[..k].join(" "),
                    target,
                },
            ));
        }

        let candidates: Vec<usize> = (0..dialogue.len())
            .filter(|i| !out.iter().any(|(p, _)| p == i) && !tokens(&dialogue[*i].text).is_empty())
            .collect();
        let wanted = (out.len().max(1) * self.options.negatives_per_positive).min(candidates.len());
        let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), wanted)
            .into_iter()
            .map(|j| candidates[j])
            .collect();
        picked.sort_unstable();
        for i in picked {
            let turn_tokens = tokens(&dialogue[i].text);
            let k = self.options.cut(turn_tokens.len(), &mut rng);
            out.push((
                i,
                TaggedSample {
                    context: context(&dialogue[..i]),
                    prefix: turn_tokens[..k].join(" "),
                    target: PolicyDecision::wait().to_tags(),
                },
            ));
        }
        out.sort_by_key(|(i, _)| *i);
        Ok(out.into_iter().map(|(_, s)| s).collect())
    }

    pub fn instruction(&self, instruction: &str, seed: u64) -> Result<TaggedSample, CorpusError> {
        let words = tokens(instruction);
        if words.len() < 4 {
            return Err(CorpusError::TooShort { tokens: words.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.options.cut(words.len(), &mut rng);
        let wait = rng.random_bool(self.options.instruction_await_probability.clamp(0.0, 1.0));
        let table_seed: u64 = rng.random();
        let target = if wait {
            PolicyDecision::wait()
        } else {
            let table = BackchannelTable::new(self.options.instruction_backchannels.iter().cloned())
                .unwrap_or_default()
                .seeded(table_seed);
            PolicyDecision::overlap(DialogueAct::Understanding, select_backchannel(0, &table))
                .expect("backchannels are non-empty")
        };
        Ok(TaggedSample {
            context: Vec::new(),
            prefix: words[..k].join(" "),
            target: target.to_tags(),
        })
    }
}

pub fn build_conversation_samples(
    dialogue: &[AnnotatedUtterance],
    seed: u64,
) -> Result<Vec<TaggedSample>, CorpusError> {
    SampleBuilder::default().conversation(dialogue, seed)
}

pub fn build_instruction_sample(instruction: &str, seed: u64) -> Result<TaggedSample, CorpusError> {
    SampleBuilder::default().instruction(instruction, seed)
}

/// Outcome of building a whole corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusBuild {
    pub samples: Vec<TaggedSample>,
    /// Inputs skipped with the reason, by kind and index.
    pub skipped: Vec<String>,
    pub unknown_labels: usize,
}

/// Builds samples for every dialogue, then every instruction. Dialogue `i`
/// is seeded with `seed + i`; instructions use a separate seed stream.
/// Output order follows input order.
pub fn build_corpus(
    builder: &mut SampleBuilder,
    dialogues: &[Vec<AnnotatedUtterance>],
    instructions: &[String],
    seed: u64,
) -> CorpusBuild {
    let mut build = CorpusBuild::default();
    for (i, dialogue) in dialogues.iter().enumerate() {
        match builder.conversation(dialogue, seed.wrapping_add(i as u64)) {
            Ok(samples) => build.samples.extend(samples),
            Err(e) => build.skipped.push(format!("dialogue {i}: {e}")),
        }
    }
    for (j, instruction) in instructions.iter().enumerate() {
        let stream = seed.wrapping_add(INSTRUCTION_STREAM).wrapping_add(j as u64);
        match builder.instruction(instruction, stream) {
            Ok(sample) => build.samples.push(sample),
            Err(e) => build.skipped.push(format!("instruction {j}: {e}")),
        }
    }
    build.unknown_labels = builder.consolidator.unknown_labels();
    build
}
