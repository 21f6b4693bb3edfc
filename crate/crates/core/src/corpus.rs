//! Overlap-tagged sample construction and evaluation scoring.
//!
//! Corpora enter through a normalized JSONL intermediate, one
//! [`AnnotatedUtterance`] per line, so no corpus-specific file layout leaks
//! into the pipeline. Samples leave as [`TaggedSample`] JSONL whose `target`
//! is written in the tag grammar.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod build;
mod eval;
mod score;

pub use build::{
    build_conversation_samples, build_corpus, build_instruction_sample, BuildOptions, CorpusBuild, SampleBuilder,
    INSTRUCTION_BACKCHANNELS,
};
pub use eval::{run_eval, ActLabel, EvalReport};
pub use score::{classification_report, confusion, corpus_bleu, corpus_rouge_l, rouge_l, tokenize, Average, ClassReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("EMPTY_DIALOGUE: a dialogue needs at least two utterances")]
    EmptyDialogue,
    #[error("TOO_SHORT: instruction has {tokens} tokens, at least 4 are needed")]
    TooShort { tokens: usize },
    #[error("BAD_ONSET: overlap onset {onset} is outside the previous utterance ({tokens} tokens)")]
    BadOnset { onset: usize, tokens: usize },
    #[error("LENGTH_MISMATCH: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("EMPTY: nothing to score")]
    Empty,
    #[error("MALFORMED_GOLD: sample {index} has an unparseable target")]
    MalformedGold { index: usize },
    #[error("BAD_INPUT: line {line}: {detail}")]
    BadInput { line: usize, detail: String },
}

/// One utterance of a dialogue-act annotated corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedUtterance {
    /// Consecutive lines with the same id form one dialogue.
    #[serde(default)]
    pub dialogue_id: String,
    pub speaker: String,
    pub text: String,
    pub act_label: String,
    /// Token index in the previous utterance at which this one began.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_onset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextTurn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggedSample {
    pub context: Vec<ContextTurn>,
    pub prefix: String,
    pub target: String,
}

impl TaggedSample {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("samples always serialize")
    }
}

/// Groups normalized utterance lines into dialogues by `dialogue_id`.
pub fn read_dialogues(jsonl: &str) -> Result<Vec<Vec<AnnotatedUtterance>>, CorpusError> {
    let mut dialogues: Vec<Vec<AnnotatedUtterance>> = Vec::new();
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let utterance: AnnotatedUtterance = serde_json::from_str(line).map_err(|e| CorpusError::BadInput {
            line: i + 1,
            detail: e.to_string(),
        })?;
        match dialogues.last_mut() {
            Some(current) if current[0].dialogue_id == utterance.dialogue_id => current.push(utterance),
            _ => dialogues.push(vec![utterance]),
        }
    }
    Ok(dialogues)
}

/// Reads one instruction per line. Lines may also be JSON objects with an
/// `instruction` field, as in common instruction-tuning dumps.
pub fn read_instructions(text: &str) -> Result<Vec<String>, CorpusError> {
    #[derive(Deserialize)]
    struct Row {
        instruction: String,
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let row: Row = serde_json::from_str(line).map_err(|e| CorpusError::BadInput {
                line: i + 1,
                detail: e.to_string(),
            })?;
            out.push(row.instruction);
        } else {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

pub fn read_samples(jsonl: &str) -> Result<Vec<TaggedSample>, CorpusError> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::BadInput {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConsolidatedAct {
    Understanding,
    NotOverlapSignal,
}

/// The Switchboard DAMSL tag set; anything outside it is counted as unknown.
pub const SWDA_TAGS: &[&str] = &[
    "sd", "b", "sv", "aa", "%", "ba", "qy", "x", "ny", "fc", "qw", "nn", "bk", "h", "qy^d", "fo_o_fw_\"_by_bc",
    "bh", "^q", "bf", "na", "ad", "^2", "b^m", "qo", "qh", "^h", "ar", "ng", "br", "no", "fp", "qrr", "arp_nd",
    "t3", "oo_co_cc", "t1", "bd", "aap_am", "^g", "qw^d", "fa", "ft", "+",
];

/// Labels folded into `[Understanding]`: backchannels, backchannel questions,
/// acknowledgements, repeat-phrases and agreement.
pub const UNDERSTANDING_LABELS: &[&str] = &["b", "bh", "bk", "b^m", "aa"];

/// Maps corpus act labels onto the two classes the overlap tags need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActConsolidator {
    understanding: BTreeSet<String>,
    known: BTreeSet<String>,
    unknown_labels: usize,
}

impl Default for ActConsolidator {
    fn default() -> Self {
        Self::new(UNDERSTANDING_LABELS.iter().copied())
    }
}

impl ActConsolidator {
    pub fn new<'a>(understanding: impl IntoIterator<Item = &'a str>) -> Self {
        let understanding: BTreeSet<String> = understanding.into_iter().map(str::to_string).collect();
        let known = SWDA_TAGS
            .iter()
            .map(|t| t.to_string())
            .chain(understanding.iter().cloned())
            .collect();
        Self {
            understanding,
            known,
            unknown_labels: 0,
        }
    }

    pub fn consolidate(&mut self, act_label: &str) -> ConsolidatedAct {
        let label = act_label.trim();
        if self.understanding.contains(label) {
            return ConsolidatedAct::Understanding;
        }
        if !self.known.contains(label) {
            self.unknown_labels += 1;
        }
        ConsolidatedAct::NotOverlapSignal
    }

    /// Number of labels seen that belong to no known tag set.
    pub fn unknown_labels(&self) -> usize {
        self.unknown_labels
    }
}

/// Consolidation with the default label set.
pub fn consolidate_acts(act_label: &str) -> ConsolidatedAct {
    ActConsolidator::default().consolidate(act_label)
}
