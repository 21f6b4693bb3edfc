use serde::{Deserialize, Serialize};

use super::score::{classification_report, corpus_bleu, corpus_rouge_l, Average, ClassReport};
use super::{CorpusError, TaggedSample};
use crate::policy::{parse_or_await, parse_tagged_output};
use crate::types::{DialogueAct, TimingDecision};

/// Act class of a prediction on a gold-Overlap sample; a prediction that
/// waits is its own class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActLabel {
    Understanding,
    Answer,
    Await,
}

impl From<Option<DialogueAct>> for ActLabel {
    fn from(act: Option<DialogueAct>) -> Self {
        match act {
            Some(DialogueAct::Understanding) => ActLabel::Understanding,
            Some(DialogueAct::Answer) => ActLabel::Answer,
            None => ActLabel::Await,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Samples whose gold target overlaps.
    pub overlap_samples: usize,
    /// Outputs that did not parse and were scored as `[Await]`.
    pub malformed_outputs: usize,
    pub timing: ClassReport,
    /// `None` when no gold target overlaps.
    pub acts: Option<ClassReport>,
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
}

/// Scores model outputs against gold samples. Act and utterance scores cover
/// only gold-Overlap samples; a prediction that waits there contributes an
/// empty candidate.
pub fn run_eval<S: AsRef<str>>(
    samples: &[TaggedSample],
    outputs: &[S],
    average: Average,
) -> Result<EvalReport, CorpusError> {
    if samples.len() != outputs.len() {
        return Err(CorpusError::LengthMismatch {
            left: samples.len(),
            right: outputs.len(),
        });
    }
    let mut golds = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        golds.push(parse_tagged_output(&s.target).map_err(|_| CorpusError::MalformedGold { index })?);
    }
    let malformed_outputs = outputs
        .iter()
        .filter(|o| parse_tagged_output(o.as_ref()).is_err())
        .count();
    let preds: Vec<_> = outputs.iter().map(|o| parse_or_await(o.as_ref())).collect();

    let gold_timing: Vec<TimingDecision> = golds.iter().map(|g| g.timing()).collect();
    let pred_timing: Vec<TimingDecision> = preds.iter().map(|p| p.timing()).collect();
    let timing = classification_report(&pred_timing, &gold_timing, average)?;

    let overlapping: Vec<usize> = (0..golds.len()).filter(|&i| golds[i].is_overlap()).collect();
    let (acts, bleu, rouge_l) = if overlapping.is_empty() {
        (None, None, None)
    } else {
        let gold_acts: Vec<ActLabel> = overlapping.iter().map(|&i| golds[i].act().into()).collect();
        let pred_acts: Vec<ActLabel> = overlapping.iter().map(|&i| preds[i].act().into()).collect();
        let refs: Vec<&str> = overlapping.iter().map(|&i| golds[i].utterance().unwrap_or("")).collect();
        let cands: Vec<&str> = overlapping.iter().map(|&i| preds[i].utterance().unwrap_or("")).collect();
        (
            Some(classification_report(&pred_acts, &gold_acts, average)?),
            Some(corpus_bleu(&cands, &refs)?),
            Some(corpus_rouge_l(&cands, &refs)?),
        )
    };
    Ok(EvalReport {
        samples: samples.len(),
        overlap_samples: overlapping.len(),
        malformed_outputs,
        timing,
        acts,
        bleu,
        rouge_l,
    })
}
