use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Lowercase whitespace tokens, the unit all text scores work on.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Average {
    #[default]
    Macro,
    /// Per-class values weighted by gold support.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus averaged per-class precision, recall and F1. Classes are the
/// labels occurring in either list, so a class absent from both never dilutes
/// the average.
pub fn classification_report<L: Ord + Clone>(
    preds: &[L],
    golds: &[L],
    average: Average,
) -> Result<ClassReport, CorpusError> {
    if preds.len() != golds.len() {
        return Err(CorpusError::LengthMismatch {
            left: preds.len(),
            right: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(CorpusError::Empty);
    }
    let classes: BTreeSet<&L> = preds.iter().chain(golds).collect();
    let n = golds.len();
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for class in &classes {
        let tp = preds.iter().zip(golds).filter(|(p, g)| p == class && g == class).count();
        let predicted = preds.iter().filter(|p| p == class).count();
        let support = golds.iter().filter(|g| g == class).count();
        let p = ratio(tp, predicted);
        let r = ratio(tp, support);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let weight = match average {
            Average::Macro => 1.0 / classes.len() as f64,
            Average::Weighted => support as f64 / n as f64,
        };
        precision += weight * p;
        recall += weight * r;
        f1 += weight * f;
    }
    Ok(ClassReport {
        accuracy: ratio(correct, n),
        precision,
        recall,
        f1,
    })
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level BLEU-4 with one reference per candidate.
///
/// Orders with no candidate n-grams are left out of the geometric mean; an
/// order with no matches contributes `1 / (2 * candidate n-grams)`.
pub fn corpus_bleu<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[R]) -> Result<f64, CorpusError> {
    if candidates.len() != references.len() {
        return Err(CorpusError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let c = tokenize(c.as_ref());
        let r = tokenize(r.as_ref());
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let ref_counts = ngram_counts(&r, n);
            for (gram, count) in ngram_counts(&c, n) {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let logs: Vec<f64> = (0..4)
        .filter(|&i| total[i] > 0)
        .map(|i| {
            let p = if matched[i] == 0 {
                1.0 / (2.0 * total[i] as f64)
            } else {
                matched[i] as f64 / total[i] as f64
            };
            p.ln()
        })
        .collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let brevity = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(brevity * mean.exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diagonal = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diagonal + 1 } else { above.max(row[j]) };
            diagonal = above;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 (beta = 1) over lowercase whitespace tokens. Zero when either
/// side has no tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&c, &r);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / c.len() as f64;
    let r = lcs as f64 / r.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean sentence ROUGE-L.
pub fn corpus_rouge_l<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[R]) -> Result<f64, CorpusError> {
    if candidates.len() != references.len() {
        return Err(CorpusError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(CorpusError::Empty);
    }
    let sum: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l(c.as_ref(), r.as_ref()))
        .sum();
    Ok(sum / candidates.len() as f64)
}

/// Per-class counts, exposed for reports that list classes individually.
pub fn confusion<L: Ord + Clone>(preds: &[L], golds: &[L]) -> BTreeMap<(L, L), usize> {
    let mut out = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        *out.entry((g.clone(), p.clone())).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_report() {
        let golds = ["A", "O", "A", "O"];
        let preds = ["A", "A", "A", "O"];
        let r = classification_report(&preds, &golds, Average::Macro).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.precision - 0.8333).abs() < 1e-4);
        assert!((r.recall - 0.75).abs() < 1e-12);
        assert!((r.f1 - 0.7333).abs() < 1e-4);
        // supports are equal, so weighting changes nothing here
        let w = classification_report(&preds, &golds, Average::Weighted).unwrap();
        assert!((w.f1 - r.f1).abs() < 1e-12);
    }

    #[test]
    fn report_errors() {
        assert!(matches!(
            classification_report(&["A"], &["A", "B"], Average::Macro),
            Err(CorpusError::LengthMismatch { left: 1, right: 2 })
        ));
        let empty: [&str; 0] = [];
        assert_eq!(classification_report(&empty, &empty, Average::Macro), Err(CorpusError::Empty));
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(corpus_bleu(&["yeah i painted something recently"], &["yeah i painted something recently"]).unwrap(), 1.0);
        let short = corpus_bleu(&["yeah i did"], &["yeah i did paint"]).unwrap();
        assert!((short - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-12);
        let disjoint = corpus_bleu(&["no"], &["yeah i painted something recently"]).unwrap();
        assert!(disjoint < 0.01);
        assert_eq!(corpus_bleu(&[""], &["yeah"]).unwrap(), 0.0);
        assert_eq!(corpus_bleu(&["YEAH  I did"], &["yeah i did"]).unwrap(), 1.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l("yeah i did", "yeah i did"), 1.0);
        assert!((rouge_l("yeah i did", "yeah i did paint") - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(rouge_l("a b", "c d"), 0.0);
        assert_eq!(rouge_l("", "c d"), 0.0);
        assert_eq!(corpus_rouge_l(&["a b", "x"], &["a b", "y"]).unwrap(), 0.5);
    }

    #[test]
    fn confusion_counts() {
        let m = confusion(&["A", "A", "O"], &["A", "O", "O"]);
        assert_eq!(m[&("O", "A")], 1);
        assert_eq!(m[&("A", "A")], 1);
    }
}
