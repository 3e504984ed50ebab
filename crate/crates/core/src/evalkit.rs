//! Frame-word link evaluation, the proportional baseline, and the alignment
//! TSV format.
//!
//! A link is `(word_index, frame_index)`, both 0-indexed. Corpus-level scores
//! pool links over all utterances.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{GoldAlignment, SentencePair};
use crate::distortion::{allocate_mu, DistortionError};
use crate::model::{Alignment, ClusterId, WordAlignment};
use crate::segmentation::Span;

pub type Links = BTreeSet<(usize, usize)>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Distortion(#[from] DistortionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl Prf {
    fn from_counts(matched: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |num: usize, den: usize, other: usize| {
            if den > 0 {
                num as f64 / den as f64
            } else if other == 0 {
                1.0
            } else {
                0.0
            }
        };
        let precision = ratio(matched, predicted, gold);
        let recall = ratio(matched, gold, predicted);
        let f_score = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Prf { precision, recall, f_score }
    }
}

/// Inclusive 1-indexed spans to 0-indexed links.
pub fn alignment_to_links(alignment: &Alignment) -> Links {
    alignment
        .words
        .iter()
        .enumerate()
        .flat_map(|(i, w)| (w.span.a..=w.span.b).map(move |j| (i, j - 1)))
        .collect()
}

pub fn score(predicted: &Links, gold: &Links) -> Prf {
    Prf::from_counts(predicted.intersection(gold).count(), predicted.len(), gold.len())
}

#[derive(Debug, Clone, Default)]
struct Counts {
    matched: usize,
    predicted: usize,
    gold: usize,
}

impl Counts {
    fn add(&mut self, pred: &Links, gold: &Links) {
        self.matched += pred.intersection(gold).count();
        self.predicted += pred.len();
        self.gold += gold.len();
    }

    fn prf(&self) -> Prf {
        Prf::from_counts(self.matched, self.predicted, self.gold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub matched_links: usize,
    pub predicted_links: usize,
    pub gold_links: usize,
    pub per_utterance: BTreeMap<String, Prf>,
    pub per_word_type: BTreeMap<String, Prf>,
}

/// Micro-averaged scores over every utterance present in either map.
/// `words` supplies each utterance's tokens for the per-word-type breakdown.
pub fn evaluate(
    predicted: &BTreeMap<String, Links>,
    gold: &BTreeMap<String, GoldAlignment>,
    words: &BTreeMap<String, Vec<String>>,
) -> EvalReport {
    let empty = Links::new();
    let ids: BTreeSet<&String> = predicted.keys().chain(gold.keys()).collect();
    let mut corpus = Counts::default();
    let mut per_utterance = BTreeMap::new();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for id in ids {
        let pred = predicted.get(id).unwrap_or(&empty);
        let gl = gold.get(id).map_or(&empty, |g| &g.links);
        corpus.add(pred, gl);
        per_utterance.insert(id.clone(), score(pred, gl));
        if let Some(tokens) = words.get(id) {
            for (i, token) in tokens.iter().enumerate() {
                let p: Links = pred.iter().filter(|l| l.0 == i).copied().collect();
                let g: Links = gl.iter().filter(|l| l.0 == i).copied().collect();
                per_type.entry(token.clone()).or_default().add(&p, &g);
            }
        }
    }
    let total = corpus.prf();
    EvalReport {
        precision: total.precision,
        recall: total.recall,
        f_score: total.f_score,
        matched_links: corpus.matched,
        predicted_links: corpus.predicted,
        gold_links: corpus.gold,
        per_utterance,
        per_word_type: per_type.into_iter().map(|(k, c)| (k, c.prf())).collect(),
    }
}

/// Convenience wrapper evaluating alignments of a set of sentence pairs.
pub fn evaluate_alignments(
    alignments: &[Alignment],
    pairs: &[SentencePair],
    gold: &BTreeMap<String, GoldAlignment>,
) -> EvalReport {
    let predicted = alignments.iter().map(|a| (a.utt_id.clone(), alignment_to_links(a))).collect();
    let words = pairs.iter().map(|p| (p.utt_id.clone(), p.target_words.clone())).collect();
    evaluate(&predicted, gold, &words)
}

/// Monotone split of the utterance into contiguous spans proportional to
/// the words' character counts.
pub fn naive_baseline(pair: &SentencePair) -> Result<Alignment, EvalError> {
    let mu = allocate_mu(&pair.char_lengths, pair.num_frames())?;
    let mut start = 1;
    let words = mu
        .0
        .iter()
        .map(|&len| {
            let span = Span::new(start, start + len - 1);
            start += len;
            WordAlignment { cluster: None, span, log_score: f64::NAN }
        })
        .collect();
    Ok(Alignment { utt_id: pair.utt_id.clone(), words })
}

pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "precision\t{:.6}", report.precision);
    let _ = writeln!(out, "recall\t{:.6}", report.recall);
    let _ = writeln!(out, "f_score\t{:.6}", report.f_score);
    let _ = writeln!(out, "links\tmatched={} predicted={} gold={}", report.matched_links, report.predicted_links, report.gold_links);
    let _ = writeln!(out, "\n# utterance\tprecision\trecall\tf_score");
    for (id, s) in &report.per_utterance {
        let _ = writeln!(out, "{id}\t{:.6}\t{:.6}\t{:.6}", s.precision, s.recall, s.f_score);
    }
    let _ = writeln!(out, "\n# word_type\tprecision\trecall\tf_score");
    for (w, s) in &report.per_word_type {
        let _ = writeln!(out, "{w}\t{:.6}\t{:.6}\t{:.6}", s.precision, s.recall, s.f_score);
    }
    out
}

/// Machine-readable dump: one row per utterance plus a `*` corpus row.
pub fn format_report_tsv(report: &EvalReport) -> String {
    let mut out = String::from("utt_id\tprecision\trecall\tf_score\n");
    for (id, s) in &report.per_utterance {
        let _ = writeln!(out, "{id}\t{}\t{}\t{}", s.precision, s.recall, s.f_score);
    }
    let _ = writeln!(out, "*\t{}\t{}\t{}", report.precision, report.recall, report.f_score);
    out
}

pub const ALIGNMENT_HEADER: &str = "utt_id\tword_index\tword\tcluster_id\tstart_frame\tend_frame\tlog_score";

/// Alignments as TSV; frames are written 0-indexed with exclusive ends.
pub fn format_alignments(alignments: &[Alignment], pairs: &[SentencePair]) -> String {
    let mut out = String::from(ALIGNMENT_HEADER);
    out.push('\n');
    for (alignment, pair) in alignments.iter().zip(pairs) {
        for (i, (w, token)) in alignment.words.iter().zip(&pair.target_words).enumerate() {
            let cluster = w.cluster.map_or_else(|| "-".to_string(), |c| c.to_string());
            let _ = writeln!(
                out,
                "{}\t{i}\t{token}\t{cluster}\t{}\t{}\t{}",
                alignment.utt_id,
                w.span.a - 1,
                w.span.b,
                w.log_score
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRow {
    pub utt_id: String,
    pub word_index: usize,
    pub word: String,
    pub cluster: Option<ClusterId>,
    pub start_frame: usize,
    pub end_frame: usize,
    pub log_score: f64,
}

pub fn parse_alignments(text: &str, path: &str) -> Result<Vec<AlignmentRow>, EvalError> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with("utt_id\t") {
            continue;
        }
        let err = |msg: String| EvalError::Parse { path: path.to_string(), line: n + 1, msg };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| err(format!("bad number {s:?}: {e}")));
        let cluster = if f[3] == "-" { None } else { Some(ClusterId(num(f[3])?)) };
        let (start_frame, end_frame) = (num(f[4])?, num(f[5])?);
        if start_frame >= end_frame {
            return Err(err(format!("empty frame range [{start_frame}, {end_frame})")));
        }
        let log_score = f[6].parse::<f64>().map_err(|e| err(format!("bad score {:?}: {e}", f[6])))?;
        rows.push(AlignmentRow {
            utt_id: f[0].to_string(),
            word_index: num(f[1])?,
            word: f[2].to_string(),
            cluster,
            start_frame,
            end_frame,
            log_score,
        });
    }
    Ok(rows)
}

pub fn read_alignments(path: &Path) -> Result<Vec<AlignmentRow>, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    parse_alignments(&text, &path.display().to_string())
}

/// Links per utterance and the word tokens seen for each.
pub fn rows_to_links(rows: &[AlignmentRow]) -> (BTreeMap<String, Links>, BTreeMap<String, Vec<String>>) {
    let mut links: BTreeMap<String, Links> = BTreeMap::new();
    let mut words: BTreeMap<String, BTreeMap<usize, String>> = BTreeMap::new();
    for r in rows {
        links.entry(r.utt_id.clone()).or_default().extend((r.start_frame..r.end_frame).map(|f| (r.word_index, f)));
        words.entry(r.utt_id.clone()).or_default().insert(r.word_index, r.word.clone());
    }
    let words = words
        .into_iter()
        .map(|(id, m)| {
            let n = m.keys().max().map_or(0, |k| k + 1);
            let tokens = (0..n).map(|i| m.get(&i).cloned().unwrap_or_default()).collect();
            (id, tokens)
        })
        .collect();
    (links, words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FeatureSequence;
    use proptest::prelude::*;

    fn range_links(word: usize, frames: std::ops::Range<usize>) -> Links {
        frames.map(|f| (word, f)).collect()
    }

    #[test]
    fn span_to_links() {
        let a = Alignment {
            utt_id: "u".into(),
            words: vec![
                WordAlignment { cluster: None, span: Span::new(1, 3), log_score: 0.0 },
                WordAlignment { cluster: None, span: Span::new(2, 4), log_score: 0.0 },
            ],
        };
        let links = alignment_to_links(&a);
        assert!(links.is_superset(&[(0, 0), (0, 1), (0, 2)].into()));
        assert_eq!(links.len(), 6);
    }

    #[test]
    fn identical_links_score_one() {
        let g = range_links(0, 0..10);
        assert_eq!(score(&g, &g), Prf { precision: 1.0, recall: 1.0, f_score: 1.0 });
    }

    #[test]
    fn half_overlap() {
        let s = score(&range_links(0, 5..15), &range_links(0, 0..10));
        assert_eq!((s.precision, s.recall, s.f_score), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_prediction_conventions() {
        let s = score(&Links::new(), &range_links(0, 0..3));
        assert_eq!((s.precision, s.recall, s.f_score), (0.0, 0.0, 0.0));
        let s = score(&Links::new(), &Links::new());
        assert_eq!((s.precision, s.recall, s.f_score), (1.0, 1.0, 1.0));
    }

    fn pair(m: usize, words: &[&str]) -> SentencePair {
        let fs = FeatureSequence::from_flat(vec![0.0; m], 1).unwrap();
        SentencePair::new("u", fs, words.iter().map(|w| w.to_string()).collect()).unwrap()
    }

    #[test]
    fn baseline_splits_proportionally() {
        let a = naive_baseline(&pair(100, &["ab", "cde"])).unwrap();
        let spans: Vec<Span> = a.words.iter().map(|w| w.span).collect();
        assert_eq!(spans, vec![Span::new(1, 40), Span::new(41, 100)]);
        let one = naive_baseline(&pair(17, &["solo"])).unwrap();
        assert_eq!(one.words[0].span, Span::new(1, 17));
        assert!(naive_baseline(&pair(1, &["a", "b"])).is_err());
    }

    #[test]
    fn alignment_tsv_round_trip() {
        let p = pair(10, &["il", "pane"]);
        let a = Alignment {
            utt_id: "u".into(),
            words: vec![
                WordAlignment { cluster: Some(ClusterId(3)), span: Span::new(1, 4), log_score: -1.25 },
                WordAlignment { cluster: None, span: Span::new(5, 10), log_score: f64::NEG_INFINITY },
            ],
        };
        let text = format_alignments(std::slice::from_ref(&a), &[p]);
        let rows = parse_alignments(&text, "mem").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].start_frame, rows[0].end_frame, rows[0].cluster), (0, 4, Some(ClusterId(3))));
        assert_eq!(rows[1].log_score, f64::NEG_INFINITY);
        let (links, words) = rows_to_links(&rows);
        assert_eq!(links["u"], alignment_to_links(&a));
        assert_eq!(words["u"], vec!["il".to_string(), "pane".to_string()]);
    }

    fn arb_links() -> impl Strategy<Value = Links> {
        prop::collection::btree_set((0usize..4, 0usize..30), 0..40)
    }

    proptest! {
        #[test]
        fn swapping_exchanges_precision_and_recall(p in arb_links(), g in arb_links()) {
            let a = score(&p, &g);
            let b = score(&g, &p);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert_eq!(a.f_score, b.f_score);
        }

        #[test]
        fn pooled_scores_match_recount(utts in prop::collection::vec((arb_links(), arb_links()), 1..5)) {
            let mut predicted = BTreeMap::new();
            let mut gold = BTreeMap::new();
            let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
            for (n, (p, g)) in utts.iter().enumerate() {
                let id = format!("u{n}");
                for l in p { if g.contains(l) { tp += 1; } }
                np += p.len();
                ng += g.len();
                predicted.insert(id.clone(), p.clone());
                gold.insert(id.clone(), GoldAlignment { utt_id: id, links: g.clone() });
            }
            let r = evaluate(&predicted, &gold, &BTreeMap::new());
            prop_assert_eq!(r.matched_links, tp);
            if np > 0 { prop_assert_eq!(r.precision, tp as f64 / np as f64); }
            if ng > 0 { prop_assert_eq!(r.recall, tp as f64 / ng as f64); }
        }

        #[test]
        fn baseline_tiles(chars in prop::collection::vec(1usize..12, 1..8), extra in 0usize..100) {
            let m = chars.len() + extra;
            let words: Vec<String> = chars.iter().map(|&c| "x".repeat(c)).collect();
            let fs = FeatureSequence::from_flat(vec![0.0; m], 1).unwrap();
            let p = SentencePair::new("u", fs, words).unwrap();
            let a = naive_baseline(&p).unwrap();
            let mut next = 1;
            for w in &a.words {
                prop_assert_eq!(w.span.a, next);
                prop_assert!(w.span.b >= w.span.a);
                next = w.span.b + 1;
            }
            prop_assert_eq!(next, m + 1);
        }
    }
}
