//! The joint alignment model: cluster inventory, cluster prior, DTW-based
//! span likelihood (deficient and proper forms), distortion, and scoring.
//!
//! Per target word `i` with cluster `f` and span `(a, b)` the deficient score is
//!
//! ```text
//! log u(f) + log s(a, b | f) + log δa(a) + log δb(b)
//! s(a, b | f) = exp(-DTW(φ^f, φ[a..=b])²) / Σ_{candidates} exp(-DTW²)
//! ```
//!
//! and the proper score replaces `u(f) s(a, b | f)` with `s(f | a, b)`,
//! normalized over live clusters. The translation table is the fixed 0/1
//! ownership relation, so a cluster owned by another word scores `-inf`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, FeatureSequence, SentencePair};
use crate::distortion::{allocate_mu, DistortionError, DistortionParams, WordDistortion};
use crate::dtw::{dtw_cost, prefix_costs, DtwError};
use crate::segmentation::{CandidateSpans, Span};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cluster {0} has no prototype")]
    MissingPrototype(ClusterId),
    #[error("no live clusters to normalize over")]
    NoLiveClusters,
    #[error("cluster {0} is not in the inventory")]
    UnknownCluster(ClusterId),
    #[error("invalid span ({a}, {b}) for an utterance of {m} frames")]
    InvalidSpan { a: usize, b: usize, m: usize },
    #[error("word position {i} outside 1..={l}")]
    BadPosition { i: usize, l: usize },
    #[error("alignment has {got} words, sentence has {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("utterance {utt_id} is too short: {m} frames for {l} words")]
    TooShort { utt_id: String, m: usize, l: usize },
    #[error("invalid model parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Distortion(#[from] DistortionError),
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId(pub usize);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `k` clusters per target word type. Word types are kept sorted, and the
/// clusters of the `t`-th type are `t*k .. t*k + k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterInventory {
    words: Vec<String>,
    k: usize,
}

impl ClusterInventory {
    pub fn new<I, S>(words: I, k: usize) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if k == 0 {
            return Err(ModelError::Invalid("k must be at least 1".into()));
        }
        let words: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        Ok(ClusterInventory { words: words.into_iter().collect(), k })
    }

    pub fn from_corpus(corpus: &Corpus, k: usize) -> Result<Self, ModelError> {
        Self::new(corpus.pairs.iter().flat_map(|p| p.target_words.iter().cloned()), k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_clusters(&self) -> usize {
        self.words.len() * self.k
    }

    pub fn word_types(&self) -> &[String] {
        &self.words
    }

    pub fn clusters_of(&self, word: &str) -> Option<impl Iterator<Item = ClusterId>> {
        self.range_of(word).map(|r| r.map(ClusterId))
    }

    fn range_of(&self, word: &str) -> Option<Range<usize>> {
        let t = self.words.binary_search_by(|w| w.as_str().cmp(word)).ok()?;
        Some(t * self.k..(t + 1) * self.k)
    }

    pub fn owner(&self, f: ClusterId) -> Option<&str> {
        self.words.get(f.0 / self.k).map(String::as_str)
    }

    pub fn owns(&self, word: &str, f: ClusterId) -> bool {
        self.range_of(word).is_some_and(|r| r.contains(&f.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Deficient,
    Proper,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Deficient => "deficient",
            Variant::Proper => "proper",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deficient" => Ok(Variant::Deficient),
            "proper" => Ok(Variant::Proper),
            other => Err(format!("unknown variant {other:?} (expected deficient or proper)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub inventory: ClusterInventory,
    /// Cluster prior, indexed by cluster id.
    pub u: Vec<f64>,
    pub prototypes: Vec<Option<FeatureSequence>>,
    pub distortion: DistortionParams,
    pub variant: Variant,
}

impl ModelParams {
    /// Uniform prior, no prototypes.
    pub fn uniform(inventory: ClusterInventory, distortion: DistortionParams, variant: Variant) -> Self {
        let n = inventory.num_clusters();
        ModelParams {
            inventory,
            u: vec![1.0 / n as f64; n],
            prototypes: vec![None; n],
            distortion,
            variant,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.inventory.num_clusters();
        if self.u.len() != n || self.prototypes.len() != n {
            return Err(ModelError::Invalid(format!(
                "{n} clusters but {} priors and {} prototype slots",
                self.u.len(),
                self.prototypes.len()
            )));
        }
        if self.u.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ModelError::Invalid("cluster prior outside [0, 1]".into()));
        }
        let total: f64 = self.u.iter().sum();
        if n > 0 && (total - 1.0).abs() > 1e-9 {
            return Err(ModelError::Invalid(format!("cluster prior sums to {total}")));
        }
        self.distortion.validate()?;
        Ok(())
    }

    pub fn prototype(&self, f: ClusterId) -> Option<&FeatureSequence> {
        self.prototypes.get(f.0).and_then(Option::as_ref)
    }

    /// Live clusters have a prototype and non-zero prior.
    pub fn is_live(&self, f: ClusterId) -> bool {
        self.prototype(f).is_some() && self.u.get(f.0).is_some_and(|&p| p > 0.0)
    }

    pub fn live_clusters(&self) -> Vec<ClusterId> {
        (0..self.inventory.num_clusters()).map(ClusterId).filter(|&f| self.is_live(f)).collect()
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelParams { variant, ..self.clone() }
    }
}

const CHECKPOINT_FORMAT: &str = "spanalign-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: ModelParams,
}

impl ModelParams {
    pub fn to_checkpoint_string(&self) -> String {
        let ck = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, params: self.clone() };
        serde_json::to_string(&ck).expect("model params serialize")
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self, ModelError> {
        let err = |msg: String| ModelError::Checkpoint { path: "<string>".into(), msg };
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        ck.params.validate()?;
        Ok(ck.params)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_checkpoint_str(&text).map_err(|e| match e {
            ModelError::Checkpoint { msg, .. } => ModelError::Checkpoint { path: path.display().to_string(), msg },
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub cluster: Option<ClusterId>,
    pub span: Span,
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub utt_id: String,
    pub words: Vec<WordAlignment>,
}

/// Per-word widths for the distortion model: the character-proportional
/// allocation, capped at `m - 1` so that single-word utterances stay defined.
pub fn word_widths(pair: &SentencePair) -> Result<Vec<usize>, ModelError> {
    let (m, l) = (pair.num_frames(), pair.num_words());
    if m < 2 || m < l {
        return Err(ModelError::TooShort { utt_id: pair.utt_id.clone(), m, l });
    }
    Ok(allocate_mu(&pair.char_lengths, m)?.0.into_iter().map(|mu| mu.min(m - 1)).collect())
}

fn check_span(span: Span, m: usize) -> Result<(), ModelError> {
    if span.a == 0 || span.a > span.b || span.b > m {
        return Err(ModelError::InvalidSpan { a: span.a, b: span.b, m });
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let peak = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + values.map(|v| (v - peak).exp()).sum::<f64>().ln()
}

fn dtw_sq(proto: &FeatureSequence, pair: &SentencePair, span: Span) -> Result<f64, ModelError> {
    let d = dtw_cost(proto.view(), pair.source.span(span.a, span.b))?;
    Ok(d * d)
}

/// `log s(a, b | f)`, normalized over the candidate span set.
pub fn log_s_deficient(
    f: ClusterId,
    span: Span,
    pair: &SentencePair,
    candidates: &CandidateSpans,
    params: &ModelParams,
) -> Result<f64, ModelError> {
    check_span(span, pair.num_frames())?;
    let proto = params.prototype(f).ok_or(ModelError::MissingPrototype(f))?;
    if !candidates.contains(span) {
        return Ok(f64::NEG_INFINITY);
    }
    let all: Vec<f64> = candidates
        .spans()
        .iter()
        .map(|&s| dtw_sq(proto, pair, s).map(|v| -v))
        .collect::<Result<_, _>>()?;
    Ok(-dtw_sq(proto, pair, span)? - log_sum_exp(all.iter().copied()))
}

/// `log s(f | a, b)`, normalized over every live cluster.
pub fn log_s_proper(f: ClusterId, span: Span, pair: &SentencePair, params: &ModelParams) -> Result<f64, ModelError> {
    check_span(span, pair.num_frames())?;
    let live = params.live_clusters();
    if live.is_empty() {
        return Err(ModelError::NoLiveClusters);
    }
    if !params.is_live(f) {
        return if params.prototype(f).is_none() {
            Err(ModelError::MissingPrototype(f))
        } else {
            Ok(f64::NEG_INFINITY)
        };
    }
    let scores: Vec<f64> = live
        .iter()
        .map(|&g| dtw_sq(params.prototype(g).expect("live"), pair, span).map(|v| -v))
        .collect::<Result<_, _>>()?;
    let own = -dtw_sq(params.prototype(f).expect("live"), pair, span)?;
    Ok(own - log_sum_exp(scores.iter().copied()))
}

/// Score of aligning word `i` (1-indexed) to cluster `f` and `span`.
pub fn word_log_score(
    i: usize,
    f: ClusterId,
    span: Span,
    pair: &SentencePair,
    params: &ModelParams,
    candidates: &CandidateSpans,
    mu: &[usize],
) -> Result<f64, ModelError> {
    let (m, l) = (pair.num_frames(), pair.num_words());
    if i == 0 || i > l {
        return Err(ModelError::BadPosition { i, l });
    }
    check_span(span, m)?;
    if f.0 >= params.inventory.num_clusters() {
        return Err(ModelError::UnknownCluster(f));
    }
    if !params.inventory.owns(&pair.target_words[i - 1], f) {
        return Ok(f64::NEG_INFINITY);
    }
    let delta = WordDistortion::new(i, l, m, mu[i - 1], &params.distortion)?.log_span(span.a, span.b)?;
    let cluster_part = match params.variant {
        Variant::Deficient => {
            if params.u[f.0] == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            params.u[f.0].ln() + log_s_deficient(f, span, pair, candidates, params)?
        }
        Variant::Proper => {
            if !candidates.contains(span) {
                return Ok(f64::NEG_INFINITY);
            }
            log_s_proper(f, span, pair, params)?
        }
    };
    Ok(cluster_part + delta)
}

/// Sum of word scores; the uniform sentence-length prior is a constant and
/// is left out.
pub fn sentence_log_score(
    alignment: &Alignment,
    pair: &SentencePair,
    params: &ModelParams,
    candidates: &CandidateSpans,
    mu: &[usize],
) -> Result<f64, ModelError> {
    if alignment.words.len() != pair.num_words() {
        return Err(ModelError::LengthMismatch { got: alignment.words.len(), expected: pair.num_words() });
    }
    let mut total = 0.0;
    for (i, w) in alignment.words.iter().enumerate() {
        let Some(f) = w.cluster else {
            return Ok(f64::NEG_INFINITY);
        };
        total += word_log_score(i + 1, f, w.span, pair, params, candidates, mu)?;
    }
    Ok(total)
}

/// Precomputed scores for one utterance: squared DTW distances between every
/// relevant live prototype and every candidate span, the normalizers of both
/// model variants, and per-word distortion tables.
pub struct UtteranceScorer<'a> {
    pair: &'a SentencePair,
    params: &'a ModelParams,
    candidates: &'a CandidateSpans,
    words: Vec<WordDistortion>,
    /// Cluster of each table row, ascending.
    rows: Vec<ClusterId>,
    /// `rows × spans`, holding `-DTW²`.
    neg_d2: Vec<f64>,
    row_norm: Vec<f64>,
    span_norm: Vec<f64>,
}

impl<'a> UtteranceScorer<'a> {
    pub fn new(
        pair: &'a SentencePair,
        params: &'a ModelParams,
        candidates: &'a CandidateSpans,
        mu: &[usize],
    ) -> Result<Self, ModelError> {
        let (m, l) = (pair.num_frames(), pair.num_words());
        let words = (1..=l)
            .map(|i| WordDistortion::new(i, l, m, mu[i - 1], &params.distortion))
            .collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<ClusterId> = match params.variant {
            Variant::Deficient => {
                let mut set = BTreeSet::new();
                for w in &pair.target_words {
                    if let Some(cs) = params.inventory.clusters_of(w) {
                        set.extend(cs.filter(|&f| params.is_live(f)));
                    }
                }
                set.into_iter().collect()
            }
            Variant::Proper => params.live_clusters(),
        };
        let spans = candidates.spans();
        let neg_d2: Vec<f64> = rows
            .par_iter()
            .map(|&f| neg_sq_costs(params.prototype(f).expect("live"), pair, spans))
            .collect::<Result<Vec<_>, _>>()?
            .concat();
        let n = spans.len();
        let row_norm = (0..rows.len()).map(|r| log_sum_exp(neg_d2[r * n..(r + 1) * n].iter().copied())).collect();
        let span_norm = match params.variant {
            Variant::Proper => (0..n).map(|s| log_sum_exp((0..rows.len()).map(|r| neg_d2[r * n + s]))).collect(),
            Variant::Deficient => Vec::new(),
        };
        Ok(UtteranceScorer { pair, params, candidates, words, rows, neg_d2, row_norm, span_norm })
    }

    fn row(&self, f: ClusterId) -> Option<usize> {
        self.rows.binary_search(&f).ok()
    }

    /// Score of word `i` (0-indexed) with cluster `f` and candidate `span_idx`.
    pub fn score_index(&self, i: usize, f: ClusterId, span_idx: usize) -> f64 {
        if !self.params.inventory.owns(&self.pair.target_words[i], f) {
            return f64::NEG_INFINITY;
        }
        let Some(r) = self.row(f) else {
            return f64::NEG_INFINITY;
        };
        let n = self.candidates.len();
        let span = self.candidates.spans()[span_idx];
        let delta = self.words[i].log_a()[span.a] + self.words[i].log_b()[span.b];
        let v = self.neg_d2[r * n + span_idx];
        let cluster_part = match self.params.variant {
            Variant::Deficient => self.params.u[f.0].ln() + v - self.row_norm[r],
            Variant::Proper => v - self.span_norm[span_idx],
        };
        cluster_part + delta
    }

    /// Score of word `i` (0-indexed); `-inf` for spans outside the candidates.
    pub fn score(&self, i: usize, f: ClusterId, span: Span) -> f64 {
        self.candidates.index_of(span).map_or(f64::NEG_INFINITY, |s| self.score_index(i, f, s))
    }

    /// Best `(cluster, span, score)` for word `i` (0-indexed). Ties go to the
    /// smaller start, then the smaller end, then the smaller cluster id.
    pub fn best(&self, i: usize) -> Option<(ClusterId, Span, f64)> {
        let word = &self.pair.target_words[i];
        let clusters: Vec<ClusterId> = self
            .params
            .inventory
            .clusters_of(word)
            .map(|cs| cs.filter(|f| self.row(*f).is_some()).collect())
            .unwrap_or_default();
        let mut best: Option<(ClusterId, Span, f64)> = None;
        for (s, &span) in self.candidates.spans().iter().enumerate() {
            for &f in &clusters {
                let v = self.score_index(i, f, s);
                if v > f64::NEG_INFINITY && best.is_none_or(|(_, _, bv)| v > bv) {
                    best = Some((f, span, v));
                }
            }
        }
        best
    }
}

/// `-DTW(proto, span)²` for every span, sharing one prefix table per start.
fn neg_sq_costs(proto: &FeatureSequence, pair: &SentencePair, spans: &[Span]) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(spans.len());
    let mut k = 0;
    while k < spans.len() {
        let a = spans[k].a;
        let group_end = spans[k..].iter().position(|s| s.a != a).map_or(spans.len(), |p| k + p);
        let last_b = spans[group_end - 1].b;
        let costs = prefix_costs(proto.view(), pair.source.span(a, last_b))?;
        out.extend(spans[k..group_end].iter().map(|s| {
            let c = costs[s.b - a];
            -(c * c)
        }));
        k = group_end;
    }
    Ok(out)
}
