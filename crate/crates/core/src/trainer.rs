//! Hard (Viterbi) EM over cluster assignments and spans.
//!
//! Initialization draws a random cluster per word occurrence and the
//! distortion-optimal candidate span, then runs an M-step. Each iteration is
//! an E-step (independent per-word argmax over live clusters × candidate
//! spans) followed by an M-step (relative-frequency prior, DBA prototypes).

use std::time::Instant;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Frames};
use crate::distortion::{DistortionParams, WordDistortion};
use crate::dtw::{dba_centroid, DbaConfig};
use crate::model::{
    word_widths, Alignment, ClusterId, ClusterInventory, ModelError, ModelParams, UtteranceScorer, Variant,
    WordAlignment,
};
use crate::segmentation::{candidates_for_pair, CandidateSpans, SegmentationConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("utterance {utt_id}, word {word}: no candidate span has non-zero distortion probability")]
    NoSpan { utt_id: String, word: usize },
    #[error("assignments cover {got} utterances, corpus has {expected}")]
    Incomplete { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dtw(#[from] crate::dtw::DtwError),
    #[error(transparent)]
    Distortion(#[from] crate::distortion::DistortionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Clusters per target word type.
    pub k: usize,
    pub dba: DbaConfig,
    pub variant: Variant,
    pub distortion: DistortionParams,
    pub segmentation: SegmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3,
            seed: 0,
            k: 2,
            dba: DbaConfig::default(),
            variant: Variant::Deficient,
            distortion: DistortionParams::default(),
            segmentation: SegmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(TrainError::Config("k must be at least 1".into()));
        }
        if self.dba.iterations == 0 {
            return Err(TrainError::Config("dba_iterations must be at least 1".into()));
        }
        self.distortion.validate()?;
        self.segmentation.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total_log_score: f64,
    /// Word occurrences whose (cluster, span) changed in this E-step.
    pub changed: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub assignments: Vec<Alignment>,
    pub iteration_log: Vec<IterationRecord>,
    pub candidates: Vec<CandidateSpans>,
    pub widths: Vec<Vec<usize>>,
}

/// Candidate spans and word widths for every utterance.
pub fn prepare(
    corpus: &Corpus,
    segmentation: &SegmentationConfig,
) -> Result<(Vec<CandidateSpans>, Vec<Vec<usize>>), TrainError> {
    let candidates: Vec<CandidateSpans> = corpus.pairs.par_iter().map(|p| candidates_for_pair(p, segmentation)).collect();
    let widths = corpus.pairs.iter().map(word_widths).collect::<Result<Vec<_>, _>>()?;
    Ok((candidates, widths))
}

pub fn initialize(corpus: &Corpus, config: &TrainConfig) -> Result<TrainState, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let inventory = ClusterInventory::from_corpus(corpus, config.k)?;
    let (candidates, widths) = prepare(corpus, &config.segmentation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut assignments = Vec::with_capacity(corpus.len());
    for ((pair, cands), mu) in corpus.pairs.iter().zip(&candidates).zip(&widths) {
        let (m, l) = (pair.num_frames(), pair.num_words());
        let mut words = Vec::with_capacity(l);
        for (i, word) in pair.target_words.iter().enumerate() {
            let first = inventory.clusters_of(word).and_then(|mut c| c.next()).expect("word in inventory");
            let cluster = ClusterId(first.0 + rng.random_range(0..config.k));
            let wd = WordDistortion::new(i + 1, l, m, mu[i], &config.distortion)?;
            let mut best = None;
            for &span in cands.spans() {
                let v = wd.log_span(span.a, span.b)?;
                if v > f64::NEG_INFINITY && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((span, v));
                }
            }
            let (span, v) = best.ok_or_else(|| TrainError::NoSpan { utt_id: pair.utt_id.clone(), word: i })?;
            words.push(WordAlignment { cluster: Some(cluster), span, log_score: v });
        }
        assignments.push(Alignment { utt_id: pair.utt_id.clone(), words });
    }
    let blank = ModelParams::uniform(inventory, config.distortion, config.variant);
    let params = m_step(corpus, &assignments, config, &blank)?;
    Ok(TrainState { params, assignments, iteration_log: Vec::new(), candidates, widths })
}

/// Per-word argmax under fixed parameters. A word with no live cluster keeps
/// its previous assignment.
pub fn e_step(
    corpus: &Corpus,
    params: &ModelParams,
    candidates: &[CandidateSpans],
    widths: &[Vec<usize>],
    previous: &[Alignment],
) -> Result<Vec<Alignment>, TrainError> {
    if previous.len() != corpus.len() {
        return Err(TrainError::Incomplete { got: previous.len(), expected: corpus.len() });
    }
    corpus
        .pairs
        .par_iter()
        .zip(candidates)
        .zip(widths)
        .zip(previous)
        .map(|(((pair, cands), mu), prev)| {
            let scorer = UtteranceScorer::new(pair, params, cands, mu)?;
            let words = (0..pair.num_words())
                .map(|i| match scorer.best(i) {
                    Some((f, span, v)) => WordAlignment { cluster: Some(f), span, log_score: v },
                    None => {
                        let old = &prev.words[i];
                        let v = old.cluster.map_or(f64::NEG_INFINITY, |f| scorer.score(i, f, old.span));
                        WordAlignment { log_score: v, ..old.clone() }
                    }
                })
                .collect();
            Ok(Alignment { utt_id: pair.utt_id.clone(), words })
        })
        .collect()
}

/// Relative-frequency cluster prior and DBA prototypes. Clusters with no
/// assigned word get zero prior and keep their previous prototype.
pub fn m_step(
    corpus: &Corpus,
    assignments: &[Alignment],
    config: &TrainConfig,
    previous: &ModelParams,
) -> Result<ModelParams, TrainError> {
    if assignments.len() != corpus.len() {
        return Err(TrainError::Incomplete { got: assignments.len(), expected: corpus.len() });
    }
    let n = previous.inventory.num_clusters();
    let mut members: Vec<Vec<Frames<'_>>> = vec![Vec::new(); n];
    for (pair, alignment) in corpus.pairs.iter().zip(assignments) {
        for w in &alignment.words {
            if let Some(f) = w.cluster {
                members[f.0].push(pair.source.span(w.span.a, w.span.b));
            }
        }
    }
    let total: usize = members.iter().map(Vec::len).sum();
    let u: Vec<f64> = members.iter().map(|m| m.len() as f64 / total as f64).collect();
    let prototypes = members
        .par_iter()
        .enumerate()
        .map(|(f, segs)| {
            if segs.is_empty() {
                Ok(previous.prototypes[f].clone())
            } else {
                dba_centroid(segs, &config.dba).map(Some)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    debug!("m-step: {} live clusters of {n}", members.iter().filter(|m| !m.is_empty()).count());
    Ok(ModelParams {
        inventory: previous.inventory.clone(),
        u,
        prototypes,
        distortion: config.distortion,
        variant: config.variant,
    })
}

fn total_score(assignments: &[Alignment]) -> f64 {
    assignments.iter().flat_map(|a| a.words.iter().map(|w| w.log_score)).sum()
}

fn count_changes(old: &[Alignment], new: &[Alignment]) -> usize {
    old.iter()
        .zip(new)
        .flat_map(|(a, b)| a.words.iter().zip(&b.words))
        .filter(|(x, y)| x.cluster != y.cluster || x.span != y.span)
        .count()
}

pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainState, TrainError> {
    train_with(corpus, config, |_| Ok(()))
}

/// [`train`], calling `on_iteration` after every completed iteration.
pub fn train_with<F>(corpus: &Corpus, config: &TrainConfig, on_iteration: F) -> Result<TrainState, TrainError>
where
    F: FnMut(&TrainState) -> Result<(), TrainError>,
{
    let state = initialize(corpus, config)?;
    run_iterations(corpus, config, state, on_iteration)
}

/// Like [`train_with`], but the first E-step uses `params` (typically read
/// from a checkpoint) instead of the initialization M-step. The random
/// initial assignments still serve as the fallback for words without a live
/// cluster.
pub fn resume_with<F>(
    corpus: &Corpus,
    config: &TrainConfig,
    params: ModelParams,
    on_iteration: F,
) -> Result<TrainState, TrainError>
where
    F: FnMut(&TrainState) -> Result<(), TrainError>,
{
    let mut state = initialize(corpus, config)?;
    if params.inventory != state.params.inventory {
        return Err(TrainError::Config("checkpoint cluster inventory does not match the corpus and k".into()));
    }
    params.validate()?;
    state.params = ModelParams { distortion: config.distortion, variant: config.variant, ..params };
    run_iterations(corpus, config, state, on_iteration)
}

fn run_iterations<F>(
    corpus: &Corpus,
    config: &TrainConfig,
    mut state: TrainState,
    mut on_iteration: F,
) -> Result<TrainState, TrainError>
where
    F: FnMut(&TrainState) -> Result<(), TrainError>,
{
    for iteration in 1..=config.iterations {
        let started = Instant::now();
        let assignments = e_step(corpus, &state.params, &state.candidates, &state.widths, &state.assignments)?;
        let total_log_score = total_score(&assignments);
        let changed = count_changes(&state.assignments, &assignments);
        state.params = m_step(corpus, &assignments, config, &state.params)?;
        state.assignments = assignments;
        let seconds = started.elapsed().as_secs_f64();
        info!("iteration {iteration}: log score {total_log_score:.4}, {changed} changed, {seconds:.2}s");
        state.iteration_log.push(IterationRecord { iteration, total_log_score, changed, seconds });
        on_iteration(&state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FeatureSequence, SentencePair};
    use crate::segmentation::Span;

    fn tiny_corpus() -> Corpus {
        let mk = |id: &str, vals: Vec<f64>, words: &[&str]| {
            let fs = FeatureSequence::from_flat(vals, 1).unwrap();
            SentencePair::new(id, fs, words.iter().map(|w| w.to_string()).collect()).unwrap()
        };
        Corpus::new(
            vec![
                mk("a", (0..20).map(|i| (i / 5) as f64).collect(), &["x", "y"]),
                mk("b", (0..20).map(|i| 3.0 - (i / 5) as f64).collect(), &["y", "x", "x"]),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = TrainConfig { iterations: 0, ..Default::default() };
        assert!(matches!(train(&tiny_corpus(), &cfg), Err(TrainError::Config(_))));
    }

    #[test]
    fn single_cluster_ignores_seed() {
        let a = initialize(&tiny_corpus(), &TrainConfig { k: 1, seed: 1, ..Default::default() }).unwrap();
        let b = initialize(&tiny_corpus(), &TrainConfig { k: 1, seed: 99, ..Default::default() }).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn initial_span_is_distortion_argmax() {
        let fs = FeatureSequence::from_flat(vec![0.0; 100], 1).unwrap();
        let words: Vec<String> = ["abcd", "efgh", "ijkl", "mnop", "qrst"].iter().map(|w| w.to_string()).collect();
        let pair = SentencePair::new("u", fs, words).unwrap();
        let corpus = Corpus::new(vec![pair], None).unwrap();
        let seg = SegmentationConfig { grid_stride: 1, span_min_len: 1, span_max_len: 100, ..Default::default() };
        let state = initialize(&corpus, &TrainConfig { segmentation: seg, ..Default::default() }).unwrap();
        assert_eq!(state.widths[0][0], 20);
        assert_eq!(state.assignments[0].words[0].span, Span::new(16, 36));
    }

    #[test]
    fn m_step_prior_and_singletons() {
        let corpus = tiny_corpus();
        let state = initialize(&corpus, &TrainConfig { k: 2, ..Default::default() }).unwrap();
        let mut assignments = state.assignments.clone();
        // x -> clusters 0/1, y -> 2/3. Put every x in cluster 0, the lone
        // word y of utterance "a" in 2 and the one of "b" in 3.
        for a in &mut assignments {
            for (w, word) in a.words.iter_mut().zip(&corpus.get(&a.utt_id).unwrap().target_words) {
                w.cluster = Some(ClusterId(if word == "x" { 0 } else if a.utt_id == "a" { 2 } else { 3 }));
            }
        }
        let params = m_step(&corpus, &assignments, &TrainConfig::default(), &state.params).unwrap();
        assert_eq!(params.u, vec![0.6, 0.0, 0.2, 0.2]);
        assert!(!params.is_live(ClusterId(1)));
        let y_in_a = &assignments[0].words[1];
        let seg = corpus.pairs[0].source.span(y_in_a.span.a, y_in_a.span.b).to_owned();
        assert_eq!(params.prototype(ClusterId(2)).unwrap().as_flat(), seg.as_flat());
        // Dead clusters never win the E-step.
        let next = e_step(&corpus, &params, &state.candidates, &state.widths, &assignments).unwrap();
        assert!(next.iter().flat_map(|a| &a.words).all(|w| w.cluster != Some(ClusterId(1))));
    }

    #[test]
    fn prior_sums_to_one_after_training() {
        let state = train(&tiny_corpus(), &TrainConfig::default()).unwrap();
        assert!((state.params.u.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(state.iteration_log.len(), 3);
        for f in state.params.live_clusters() {
            assert!(!state.params.prototype(f).unwrap().is_empty());
        }
    }
}
