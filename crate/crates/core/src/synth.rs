//! Synthetic parallel corpora sampled from the alignment model's own story:
//! every word type has a prototype feature sequence made of piecewise-constant
//! "phones", utterances concatenate the prototypes of their words (optionally
//! swapping neighbors and inserting pauses), and Gaussian noise is added.
//!
//! Each utterance also gets an energy track (low inside pauses) and a
//! boundary sidecar listing word and phone edges, standing in for an
//! acoustic boundary detector.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, FeatureSequence, GoldAlignment, SentencePair};
use crate::distortion::DistortionParams;
use crate::model::{ClusterInventory, ModelParams, Variant};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub proto_min_len: usize,
    pub proto_max_len: usize,
    pub phone_min_len: usize,
    pub phone_max_len: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub reorder_prob: f64,
    /// Probability of a pause between two adjacent words.
    pub silence_prob: f64,
    pub silence_min_len: usize,
    pub silence_max_len: usize,
    /// Average prototype frames per character of the word's spelling.
    pub frames_per_char: f64,
    pub emit_boundaries: bool,
    /// Include phone onsets, not only word edges, in the emitted boundaries.
    pub phone_boundaries: bool,
    /// Draw the words of a sentence without replacement.
    pub distinct_words: bool,
    pub frame_shift_ms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 20,
            sentences: 50,
            min_words: 2,
            max_words: 5,
            proto_min_len: 12,
            proto_max_len: 30,
            phone_min_len: 1,
            phone_max_len: 2,
            dim: 39,
            noise_std: 0.0,
            reorder_prob: 0.0,
            silence_prob: 1.0,
            silence_min_len: 6,
            silence_max_len: 10,
            frames_per_char: 4.0,
            emit_boundaries: true,
            phone_boundaries: false,
            distinct_words: true,
            frame_shift_ms: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::Config(msg.into()));
        if self.vocab_size == 0 {
            return bad("vocabulary size must be positive");
        }
        if self.sentences == 0 {
            return bad("sentence count must be positive");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("sentence length range must satisfy 1 <= min <= max");
        }
        if self.proto_min_len == 0 || self.proto_min_len > self.proto_max_len {
            return bad("prototype length range must satisfy 1 <= min <= max");
        }
        if self.phone_min_len == 0 || self.phone_min_len > self.phone_max_len {
            return bad("phone length range must satisfy 1 <= min <= max");
        }
        if self.distinct_words && self.max_words > self.vocab_size {
            return bad("distinct words need max_words <= vocab_size");
        }
        if self.dim == 0 {
            return bad("feature dimension must be positive");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise standard deviation must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.reorder_prob) || !(0.0..=1.0).contains(&self.silence_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.silence_prob > 0.0 && (self.silence_min_len == 0 || self.silence_min_len > self.silence_max_len) {
            return bad("silence length range must satisfy 1 <= min <= max");
        }
        // Written this way so NaN is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.frames_per_char > 0.0) {
            return bad("frames per character must be positive");
        }
        Ok(())
    }
}

struct WordType {
    spelling: String,
    prototype: Vec<Vec<f64>>,
    /// 0-indexed offsets where a new phone starts, excluding 0.
    phone_starts: Vec<usize>,
}

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

fn spell(rng: &mut ChaCha8Rng, chars: usize) -> String {
    (0..chars)
        .map(|k| {
            let set = if k % 2 == 0 { CONSONANTS } else { VOWELS };
            set[rng.random_range(0..set.len())]
        })
        .collect()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>()
}

fn make_vocab(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<WordType> {
    let mut seen = HashSet::new();
    let mut vocab = Vec::with_capacity(config.vocab_size);
    while vocab.len() < config.vocab_size {
        let len = rng.random_range(config.proto_min_len..=config.proto_max_len);
        let mut prototype = Vec::with_capacity(len);
        let mut phone_starts = Vec::new();
        while prototype.len() < len {
            if !prototype.is_empty() {
                phone_starts.push(prototype.len());
            }
            let dur = rng.random_range(config.phone_min_len..=config.phone_max_len).min(len - prototype.len());
            let phone = gaussian_vec(rng, config.dim, 1.0);
            prototype.extend(std::iter::repeat_n(phone, dur));
        }
        let chars = ((len as f64 / config.frames_per_char).round() as usize).max(1);
        let mut spelling = spell(rng, chars);
        while !seen.insert(spelling.clone()) {
            spelling = spell(rng, chars + 1);
        }
        vocab.push(WordType { spelling, prototype, phone_starts });
    }
    vocab
}

/// Sample a corpus with gold links, plus the generating parameters (one
/// cluster per word type, prior equal to corpus frequency, true prototypes).
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<(Corpus, ModelParams), SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = make_vocab(config, &mut rng);
    let mut pairs = Vec::with_capacity(config.sentences);
    let mut gold = BTreeMap::new();
    let mut counts = vec![0usize; vocab.len()];
    let width = config.sentences.to_string().len().max(4);
    for n in 0..config.sentences {
        let utt_id = format!("utt{n:0width$}");
        let l = rng.random_range(config.min_words..=config.max_words);
        let words: Vec<usize> = if config.distinct_words {
            rand::seq::index::sample(&mut rng, vocab.len(), l).into_vec()
        } else {
            (0..l).map(|_| rng.random_range(0..vocab.len())).collect()
        };
        words.iter().for_each(|&w| counts[w] += 1);

        // Source order: local swaps of adjacent words.
        let mut order: Vec<usize> = (0..l).collect();
        let mut k = 0;
        while k + 1 < l {
            if rng.random::<f64>() < config.reorder_prob {
                order.swap(k, k + 1);
                k += 2;
            } else {
                k += 1;
            }
        }

        let mut frames: Vec<Vec<f64>> = Vec::new();
        let mut energy = Vec::new();
        let mut bounds = BTreeSet::new();
        let mut links = BTreeSet::new();
        for (pos, &word_index) in order.iter().enumerate() {
            if pos > 0 && rng.random::<f64>() < config.silence_prob {
                let dur = rng.random_range(config.silence_min_len..=config.silence_max_len);
                for _ in 0..dur {
                    frames.push(vec![0.0; config.dim]);
                    energy.push(0.01 * rng.random_range(0.5..1.5));
                }
            }
            let wt = &vocab[words[word_index]];
            let start = frames.len();
            for frame in &wt.prototype {
                frames.push(frame.clone());
                energy.push(rng.random_range(0.6..1.0));
            }
            let end = frames.len();
            links.extend((start..end).map(|f| (word_index, f)));
            bounds.extend([start + 1, end]);
            if config.phone_boundaries {
                bounds.extend(wt.phone_starts.iter().map(|p| start + p + 1));
            }
        }
        if config.noise_std > 0.0 {
            for frame in &mut frames {
                for v in frame.iter_mut() {
                    *v += config.noise_std * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                }
            }
        }
        let source = FeatureSequence::from_frames(&frames)?.with_frame_shift(config.frame_shift_ms);
        let tokens = words.iter().map(|&w| vocab[w].spelling.clone()).collect();
        let mut pair = SentencePair::new(utt_id.clone(), source, tokens)?;
        pair.energy_track = Some(energy);
        if config.emit_boundaries {
            pair.boundaries = Some(bounds.into_iter().collect());
        }
        pair.validate()?;
        gold.insert(utt_id.clone(), GoldAlignment { utt_id, links });
        pairs.push(pair);
    }
    let corpus = Corpus::new(pairs, Some(gold))?;

    let used: Vec<usize> = (0..vocab.len()).filter(|&w| counts[w] > 0).collect();
    let inventory = ClusterInventory::new(used.iter().map(|&w| vocab[w].spelling.clone()), 1)?;
    let mut params = ModelParams::uniform(inventory, DistortionParams::default(), Variant::Deficient);
    let total: usize = counts.iter().sum();
    for &w in &used {
        let f = params.inventory.clusters_of(&vocab[w].spelling).and_then(|mut c| c.next()).expect("in inventory");
        params.u[f.0] = counts[w] as f64 / total as f64;
        params.prototypes[f.0] =
            Some(FeatureSequence::from_frames(&vocab[w].prototype)?.with_frame_shift(config.frame_shift_ms));
    }
    Ok((corpus, params))
}
