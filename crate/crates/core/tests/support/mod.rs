//! Independent reference implementations used as test oracles. Nothing here
//! calls the library's DP routines; everything is enumerated directly.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanalign::corpus::{Corpus, FeatureSequence, SentencePair};
use spanalign::distortion::{allocate_mu, DistortionParams};
use spanalign::model::{ClusterId, ClusterInventory, ModelParams, Variant};
use spanalign::segmentation::{CandidateSpans, Span};

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum path cost over every monotone warping path, by explicit
/// enumeration of all paths from (0, 0) to the corner.
pub fn brute_dtw_raw(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    fn walk(x: &[Vec<f64>], y: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + euclid(&x[i], &y[j]);
        if i + 1 == x.len() && j + 1 == y.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            walk(x, y, i + 1, j + 1, acc, best);
        }
        if i + 1 < x.len() {
            walk(x, y, i + 1, j, acc, best);
        }
        if j + 1 < y.len() {
            walk(x, y, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(x, y, 0, 0, 0.0, &mut best);
    best
}

pub fn brute_dtw(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    brute_dtw_raw(x, y) / (x.len() + y.len()) as f64
}

pub fn frames_of(fs: &FeatureSequence) -> Vec<Vec<f64>> {
    (0..fs.len()).map(|i| fs.frame(i).to_vec()).collect()
}

pub fn random_frames(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

/// The j in 1..=m minimizing |i/l − j/(m−μ)| (shift 0) or |i/l − (j−μ)/(m−μ)|
/// (shift μ), compared as exact integers; ties go to the smaller j.
pub fn analytic_argmax(i: usize, l: usize, m: usize, mu: usize, shift: usize) -> usize {
    let target = (i * (m - mu)) as i128;
    (1..=m)
        .min_by_key(|&j| (target - (j as i128 - shift as i128) * l as i128).abs())
        .expect("m >= 1")
}

/// δ over 0..=m computed straight from the definition.
pub fn naive_delta(i: usize, l: usize, m: usize, mu: usize, p: &DistortionParams, shift: usize) -> Vec<f64> {
    let h = |j: usize| -((i as f64 / l as f64) - (j as f64 - shift as f64) / (m - mu) as f64).abs();
    let w: Vec<f64> = (1..=m).map(|j| (p.lambda * h(j)).exp()).collect();
    let z: f64 = w.iter().sum();
    std::iter::once(p.p0).chain(w.iter().map(|v| (1.0 - p.p0) * v / z)).collect()
}

/// A small random problem: one utterance, a vocabulary of at most 3 word
/// types with 2 clusters each, random prototypes, and a random candidate set.
pub struct TinyInstance {
    pub corpus: Corpus,
    pub params: ModelParams,
    pub candidates: CandidateSpans,
    pub mu: Vec<usize>,
}

pub fn tiny_instance(seed: u64, variant: Variant) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = ["ab", "cde", "f"];
    let v = rng.random_range(1..=vocab.len());
    let l = rng.random_range(1..=3usize);
    let m = rng.random_range((2 * l).max(4)..=12);
    let dim = 2;
    let words: Vec<String> = (0..l).map(|_| vocab[rng.random_range(0..v)].to_string()).collect();
    let source = FeatureSequence::from_frames(&random_frames(&mut rng, m, dim)).unwrap();
    let pair = SentencePair::new("tiny", source, words.clone()).unwrap();
    let mu = allocate_mu(&pair.char_lengths, m).unwrap().0.iter().map(|&w| w.min(m - 1)).collect();
    let corpus = Corpus::new(vec![pair], None).unwrap();

    let inventory = ClusterInventory::new(words.iter().cloned(), 2).unwrap();
    let n = inventory.num_clusters();
    let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    // Occasionally kill a cluster.
    if n > 1 && rng.random_bool(0.3) {
        u[rng.random_range(0..n)] = 0.0;
    }
    let total: f64 = u.iter().sum();
    u.iter_mut().for_each(|x| *x /= total);
    let prototypes = (0..n)
        .map(|_| {
            let len = rng.random_range(1..=4);
            Some(FeatureSequence::from_frames(&random_frames(&mut rng, len, dim)).unwrap())
        })
        .collect();
    let distortion = DistortionParams { p0: 0.0, lambda: rng.random_range(0.1..3.0) };
    let params = ModelParams { inventory, u, prototypes, distortion, variant };

    let mut spans = Vec::new();
    let count = rng.random_range(1..=4);
    while spans.len() < count {
        let a = rng.random_range(1..=m);
        let b = rng.random_range(a..=m);
        let s = Span::new(a, b);
        if !spans.contains(&s) {
            spans.push(s);
        }
    }
    TinyInstance { corpus, params, candidates: CandidateSpans::new(spans), mu }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let peak = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + v.iter().map(|x| (x - peak).exp()).sum::<f64>().ln()
}

/// Word score for word `i` (0-indexed) recomputed from scratch with the
/// brute-force DTW and the naive distortion.
pub fn oracle_score(t: &TinyInstance, i: usize, f: ClusterId, span: Span) -> f64 {
    let pair = &t.corpus.pairs[0];
    let p = &t.params;
    let (m, l) = (pair.num_frames(), pair.num_words());
    let seg = |s: Span| -> Vec<Vec<f64>> { (s.a - 1..s.b).map(|j| pair.source.frame(j).to_vec()).collect() };
    let d2 = |g: ClusterId, s: Span| {
        let d = brute_dtw(&frames_of(p.prototype(g).unwrap()), &seg(s));
        -d * d
    };
    let da = naive_delta(i + 1, l, m, t.mu[i], &p.distortion, 0);
    let db = naive_delta(i + 1, l, m, t.mu[i], &p.distortion, t.mu[i]);
    let delta = da[span.a].ln() + db[span.b].ln();
    match p.variant {
        Variant::Deficient => {
            let z: Vec<f64> = t.candidates.spans().iter().map(|&s| d2(f, s)).collect();
            p.u[f.0].ln() + d2(f, span) - log_sum_exp(&z) + delta
        }
        Variant::Proper => {
            let live: Vec<f64> = (0..p.inventory.num_clusters())
                .map(ClusterId)
                .filter(|&g| p.u[g.0] > 0.0)
                .map(|g| d2(g, span))
                .collect();
            d2(f, span) - log_sum_exp(&live) + delta
        }
    }
}

/// Exhaustive argmax over (cluster of word i with non-zero prior, candidate
/// span), ties to smaller a, then smaller b, then smaller cluster id.
pub fn oracle_best(t: &TinyInstance, i: usize) -> Option<(ClusterId, Span, f64)> {
    let word = &t.corpus.pairs[0].target_words[i];
    let mut options = Vec::new();
    for f in t.params.inventory.clusters_of(word).unwrap() {
        if t.params.u[f.0] <= 0.0 {
            continue;
        }
        for &s in t.candidates.spans() {
            options.push((f, s, oracle_score(t, i, f, s)));
        }
    }
    options.sort_by_key(|o| (o.1.a, o.1.b, o.0));
    let mut best: Option<(ClusterId, Span, f64)> = None;
    for o in options {
        if best.is_none_or(|b| o.2 > b.2) {
            best = Some(o);
        }
    }
    best
}

/// Second-best score gap, to know when floating-point noise could flip the
/// argmax.
pub fn oracle_margin(t: &TinyInstance, i: usize) -> f64 {
    let word = &t.corpus.pairs[0].target_words[i];
    let mut scores: Vec<f64> = Vec::new();
    for f in t.params.inventory.clusters_of(word).unwrap() {
        if t.params.u[f.0] > 0.0 {
            scores.extend(t.candidates.spans().iter().map(|&s| oracle_score(t, i, f, s)));
        }
    }
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if scores.len() < 2 {
        f64::INFINITY
    } else {
        scores[0] - scores[1]
    }
}
