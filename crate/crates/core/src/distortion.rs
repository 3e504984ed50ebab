//! Span-endpoint distortion: two diagonal-favoring categorical distributions
//! over start and end frames, and the per-word width allocation `μ`.
//!
//! Frame positions `j` are 1-indexed; position 0 is the null outcome.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistortionError {
    #[error("cannot give {words} words at least one frame each out of {frames}")]
    TooFewFrames { words: usize, frames: usize },
    #[error("word width {mu} must lie strictly between 0 and the frame count {frames}")]
    BadWidth { mu: usize, frames: usize },
    #[error("word position {i} outside 1..={l}")]
    BadPosition { i: usize, l: usize },
    #[error("span start {a} exceeds end {b}")]
    ReversedSpan { a: usize, b: usize },
    #[error("frame {j} outside 0..={m}")]
    BadFrame { j: usize, m: usize },
    #[error("invalid distortion parameters: {0}")]
    BadParams(String),
    #[error("empty character length list")]
    NoWords,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    /// Probability of the null endpoint.
    pub p0: f64,
    /// Precision; larger values concentrate mass on the diagonal.
    pub lambda: f64,
}

impl Default for DistortionParams {
    fn default() -> Self {
        DistortionParams { p0: 0.0, lambda: 0.5 }
    }
}

impl DistortionParams {
    pub fn validate(&self) -> Result<(), DistortionError> {
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(DistortionError::BadParams(format!("p0 = {} not in [0, 1]", self.p0)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DistortionError::BadParams(format!("lambda = {} must be finite and >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Frames per word, summing to the utterance length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuAllocation(pub Vec<usize>);

/// Split `m` frames across words proportionally to their character counts,
/// using largest-remainder rounding (ties to the lower index) and at least one
/// frame per word.
pub fn allocate_mu(char_lengths: &[usize], m: usize) -> Result<MuAllocation, DistortionError> {
    let l = char_lengths.len();
    if l == 0 {
        return Err(DistortionError::NoWords);
    }
    if m < l {
        return Err(DistortionError::TooFewFrames { words: l, frames: m });
    }
    let weights: Vec<u128> = char_lengths.iter().map(|&c| c.max(1) as u128).collect();
    let total: u128 = weights.iter().sum();
    let mut mu: Vec<usize> = weights.iter().map(|&w| (m as u128 * w / total) as usize).collect();
    let remainders: Vec<u128> = weights.iter().map(|&w| m as u128 * w % total).collect();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&x, &y| remainders[y].cmp(&remainders[x]).then(x.cmp(&y)));
    let leftover = m - mu.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        mu[i] += 1;
    }
    // Words whose quota rounded to zero borrow from the widest word.
    while let Some(z) = mu.iter().position(|&v| v == 0) {
        let widest = (0..l).max_by(|&x, &y| mu[x].cmp(&mu[y]).then(y.cmp(&x))).expect("l > 0");
        mu[widest] -= 1;
        mu[z] += 1;
    }
    Ok(MuAllocation(mu))
}

fn check_inputs(i: usize, l: usize, m: usize, mu: usize) -> Result<(), DistortionError> {
    if i == 0 || i > l {
        return Err(DistortionError::BadPosition { i, l });
    }
    if mu == 0 || mu >= m {
        return Err(DistortionError::BadWidth { mu, frames: m });
    }
    Ok(())
}

/// Numerators of `-|i/l - (j - shift)/(m - μ)|` over the common denominator
/// `l (m - μ)`, computed exactly so tied positions get identical scores.
fn diagonal_scores(i: usize, l: usize, m: usize, mu: usize, shift: usize) -> Vec<f64> {
    let span = (m - mu) as i128;
    let denom = (l as i128 * span) as f64;
    (1..=m)
        .map(|j| {
            let num = (i as i128 * span - (j as i128 - shift as i128) * l as i128).abs();
            -(num as f64) / denom
        })
        .collect()
}

/// Log-probabilities over `j ∈ 0..=m` given the diagonal scores for `1..=m`.
fn log_distribution(h: &[f64], params: &DistortionParams) -> Vec<f64> {
    let scaled: Vec<f64> = h.iter().map(|v| params.lambda * v).collect();
    let peak = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = peak + scaled.iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
    let log_keep = (1.0 - params.p0).ln();
    std::iter::once(params.p0.ln())
        .chain(scaled.iter().map(|v| log_keep + v - log_z))
        .collect()
}

pub fn log_delta_a(i: usize, l: usize, m: usize, mu: usize, params: &DistortionParams) -> Result<Vec<f64>, DistortionError> {
    check_inputs(i, l, m, mu)?;
    Ok(log_distribution(&diagonal_scores(i, l, m, mu, 0), params))
}

pub fn log_delta_b(i: usize, l: usize, m: usize, mu: usize, params: &DistortionParams) -> Result<Vec<f64>, DistortionError> {
    check_inputs(i, l, m, mu)?;
    Ok(log_distribution(&diagonal_scores(i, l, m, mu, mu), params))
}

/// Start-frame distribution: entry 0 is `p0`, entries `1..=m` share `1 - p0`.
pub fn delta_a(i: usize, l: usize, m: usize, mu: usize, params: &DistortionParams) -> Result<Vec<f64>, DistortionError> {
    Ok(log_delta_a(i, l, m, mu, params)?.into_iter().map(f64::exp).collect())
}

/// End-frame distribution, peaked `μ` frames to the right of [`delta_a`].
pub fn delta_b(i: usize, l: usize, m: usize, mu: usize, params: &DistortionParams) -> Result<Vec<f64>, DistortionError> {
    Ok(log_delta_b(i, l, m, mu, params)?.into_iter().map(f64::exp).collect())
}

/// Precomputed start/end log-distributions for one word of one utterance.
#[derive(Debug, Clone)]
pub struct WordDistortion {
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

impl WordDistortion {
    pub fn new(i: usize, l: usize, m: usize, mu: usize, params: &DistortionParams) -> Result<Self, DistortionError> {
        Ok(WordDistortion { log_a: log_delta_a(i, l, m, mu, params)?, log_b: log_delta_b(i, l, m, mu, params)? })
    }

    pub fn num_frames(&self) -> usize {
        self.log_a.len() - 1
    }

    pub fn log_a(&self) -> &[f64] {
        &self.log_a
    }

    pub fn log_b(&self) -> &[f64] {
        &self.log_b
    }

    /// `log δ_a(a) + log δ_b(b)`; `-inf` when a null endpoint has zero mass.
    pub fn log_span(&self, a: usize, b: usize) -> Result<f64, DistortionError> {
        let m = self.num_frames();
        if a > m {
            return Err(DistortionError::BadFrame { j: a, m });
        }
        if b > m {
            return Err(DistortionError::BadFrame { j: b, m });
        }
        if a > 0 && b > 0 && a > b {
            return Err(DistortionError::ReversedSpan { a, b });
        }
        Ok(self.log_a[a] + self.log_b[b])
    }
}

pub fn log_delta_span(
    a: usize,
    b: usize,
    i: usize,
    l: usize,
    m: usize,
    mu: usize,
    params: &DistortionParams,
) -> Result<f64, DistortionError> {
    WordDistortion::new(i, l, m, mu, params)?.log_span(a, b)
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIG: DistortionParams = DistortionParams { p0: 0.0, lambda: 0.5 };

    #[test]
    fn mu_examples() {
        assert_eq!(allocate_mu(&[2, 4], 60).unwrap().0, vec![20, 40]);
        assert_eq!(allocate_mu(&[1, 1, 1], 10).unwrap().0, vec![4, 3, 3]);
        assert_eq!(allocate_mu(&[10], 7).unwrap().0, vec![7]);
        assert_eq!(allocate_mu(&[2, 3], 100).unwrap().0, vec![40, 60]);
        assert_eq!(allocate_mu(&[1, 1], 1), Err(DistortionError::TooFewFrames { words: 2, frames: 1 }));
    }

    #[test]
    fn mu_gives_every_word_a_frame() {
        let mu = allocate_mu(&[1, 100, 100], 5).unwrap().0;
        assert_eq!(mu.iter().sum::<usize>(), 5);
        assert!(mu.iter().all(|&v| v >= 1));
    }

    #[test]
    fn figure_parameter_set_peaks() {
        let a = delta_a(1, 5, 100, 20, &FIG).unwrap();
        let b = delta_b(1, 5, 100, 20, &FIG).unwrap();
        assert_eq!(argmax(&a), 16);
        assert_eq!(argmax(&b), 36);
        assert_eq!(a[0], 0.0);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn best_span_is_product_of_maximizers() {
        let wd = WordDistortion::new(1, 5, 100, 20, &FIG).unwrap();
        let best = wd.log_span(16, 36).unwrap();
        for a in 1..=100 {
            for b in a..=100 {
                assert!(wd.log_span(a, b).unwrap() <= best);
            }
        }
    }

    #[test]
    fn last_word_ends_at_last_frame() {
        for (m, mu) in [(50, 7), (100, 20), (13, 12)] {
            let b = delta_b(4, 4, m, mu, &FIG).unwrap();
            assert_eq!(argmax(&b), m);
        }
    }

    #[test]
    fn vanishing_precision_is_uniform() {
        let params = DistortionParams { p0: 0.0, lambda: 1e-8 };
        let a = delta_a(2, 5, 100, 20, &params).unwrap();
        assert!(a[1..].iter().all(|p| (p - 0.01).abs() < 1e-6));
    }

    #[test]
    fn null_start_excluded_without_null_mass() {
        let v = log_delta_span(0, 10, 1, 5, 100, 20, &FIG).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
        let with_null = DistortionParams { p0: 0.1, lambda: 0.5 };
        let v = log_delta_span(0, 10, 1, 5, 100, 20, &with_null).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn reversed_span_is_an_error() {
        assert_eq!(
            log_delta_span(30, 10, 1, 5, 100, 20, &FIG),
            Err(DistortionError::ReversedSpan { a: 30, b: 10 })
        );
    }

    #[test]
    fn width_must_be_interior() {
        assert!(delta_a(1, 1, 10, 10, &FIG).is_err());
        assert!(delta_b(1, 1, 10, 0, &FIG).is_err());
    }

    proptest! {
        #[test]
        fn span_log_is_sum_of_factors(l in 1usize..8, m in 2usize..80, seed in 0usize..1000, lambda in 0.0f64..5.0) {
            let i = 1 + seed % l;
            let mu = 1 + seed % (m - 1);
            let a = 1 + seed % m;
            let b = a + (seed / 7) % (m - a + 1);
            let params = DistortionParams { p0: 0.0, lambda };
            let da = delta_a(i, l, m, mu, &params).unwrap();
            let db = delta_b(i, l, m, mu, &params).unwrap();
            let s = log_delta_span(a, b, i, l, m, mu, &params).unwrap();
            prop_assert!((s - (da[a].ln() + db[b].ln())).abs() < 1e-9);
        }

        #[test]
        fn peak_grows_with_precision(l in 1usize..8, m in 2usize..80, seed in 0usize..1000) {
            let i = 1 + seed % l;
            let mu = 1 + seed % (m - 1);
            let mut last = 0.0;
            for lambda in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
                let d = delta_a(i, l, m, mu, &DistortionParams { p0: 0.0, lambda }).unwrap();
                let peak = d[argmax(&d)];
                prop_assert!(peak >= last - 1e-12);
                last = peak;
            }
        }

        #[test]
        fn mu_sums_and_is_permutation_equivariant(chars in prop::collection::vec(1usize..15, 1..8), extra in 0usize..200, rot in 0usize..8) {
            let m = chars.len() + extra;
            let mu = allocate_mu(&chars, m).unwrap().0;
            prop_assert_eq!(mu.iter().sum::<usize>(), m);
            prop_assert!(mu.iter().all(|&v| v >= 1));
            let total: usize = chars.iter().sum();
            let no_fixup = chars.iter().all(|&c| m * c >= total);
            if no_fixup {
                let mut rotated = chars.clone();
                rotated.rotate_left(rot % chars.len());
                let mu_rot = allocate_mu(&rotated, m).unwrap().0;
                let mut lhs: Vec<_> = chars.iter().copied().zip(mu.iter().copied()).collect();
                let mut rhs: Vec<_> = rotated.iter().copied().zip(mu_rot.iter().copied()).collect();
                lhs.sort();
                rhs.sort();
                // Equal character counts may trade their tie-broken frames.
                let key = |v: &Vec<(usize, usize)>| v.iter().map(|p| p.0).collect::<Vec<_>>();
                prop_assert_eq!(key(&lhs), key(&rhs));
                let mut per_len_l = std::collections::BTreeMap::<usize, Vec<usize>>::new();
                let mut per_len_r = per_len_l.clone();
                for (c, u) in lhs { per_len_l.entry(c).or_default().push(u); }
                for (c, u) in rhs { per_len_r.entry(c).or_default().push(u); }
                for (c, us) in &per_len_l {
                    let sl: usize = us.iter().sum();
                    let sr: usize = per_len_r[c].iter().sum();
                    prop_assert!(sl.abs_diff(sr) <= us.len());
                }
            }
        }
    }
}
