//! Length-normalized dynamic time warping and DTW barycenter averaging.
//!
//! The recurrence is the plain three-way step pattern
//! `w[i][j] = d(x_i, y_j) + min(w[i-1][j-1], w[i-1][j], w[i][j-1])` with
//! `w[0][0] = 0` and every other border cell at infinity. The reported
//! distance is `w[m][m'] / (m + m')`, with `d` the Euclidean frame distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FeatureSequence, Frames};

#[derive(Debug, Error, PartialEq)]
pub enum DtwError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cannot warp an empty sequence")]
    Empty,
    #[error("DBA needs at least one member")]
    NoMembers,
    #[error("DBA needs at least one iteration")]
    NoIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub raw_cost: f64,
    pub normalized_cost: f64,
    /// Matched frame pairs `(i, j)`, 0-indexed, from `(0, 0)` to `(m-1, m'-1)`.
    pub path: Vec<(usize, usize)>,
}

#[inline]
pub fn frame_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check(x: Frames<'_>, y: Frames<'_>) -> Result<(), DtwError> {
    if x.is_empty() || y.is_empty() {
        return Err(DtwError::Empty);
    }
    if x.dim() != y.dim() {
        return Err(DtwError::DimMismatch(x.dim(), y.dim()));
    }
    Ok(())
}

/// Full accumulated-cost matrix, `(m+1) × (n+1)` row-major.
fn cost_matrix(x: Frames<'_>, y: Frames<'_>) -> Vec<f64> {
    let (m, n) = (x.len(), y.len());
    let width = n + 1;
    let mut w = vec![f64::INFINITY; (m + 1) * width];
    w[0] = 0.0;
    for i in 1..=m {
        let xi = x.frame(i - 1);
        for j in 1..=n {
            let best = w[(i - 1) * width + j - 1]
                .min(w[(i - 1) * width + j])
                .min(w[i * width + j - 1]);
            w[i * width + j] = frame_distance(xi, y.frame(j - 1)) + best;
        }
    }
    w
}

pub fn dtw_distance(x: Frames<'_>, y: Frames<'_>) -> Result<WarpResult, DtwError> {
    check(x, y)?;
    let (m, n) = (x.len(), y.len());
    let width = n + 1;
    let w = cost_matrix(x, y);
    let raw_cost = w[m * width + n];

    // Backtrack; ties prefer the diagonal, then (i-1, j), then (i, j-1).
    let mut path = Vec::with_capacity(m + n);
    let (mut i, mut j) = (m, n);
    loop {
        path.push((i - 1, j - 1));
        if i == 1 && j == 1 {
            break;
        }
        let diag = w[(i - 1) * width + j - 1];
        let up = w[(i - 1) * width + j];
        let left = w[i * width + j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    path.reverse();
    Ok(WarpResult { raw_cost, normalized_cost: raw_cost / (m + n) as f64, path })
}

/// Normalized DTW distance without the path, in `O(n)` memory.
pub fn dtw_cost(x: Frames<'_>, y: Frames<'_>) -> Result<f64, DtwError> {
    check(x, y)?;
    let n = y.len();
    let mut prev = vec![f64::INFINITY; n + 1];
    let mut cur = vec![f64::INFINITY; n + 1];
    prev[0] = 0.0;
    for i in 1..=x.len() {
        let xi = x.frame(i - 1);
        cur[0] = f64::INFINITY;
        for j in 1..=n {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = frame_distance(xi, y.frame(j - 1)) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[n] / (x.len() + n) as f64)
}

/// Normalized DTW distances between `proto` and every prefix of `seq`.
///
/// Entry `k` is `DTW(proto, seq[..k+1])`. One table serves all prefixes because
/// column `j` of the accumulated-cost matrix only depends on columns `<= j`,
/// so each value is bit-identical to a separate [`dtw_cost`] call.
pub fn prefix_costs(proto: Frames<'_>, seq: Frames<'_>) -> Result<Vec<f64>, DtwError> {
    check(proto, seq)?;
    let (m, n) = (proto.len(), seq.len());
    // Iterate column-major so the last row of each column is final as soon as
    // the column is done.
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    let mut out = Vec::with_capacity(n);
    for j in 1..=n {
        let yj = seq.frame(j - 1);
        cur[0] = f64::INFINITY;
        for i in 1..=m {
            let best = prev[i - 1].min(cur[i - 1]).min(prev[i]);
            cur[i] = frame_distance(proto.frame(i - 1), yj) + best;
        }
        out.push(cur[m] / (m + j) as f64);
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbaConfig {
    pub iterations: usize,
    /// Stop once an iteration improves the objective by less than this fraction.
    pub rel_tol: f64,
}

impl Default for DbaConfig {
    fn default() -> Self {
        DbaConfig { iterations: 3, rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct DbaOutcome {
    pub centroid: FeatureSequence,
    /// Accepted iterates, starting with the initial skeleton.
    pub iterates: Vec<FeatureSequence>,
    /// `Σ DTW(iterate, member)²` for each accepted iterate.
    pub objectives: Vec<f64>,
    /// Whether an update was discarded because it raised the objective.
    pub rejected_update: bool,
}

/// Index of the skeleton: the first member (in input order) having the
/// lower-median length.
pub fn median_length_member(members: &[Frames<'_>]) -> Option<usize> {
    let mut lengths: Vec<usize> = members.iter().map(Frames::len).collect();
    if lengths.is_empty() {
        return None;
    }
    lengths.sort_unstable();
    let median = lengths[(lengths.len() - 1) / 2];
    members.iter().position(|m| m.len() == median)
}

fn align_all(skeleton: Frames<'_>, members: &[Frames<'_>]) -> Result<Vec<WarpResult>, DtwError> {
    members.par_iter().map(|m| dtw_distance(skeleton, *m)).collect()
}

fn objective(warps: &[WarpResult]) -> f64 {
    warps.iter().map(|w| w.normalized_cost * w.normalized_cost).sum()
}

/// One DBA refinement: every skeleton frame becomes the mean of the member
/// frames warped onto it. Sums are accumulated in member order.
fn refine(skeleton: &FeatureSequence, members: &[Frames<'_>], warps: &[WarpResult]) -> FeatureSequence {
    let dim = skeleton.dim();
    let mut sums = vec![0.0; skeleton.as_flat().len()];
    let mut counts = vec![0usize; skeleton.len()];
    for (member, warp) in members.iter().zip(warps) {
        for &(i, j) in &warp.path {
            counts[i] += 1;
            for (acc, v) in sums[i * dim..(i + 1) * dim].iter_mut().zip(member.frame(j)) {
                *acc += v;
            }
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        // Every skeleton index lies on every warping path.
        debug_assert!(c > 0);
        sums[i * dim..(i + 1) * dim].iter_mut().for_each(|v| *v /= c as f64);
    }
    FeatureSequence::from_flat(sums, dim)
        .expect("means of finite frames are finite")
        .with_frame_shift(skeleton.frame_shift_ms())
}

pub fn dba_centroid(members: &[Frames<'_>], config: &DbaConfig) -> Result<FeatureSequence, DtwError> {
    dba_centroid_traced(members, config).map(|o| o.centroid)
}

/// DBA with its objective trace.
///
/// An update that raises `Σ DTW²` is discarded and iteration stops, so the
/// returned centroid is never worse than any earlier iterate.
pub fn dba_centroid_traced(members: &[Frames<'_>], config: &DbaConfig) -> Result<DbaOutcome, DtwError> {
    if config.iterations == 0 {
        return Err(DtwError::NoIterations);
    }
    let start = median_length_member(members).ok_or(DtwError::NoMembers)?;
    let dim = members[start].dim();
    if let Some(bad) = members.iter().find(|m| m.dim() != dim) {
        return Err(DtwError::DimMismatch(dim, bad.dim()));
    }
    let mut skeleton = members[start].to_owned();
    let mut warps = align_all(skeleton.view(), members)?;
    let mut current = objective(&warps);
    let mut iterates = vec![skeleton.clone()];
    let mut objectives = vec![current];
    let mut rejected_update = false;
    for _ in 0..config.iterations {
        let candidate = refine(&skeleton, members, &warps);
        let candidate_warps = align_all(candidate.view(), members)?;
        let next = objective(&candidate_warps);
        if next > current {
            rejected_update = true;
            break;
        }
        skeleton = candidate;
        warps = candidate_warps;
        iterates.push(skeleton.clone());
        objectives.push(next);
        let improvement = current - next;
        current = next;
        if improvement <= config.rel_tol * current.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(DbaOutcome { centroid: skeleton, iterates, objectives, rejected_update })
}
