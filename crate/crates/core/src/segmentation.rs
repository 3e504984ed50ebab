//! Candidate span generation for the E-step: energy-based silence detection,
//! boundary points, and span enumeration around silences.
//!
//! Frame positions are 1-indexed. Silence intervals are half-open `[s, t)`,
//! spans are inclusive `(a, b)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentencePair;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("no candidate spans survive the boundary, silence and length constraints")]
    NoCandidates,
    #[error("empty boundary set")]
    NoBoundaries,
    #[error("invalid segmentation config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub threshold_ratio: f64,
    pub min_silence_ms: f64,
    pub smooth_frames: usize,
    /// Uniform grid stride in frames; 0 disables the grid.
    pub grid_stride: usize,
    pub span_min_len: usize,
    pub span_max_len: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            threshold_ratio: 0.05,
            min_silence_ms: 50.0,
            smooth_frames: 5,
            grid_stride: 5,
            span_min_len: 3,
            span_max_len: 150,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.threshold_ratio >= 0.0 && self.threshold_ratio <= 1.0) {
            return Err(SegmentationError::BadConfig(format!("threshold_ratio = {}", self.threshold_ratio)));
        }
        if !(self.min_silence_ms >= 0.0 && self.min_silence_ms.is_finite()) {
            return Err(SegmentationError::BadConfig(format!("min_silence_ms = {}", self.min_silence_ms)));
        }
        if self.span_min_len == 0 || self.span_min_len > self.span_max_len {
            return Err(SegmentationError::BadConfig(format!(
                "span length bounds [{}, {}]",
                self.span_min_len, self.span_max_len
            )));
        }
        Ok(())
    }
}

/// Disjoint, ordered `[s, t)` intervals of silent frames.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SilenceSpans(pub Vec<(usize, usize)>);

impl SilenceSpans {
    pub fn is_silent(&self, frame: usize) -> bool {
        self.containing(frame).is_some()
    }

    fn containing(&self, frame: usize) -> Option<(usize, usize)> {
        self.0.iter().copied().find(|&(s, t)| s <= frame && frame < t)
    }

    pub fn overlaps(&self, a: usize, b: usize) -> bool {
        self.0.iter().any(|&(s, t)| s <= b && a < t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub a: usize,
    pub b: usize,
}

impl Span {
    pub fn new(a: usize, b: usize) -> Self {
        Span { a, b }
    }

    pub fn len(&self) -> usize {
        self.b + 1 - self.a
    }

    pub fn is_empty(&self) -> bool {
        self.b < self.a
    }
}

/// Sorted, deduplicated inclusive spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSpans(Vec<Span>);

impl CandidateSpans {
    pub fn new(spans: impl IntoIterator<Item = Span>) -> Self {
        let set: BTreeSet<Span> = spans.into_iter().collect();
        CandidateSpans(set.into_iter().collect())
    }

    pub fn spans(&self) -> &[Span] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, span: Span) -> bool {
        self.0.binary_search(&span).is_ok()
    }

    pub fn index_of(&self, span: Span) -> Option<usize> {
        self.0.binary_search(&span).ok()
    }

    pub fn max_len(&self) -> usize {
        self.0.iter().map(Span::len).max().unwrap_or(0)
    }
}

/// Centered moving average; the window is truncated at the edges.
fn smooth(track: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return track.to_vec();
    }
    let before = (width - 1) / 2;
    let after = width - 1 - before;
    (0..track.len())
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(track.len());
            track[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Mark silent stretches of an energy track.
///
/// A stretch is silent when its smoothed energy falls below
/// `threshold_ratio × max(smoothed)`. Smoothing erodes the edges of short
/// dips, so each smoothed run is widened back over neighboring frames whose
/// raw energy is under the same threshold. Runs shorter than
/// `ceil(min_silence_ms / frame_shift_ms)` frames are discarded.
pub fn detect_silence(energy: &[f64], frame_shift_ms: f64, config: &SegmentationConfig) -> SilenceSpans {
    let smoothed = smooth(energy, config.smooth_frames);
    let peak = smoothed.iter().copied().fold(0.0, f64::max);
    let threshold = config.threshold_ratio * peak;
    let min_frames = ((config.min_silence_ms / frame_shift_ms).ceil() as usize).max(1);
    let n = energy.len();
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if smoothed[i] >= threshold {
            i += 1;
            continue;
        }
        let mut end = i;
        while end < n && smoothed[end] < threshold {
            end += 1;
        }
        let mut start = i;
        while start > 0 && energy[start - 1] < threshold {
            start -= 1;
        }
        while end < n && energy[end] < threshold {
            end += 1;
        }
        match spans.last_mut() {
            Some(last) if last.1 >= start => last.1 = last.1.max(end),
            _ => spans.push((start, end)),
        }
        i = end;
    }
    SilenceSpans(
        spans
            .into_iter()
            .filter(|(s, t)| t - s >= min_frames)
            .map(|(s, t)| (s + 1, t + 1))
            .collect(),
    )
}

/// Silence for a pair, or none when it carries no energy track.
pub fn pair_silences(pair: &SentencePair, config: &SegmentationConfig) -> SilenceSpans {
    pair.energy_track
        .as_deref()
        .map(|e| detect_silence(e, pair.source.frame_shift_ms(), config))
        .unwrap_or_default()
}

/// Union of external boundaries, silence edges, and the stride grid, always
/// including the first and last frame.
pub fn candidate_boundaries(pair: &SentencePair, silences: &SilenceSpans, config: &SegmentationConfig) -> Vec<usize> {
    let m = pair.num_frames();
    let mut points = BTreeSet::from([1, m]);
    if let Some(external) = &pair.boundaries {
        points.extend(external.iter().copied().filter(|&b| (1..=m).contains(&b)));
    }
    for &(s, t) in &silences.0 {
        points.extend([s, t].into_iter().filter(|&b| (1..=m).contains(&b)));
    }
    if config.grid_stride > 0 {
        points.extend((config.grid_stride..=m).step_by(config.grid_stride));
    }
    points.into_iter().collect()
}

/// All boundary-to-boundary spans within the length caps that avoid silence.
/// An endpoint inside a silence moves to the silence edge that keeps the
/// span outside it: starts move right to `t`, ends move left to `s - 1`.
pub fn enumerate_spans(
    boundaries: &[usize],
    silences: &SilenceSpans,
    min_len: usize,
    max_len: usize,
) -> Result<CandidateSpans, SegmentationError> {
    if boundaries.is_empty() {
        return Err(SegmentationError::NoBoundaries);
    }
    let mut out = BTreeSet::new();
    for (k, &a0) in boundaries.iter().enumerate() {
        let a = silences.containing(a0).map_or(a0, |(_, t)| t);
        for &b0 in &boundaries[k..] {
            let b = silences.containing(b0).map_or(b0, |(s, _)| s - 1);
            if a > b {
                continue;
            }
            let len = b - a + 1;
            if len < min_len || len > max_len || silences.overlaps(a, b) {
                continue;
            }
            out.insert(Span::new(a, b));
        }
    }
    if out.is_empty() {
        return Err(SegmentationError::NoCandidates);
    }
    Ok(CandidateSpans(out.into_iter().collect()))
}

/// Candidate spans for one utterance. When the constrained enumeration comes
/// up empty, falls back to every span between grid points with no silence or
/// length restriction.
pub fn candidates_for_pair(pair: &SentencePair, config: &SegmentationConfig) -> CandidateSpans {
    let silences = pair_silences(pair, config);
    let boundaries = candidate_boundaries(pair, &silences, config);
    enumerate_spans(&boundaries, &silences, config.span_min_len, config.span_max_len).unwrap_or_else(|_| {
        let grid = candidate_boundaries(
            &SentencePair { boundaries: None, ..pair.clone() },
            &SilenceSpans::default(),
            config,
        );
        enumerate_spans(&grid, &SilenceSpans::default(), 1, usize::MAX)
            .expect("a non-empty boundary set always yields a span")
    })
}
