//! Parallel data: feature sequences, target sentences, gold links, and the
//! on-disk formats they are read from and written to.
//!
//! Layout of a corpus directory:
//!
//! * manifest: one utterance id per line
//! * translations: one whitespace-tokenized sentence per manifest line
//! * `<feature_dir>/<utt_id>.feat`: header `m d`, then `m` rows of `d` floats
//! * `<feature_dir>/<utt_id>.energy` (optional): one non-negative float per frame
//! * `<feature_dir>/<utt_id>.bounds` (optional): one 1-indexed frame index per line
//! * gold (optional): `utt_id<TAB>word_index<TAB>start<TAB>end`, 0-indexed, end exclusive

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FRAME_SHIFT_MS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("utterance {utt_id}: {msg}")]
    Invalid { utt_id: String, msg: String },
    #[error("invalid feature sequence: {0}")]
    Features(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Borrowed view of `len` consecutive frames of dimension `dim`, stored row-major.
#[derive(Debug, Clone, Copy)]
pub struct Frames<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Frames<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim));
        Frames { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Frames `start..end` (0-indexed, end exclusive).
    pub fn slice(&self, start: usize, end: usize) -> Frames<'a> {
        Frames { data: &self.data[start * self.dim..end * self.dim], dim: self.dim }
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_owned(&self) -> FeatureSequence {
        FeatureSequence {
            data: self.data.to_vec(),
            dim: self.dim,
            frame_shift_ms: DEFAULT_FRAME_SHIFT_MS,
        }
    }
}

/// An `m × d` matrix of finite feature values for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    data: Vec<f64>,
    dim: usize,
    frame_shift_ms: f64,
}

impl FeatureSequence {
    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::Features("dimension must be positive".into()));
        }
        if data.is_empty() {
            return Err(CorpusError::Features("sequence has no frames".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(CorpusError::Features(format!(
                "{} values do not divide into frames of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::Features(format!(
                "non-finite value at frame {}, dimension {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(FeatureSequence { data, dim, frame_shift_ms: DEFAULT_FRAME_SHIFT_MS })
    }

    pub fn from_frames(frames: &[Vec<f64>]) -> Result<Self, CorpusError> {
        let dim = frames.first().map_or(0, Vec::len);
        if let Some(i) = frames.iter().position(|f| f.len() != dim) {
            return Err(CorpusError::Features(format!(
                "frame {i} has {} values, expected {dim}",
                frames[i].len()
            )));
        }
        Self::from_flat(frames.concat(), dim)
    }

    pub fn with_frame_shift(mut self, ms: f64) -> Self {
        self.frame_shift_ms = ms;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn view(&self) -> Frames<'_> {
        Frames::new(&self.data, self.dim)
    }

    /// Frames of the inclusive 1-indexed span `a..=b`.
    pub fn span(&self, a: usize, b: usize) -> Frames<'_> {
        self.view().slice(a - 1, b)
    }
}

/// Shift and scale every dimension to zero mean and unit population variance
/// over the utterance. Constant dimensions are centered only.
pub fn normalize_utterance(fs: &FeatureSequence) -> FeatureSequence {
    let m = fs.len() as f64;
    let dim = fs.dim;
    let mut mean = vec![0.0; dim];
    for frame in fs.view().iter() {
        for (acc, v) in mean.iter_mut().zip(frame) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; dim];
    for frame in fs.view().iter() {
        for ((acc, v), mu) in var.iter_mut().zip(frame).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let first = fs.frame(0);
    let scale: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(d, v)| {
            let constant = fs.view().iter().all(|frame| frame[d] == first[d]);
            let sd = (v / m).sqrt();
            if constant || sd == 0.0 { 1.0 } else { 1.0 / sd }
        })
        .collect();
    let data = fs
        .data
        .chunks_exact(dim)
        .flat_map(|frame| {
            frame.iter().zip(&mean).zip(&scale).map(|((v, mu), s)| (v - mu) * s)
        })
        .collect();
    FeatureSequence { data, dim, frame_shift_ms: fs.frame_shift_ms }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub utt_id: String,
    pub source: FeatureSequence,
    pub target_words: Vec<String>,
    pub char_lengths: Vec<usize>,
    pub energy_track: Option<Vec<f64>>,
    /// Externally detected candidate boundaries, 1-indexed frame positions.
    pub boundaries: Option<Vec<usize>>,
}

impl SentencePair {
    pub fn new(utt_id: impl Into<String>, source: FeatureSequence, target_words: Vec<String>) -> Result<Self, CorpusError> {
        let char_lengths = target_words.iter().map(|w| w.chars().count()).collect();
        let pair = SentencePair {
            utt_id: utt_id.into(),
            source,
            target_words,
            char_lengths,
            energy_track: None,
            boundaries: None,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn num_frames(&self) -> usize {
        self.source.len()
    }

    pub fn num_words(&self) -> usize {
        self.target_words.len()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |msg: String| CorpusError::Invalid { utt_id: self.utt_id.clone(), msg };
        if self.target_words.is_empty() {
            return Err(invalid("empty sentence".into()));
        }
        if self.target_words.iter().any(String::is_empty) {
            return Err(invalid("empty token".into()));
        }
        if self.char_lengths.len() != self.target_words.len()
            || self.target_words.iter().zip(&self.char_lengths).any(|(w, &c)| w.chars().count() != c)
        {
            return Err(invalid("character lengths do not match tokens".into()));
        }
        let m = self.num_frames();
        if let Some(energy) = &self.energy_track {
            if energy.len() != m {
                return Err(invalid(format!("energy track has {} values, expected {m}", energy.len())));
            }
            if energy.iter().any(|e| !e.is_finite() || *e < 0.0) {
                return Err(invalid("energy track must be finite and non-negative".into()));
            }
        }
        if let Some(bounds) = &self.boundaries {
            if let Some(b) = bounds.iter().find(|&&b| b == 0 || b > m) {
                return Err(invalid(format!("boundary {b} outside 1..={m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldAlignment {
    pub utt_id: String,
    /// (word_index, frame_index), both 0-indexed.
    pub links: BTreeSet<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
    pub gold: Option<BTreeMap<String, GoldAlignment>>,
}

impl Corpus {
    pub fn new(pairs: Vec<SentencePair>, gold: Option<BTreeMap<String, GoldAlignment>>) -> Result<Self, CorpusError> {
        let corpus = Corpus { pairs, gold };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&SentencePair> {
        self.pairs.iter().find(|p| p.utt_id == utt_id)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for pair in &self.pairs {
            pair.validate()?;
            if !seen.insert(pair.utt_id.as_str()) {
                return Err(CorpusError::Invalid { utt_id: pair.utt_id.clone(), msg: "duplicate utterance id".into() });
            }
        }
        if let Some(gold) = &self.gold {
            for (utt_id, g) in gold {
                let pair = self.get(utt_id).ok_or_else(|| CorpusError::Invalid {
                    utt_id: utt_id.clone(),
                    msg: "gold alignment for unknown utterance".into(),
                })?;
                if let Some(&(w, f)) =
                    g.links.iter().find(|&&(w, f)| w >= pair.num_words() || f >= pair.num_frames())
                {
                    return Err(CorpusError::Invalid {
                        utt_id: utt_id.clone(),
                        msg: format!("gold link ({w}, {f}) out of range"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Copy of the corpus with every utterance normalized.
    pub fn normalized(&self) -> Corpus {
        let pairs = self
            .pairs
            .iter()
            .map(|p| SentencePair { source: normalize_utterance(&p.source), ..p.clone() })
            .collect();
        Corpus { pairs, gold: self.gold.clone() }
    }

    /// Restrict to the given utterance ids, in the given order. Gold entries
    /// for dropped utterances are dropped too.
    pub fn subset(&self, ids: &[String]) -> Result<Corpus, CorpusError> {
        let pairs = ids
            .iter()
            .map(|id| {
                self.get(id).cloned().ok_or_else(|| CorpusError::Invalid {
                    utt_id: id.clone(),
                    msg: "not in corpus".into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let gold = self.gold.as_ref().map(|g| {
            g.iter().filter(|(k, _)| ids.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect()
        });
        Corpus::new(pairs, gold)
    }
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Non-empty lines of a manifest, trimmed.
pub fn read_manifest(path: &Path) -> Result<Vec<String>, CorpusError> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence, CorpusError> {
    let text = read_text(path)?;
    let parse_err = |line: usize, msg: String| CorpusError::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| parse_err(hline + 1, format!("bad header: {e}"))))
        .collect::<Result<_, _>>()?;
    let &[m, d] = dims.as_slice() else {
        return Err(parse_err(hline + 1, format!("header must be \"m d\", got {header:?}")));
    };
    if m == 0 || d == 0 {
        return Err(parse_err(hline + 1, "header declares an empty matrix".into()));
    }
    let mut data = Vec::with_capacity(m * d);
    let mut rows = 0;
    for (idx, line) in lines {
        rows += 1;
        if rows > m {
            return Err(parse_err(idx + 1, format!("expected {m} rows, found more")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|e| parse_err(idx + 1, format!("bad value {tok:?}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(idx + 1, format!("non-finite value {tok:?}")));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(parse_err(idx + 1, format!("expected {d} values, found {}", data.len() - before)));
        }
    }
    if rows != m {
        return Err(parse_err(text.lines().count(), format!("expected {m} rows, found {rows}")));
    }
    FeatureSequence::from_flat(data, d)
}

pub fn format_feature_file(fs: &FeatureSequence) -> String {
    let mut out = format!("{} {}\n", fs.len(), fs.dim());
    for frame in fs.view().iter() {
        let row: Vec<String> = frame.iter().map(f64::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn read_float_column(path: &Path) -> Result<Vec<f64>, CorpusError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad value: {e}"),
            })
        })
        .collect()
}

pub fn read_boundary_file(path: &Path) -> Result<Vec<usize>, CorpusError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("bad frame index: {e}"),
            })
        })
        .collect()
}

/// Parse a gold file. Ranges expand to one link per frame.
pub fn read_gold_file(path: &Path) -> Result<BTreeMap<String, GoldAlignment>, CorpusError> {
    let text = read_text(path)?;
    let mut gold: BTreeMap<String, GoldAlignment> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| CorpusError::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let nums: Vec<usize> = fields[1..]
            .iter()
            .map(|f| f.trim().parse::<usize>().map_err(|e| parse_err(format!("bad number {f:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        let (word, start, end) = (nums[0], nums[1], nums[2]);
        if start >= end {
            return Err(parse_err(format!("empty frame range [{start}, {end})")));
        }
        let entry = gold.entry(fields[0].to_string()).or_insert_with(|| GoldAlignment {
            utt_id: fields[0].to_string(),
            links: BTreeSet::new(),
        });
        entry.links.extend((start..end).map(|f| (word, f)));
    }
    Ok(gold)
}

/// Gold links collapsed back into maximal per-word frame ranges.
pub fn format_gold(gold: &BTreeMap<String, GoldAlignment>) -> String {
    let mut out = String::new();
    for (utt_id, g) in gold {
        let mut runs: Vec<(usize, usize, usize)> = Vec::new();
        for &(w, f) in &g.links {
            match runs.last_mut() {
                Some((rw, _, end)) if *rw == w && *end == f => *end += 1,
                _ => runs.push((w, f, f + 1)),
            }
        }
        for (w, s, e) in runs {
            let _ = writeln!(out, "{utt_id}\t{w}\t{s}\t{e}");
        }
    }
    out
}

pub fn load_corpus(
    manifest_path: &Path,
    feature_dir: &Path,
    translations_path: &Path,
    gold_path: Option<&Path>,
) -> Result<Corpus, CorpusError> {
    let ids = read_manifest(manifest_path)?;
    let translations = read_text(translations_path)?;
    let sentences: Vec<&str> = translations.lines().collect();
    if sentences.len() < ids.len() {
        return Err(CorpusError::Parse {
            path: translations_path.to_path_buf(),
            line: sentences.len() + 1,
            msg: format!("expected {} sentences, found {}", ids.len(), sentences.len()),
        });
    }
    let mut pairs = Vec::with_capacity(ids.len());
    for (line_no, (utt_id, sentence)) in ids.iter().zip(&sentences).enumerate() {
        let words: Vec<String> = sentence.split_whitespace().map(String::from).collect();
        if words.is_empty() {
            return Err(CorpusError::Parse {
                path: translations_path.to_path_buf(),
                line: line_no + 1,
                msg: format!("empty sentence for utterance {utt_id}"),
            });
        }
        let source = read_feature_file(&feature_dir.join(format!("{utt_id}.feat")))?;
        let mut pair = SentencePair::new(utt_id.clone(), source, words)?;
        let energy_path = feature_dir.join(format!("{utt_id}.energy"));
        if energy_path.exists() {
            pair.energy_track = Some(read_float_column(&energy_path)?);
        }
        let bounds_path = feature_dir.join(format!("{utt_id}.bounds"));
        if bounds_path.exists() {
            pair.boundaries = Some(read_boundary_file(&bounds_path)?);
        }
        pair.validate()?;
        pairs.push(pair);
    }
    let gold = gold_path.map(read_gold_file).transpose()?;
    Corpus::new(pairs, gold)
}

/// File names written by [`write_corpus`].
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TRANSLATIONS_FILE: &str = "translations.txt";
pub const GOLD_FILE: &str = "gold.tsv";
pub const FEATURE_DIR: &str = "feats";

/// Write a corpus in the layout [`load_corpus`] reads.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    let feat_dir = dir.join(FEATURE_DIR);
    fs::create_dir_all(&feat_dir).map_err(io_err(&feat_dir))?;
    let write = |path: PathBuf, text: String| fs::write(&path, text).map_err(io_err(&path));
    let mut manifest = String::new();
    let mut translations = String::new();
    for pair in &corpus.pairs {
        manifest.push_str(&pair.utt_id);
        manifest.push('\n');
        translations.push_str(&pair.target_words.join(" "));
        translations.push('\n');
        write(feat_dir.join(format!("{}.feat", pair.utt_id)), format_feature_file(&pair.source))?;
        if let Some(energy) = &pair.energy_track {
            let text: String = energy.iter().map(|e| format!("{e}\n")).collect();
            write(feat_dir.join(format!("{}.energy", pair.utt_id)), text)?;
        }
        if let Some(bounds) = &pair.boundaries {
            let text: String = bounds.iter().map(|b| format!("{b}\n")).collect();
            write(feat_dir.join(format!("{}.bounds", pair.utt_id)), text)?;
        }
    }
    write(dir.join(MANIFEST_FILE), manifest)?;
    write(dir.join(TRANSLATIONS_FILE), translations)?;
    if let Some(gold) = &corpus.gold {
        write(dir.join(GOLD_FILE), format_gold(gold))?;
    }
    Ok(())
}
