//! Flat `key = value` configuration. Every key is also a same-named flag
//! (`lambda_grid` ↔ `--lambda-grid`); resolution order is built-in default,
//! then config file, then flag.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Arg, ArgMatches};
use spanalign::distortion::DistortionParams;
use spanalign::{DbaConfig, SegmentationConfig, SynthConfig, TrainConfig, Variant};

pub const DEFAULT_LAMBDA_GRID: &str = "0.1,0.3,0.5,1.0,2.0";

#[derive(Debug, Clone)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<String>,
    pub help: &'static str,
}

fn key(name: &'static str, default: impl Display, help: &'static str) -> Key {
    Key { name, default: Some(default.to_string()), help }
}

fn path_key(name: &'static str, help: &'static str) -> Key {
    Key { name, default: None, help }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn train_keys() -> Vec<Key> {
    let t = TrainConfig::default();
    vec![
        key("iterations", t.iterations, "EM iterations after initialization"),
        key("seed", t.seed, "seed for the random initial cluster assignment"),
        key("k", t.k, "clusters per target word type"),
        key("dba_iterations", t.dba.iterations, "DBA refinement passes per M-step"),
        key("dba_rel_tol", t.dba.rel_tol, "stop DBA once the relative objective change is below this"),
        key("variant", t.variant, "span model: deficient or proper"),
        key("p0", t.distortion.p0, "null alignment probability"),
        key("lambda", t.distortion.lambda, "distortion sharpness"),
        key("normalize", true, "zero-mean unit-variance features per utterance"),
        path_key("init_model", "start from this checkpoint instead of the random initialization"),
    ]
}

pub fn segmentation_keys() -> Vec<Key> {
    let s = SegmentationConfig::default();
    vec![
        key("threshold_ratio", s.threshold_ratio, "silence threshold relative to the utterance's peak energy"),
        key("min_silence_ms", s.min_silence_ms, "shortest pause treated as silence"),
        key("smooth_frames", s.smooth_frames, "moving-average width applied to the energy track"),
        key("grid_stride", s.grid_stride, "uniform candidate boundary stride in frames (0 disables)"),
        key("span_min_len", s.span_min_len, "shortest candidate span in frames"),
        key("span_max_len", s.span_max_len, "longest candidate span in frames"),
    ]
}

pub fn corpus_keys() -> Vec<Key> {
    vec![
        path_key("corpus", "corpus directory (manifest.txt, translations.txt, feats/, gold.tsv)"),
        path_key("manifest", "utterance id list [default: <corpus>/manifest.txt]"),
        path_key("features", "feature directory [default: <corpus>/feats]"),
        path_key("translations", "one sentence per manifest line [default: <corpus>/translations.txt]"),
        path_key("gold", "gold links [default: <corpus>/gold.tsv if present]"),
    ]
}

pub fn synth_keys() -> Vec<Key> {
    let s = SynthConfig::default();
    vec![
        key("seed", 0, "generator seed"),
        key("vocab_size", s.vocab_size, "number of word types"),
        key("sentences", s.sentences, "number of sentence pairs"),
        key("min_words", s.min_words, "shortest sentence in words"),
        key("max_words", s.max_words, "longest sentence in words"),
        key("proto_min_len", s.proto_min_len, "shortest word prototype in frames"),
        key("proto_max_len", s.proto_max_len, "longest word prototype in frames"),
        key("phone_min_len", s.phone_min_len, "shortest phone in frames"),
        key("phone_max_len", s.phone_max_len, "longest phone in frames"),
        key("dim", s.dim, "feature dimension"),
        key("noise_std", s.noise_std, "standard deviation of additive Gaussian noise"),
        key("reorder_prob", s.reorder_prob, "probability of swapping adjacent words"),
        key("silence_prob", s.silence_prob, "probability of a pause between adjacent words"),
        key("silence_min_len", s.silence_min_len, "shortest pause in frames"),
        key("silence_max_len", s.silence_max_len, "longest pause in frames"),
        key("frames_per_char", s.frames_per_char, "prototype frames per spelled character"),
        key("emit_boundaries", s.emit_boundaries, "write boundary sidecar files"),
        key("phone_boundaries", s.phone_boundaries, "include phone onsets in the boundary files"),
        key("distinct_words", s.distinct_words, "no repeated word within a sentence"),
        key("frame_shift_ms", s.frame_shift_ms, "milliseconds between frames"),
    ]
}

/// Every key accepted in a config file.
pub fn all_keys() -> Vec<Key> {
    let mut keys = train_keys();
    keys.push(key("lambda_grid", DEFAULT_LAMBDA_GRID, "comma-separated lambda values for grid search"));
    keys.extend(segmentation_keys());
    keys.extend(corpus_keys());
    keys.extend(synth_keys());
    keys.extend([
        path_key("out", "output directory"),
        path_key("dev_manifest", "development split manifest"),
        path_key("test_manifest", "test split manifest"),
        path_key("predicted", "predicted alignment or link file"),
        path_key("report", "write the report here as well as to stdout"),
    ]);
    let mut seen = std::collections::BTreeSet::new();
    keys.retain(|k| seen.insert(k.name));
    keys
}

pub fn to_args(keys: &[Key]) -> Vec<Arg> {
    keys.iter()
        .map(|k| {
            let help = match &k.default {
                Some(d) => format!("{} [default: {d}]", k.help),
                None => k.help.to_string(),
            };
            Arg::new(k.name).long(flag_name(k.name)).value_name("VALUE").help(help)
        })
        .collect()
}

/// Parsed config file: key → (value, line number).
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    path: PathBuf,
    values: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let known: Vec<&str> = all_keys().iter().map(|k| k.name).collect();
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), n + 1))?;
            let (k, v) = (k.trim().replace('-', "_"), v.trim().to_string());
            if !known.contains(&k.as_str()) {
                bail!("{}:{}: unknown key {k:?}", path.display(), n + 1);
            }
            if values.insert(k.clone(), (v, n + 1)).is_some() {
                bail!("{}:{}: key {k:?} set twice", path.display(), n + 1);
            }
        }
        Ok(ConfigFile { path: path.to_path_buf(), values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path)
    }
}

/// Resolved values for one command, with the origin of each for messages.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, String)>,
}

impl Settings {
    pub fn resolve(keys: &[Key], file: &ConfigFile, matches: &ArgMatches) -> Self {
        let mut values = BTreeMap::new();
        for k in keys {
            let flag = matches.get_one::<String>(k.name).map(|v| (v.clone(), format!("--{}", flag_name(k.name))));
            let from_file = || {
                file.values
                    .get(k.name)
                    .map(|(v, line)| (v.clone(), format!("{}:{line}", file.path.display())))
            };
            let default = || k.default.clone().map(|d| (d, "default".to_string()));
            if let Some(v) = flag.or_else(from_file).or_else(default) {
                values.insert(k.name.to_string(), v);
            }
        }
        Settings { values }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let (v, origin) = self.values.get(key).ok_or_else(|| anyhow!("missing required setting `{key}`"))?;
        v.parse::<T>().map_err(|e| anyhow!("{origin}: bad value {v:?} for `{key}`: {e}"))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| anyhow!("missing required setting `{key}` (--{})", flag_name(key)))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            iterations: self.get("iterations")?,
            seed: self.get("seed")?,
            k: self.get("k")?,
            dba: DbaConfig { iterations: self.get("dba_iterations")?, rel_tol: self.get("dba_rel_tol")? },
            variant: self.get::<Variant>("variant")?,
            distortion: DistortionParams { p0: self.get("p0")?, lambda: self.get("lambda")? },
            segmentation: self.segmentation_config()?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn segmentation_config(&self) -> Result<SegmentationConfig> {
        Ok(SegmentationConfig {
            threshold_ratio: self.get("threshold_ratio")?,
            min_silence_ms: self.get("min_silence_ms")?,
            smooth_frames: self.get("smooth_frames")?,
            grid_stride: self.get("grid_stride")?,
            span_min_len: self.get("span_min_len")?,
            span_max_len: self.get("span_max_len")?,
        })
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let config = SynthConfig {
            vocab_size: self.get("vocab_size")?,
            sentences: self.get("sentences")?,
            min_words: self.get("min_words")?,
            max_words: self.get("max_words")?,
            proto_min_len: self.get("proto_min_len")?,
            proto_max_len: self.get("proto_max_len")?,
            phone_min_len: self.get("phone_min_len")?,
            phone_max_len: self.get("phone_max_len")?,
            dim: self.get("dim")?,
            noise_std: self.get("noise_std")?,
            reorder_prob: self.get("reorder_prob")?,
            silence_prob: self.get("silence_prob")?,
            silence_min_len: self.get("silence_min_len")?,
            silence_max_len: self.get("silence_max_len")?,
            frames_per_char: self.get("frames_per_char")?,
            emit_boundaries: self.get("emit_boundaries")?,
            phone_boundaries: self.get("phone_boundaries")?,
            distinct_words: self.get("distinct_words")?,
            frame_shift_ms: self.get("frame_shift_ms")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn lambda_grid(&self) -> Result<Vec<f64>> {
        let raw = self.raw("lambda_grid").unwrap_or(DEFAULT_LAMBDA_GRID);
        let grid = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| anyhow!("bad lambda_grid entry {s:?}: {e}")))
            .collect::<Result<Vec<_>>>()?;
        if grid.is_empty() {
            bail!("lambda_grid is empty");
        }
        Ok(grid)
    }
}
