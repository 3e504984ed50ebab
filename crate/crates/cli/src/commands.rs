use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use spanalign::corpus::{self, read_feature_file, read_gold_file, read_manifest, write_corpus};
use spanalign::evalkit::{self, format_alignments, format_report, format_report_tsv, Links};
use spanalign::model::ModelParams;
use spanalign::trainer::{resume_with, train_with, TrainError, TrainState};
use spanalign::{dtw_distance, load_corpus, synth_generate, Corpus, EvalReport, TrainConfig};

use crate::config::Settings;

pub const ALIGNMENTS_FILE: &str = "alignments.tsv";
pub const MODEL_FILE: &str = "model.json";
pub const ITERATIONS_FILE: &str = "iterations.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_TSV_FILE: &str = "report.tsv";
pub const GRID_FILE: &str = "grid.tsv";
pub const TRUE_MODEL_FILE: &str = "true_model.json";

/// Write via a temporary file in the same directory, then rename, so a
/// failed run never leaves a truncated output behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct CorpusPaths {
    manifest: PathBuf,
    features: PathBuf,
    translations: PathBuf,
    gold: Option<PathBuf>,
}

fn corpus_paths(s: &Settings) -> Result<CorpusPaths> {
    let root = s.path("corpus");
    let pick = |key: &str, file: &str| -> Result<PathBuf> {
        match (s.path(key), &root) {
            (Some(p), _) => Ok(p),
            (None, Some(r)) => Ok(r.join(file)),
            (None, None) => bail!("set --corpus or --{key}"),
        }
    };
    let gold = s.path("gold").or_else(|| root.as_ref().map(|r| r.join(corpus::GOLD_FILE)).filter(|p| p.exists()));
    Ok(CorpusPaths {
        manifest: pick("manifest", corpus::MANIFEST_FILE)?,
        features: pick("features", corpus::FEATURE_DIR)?,
        translations: pick("translations", corpus::TRANSLATIONS_FILE)?,
        gold,
    })
}

fn load(s: &Settings) -> Result<Corpus> {
    let p = corpus_paths(s)?;
    let corpus = load_corpus(&p.manifest, &p.features, &p.translations, p.gold.as_deref())?;
    info!("loaded {} utterances from {}", corpus.len(), p.manifest.display());
    Ok(if s.get::<bool>("normalize")? { corpus.normalized() } else { corpus })
}

fn log_header(command: &str, config: &TrainConfig) -> String {
    format!(
        "# spanalign {command} variant={} seed={} k={} iterations={} lambda={} p0={} dba_iterations={}\n\
         iteration\ttotal_log_score\tchanged\n",
        config.variant,
        config.seed,
        config.k,
        config.iterations,
        config.distortion.lambda,
        config.distortion.p0,
        config.dba.iterations
    )
}

/// Train on `corpus`, checkpointing into `out` after every iteration, and
/// write the final alignments (plus a report when gold is available).
fn run_training(
    corpus: &Corpus,
    config: &TrainConfig,
    init: Option<ModelParams>,
    out: &Path,
    command: &str,
) -> Result<(TrainState, Option<EvalReport>)> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut log = log_header(command, config);
    let checkpoint = |state: &TrainState, log: &mut String| -> Result<(), TrainError> {
        let rec = state.iteration_log.last().expect("called after an iteration");
        let _ = writeln!(log, "{}\t{}\t{}", rec.iteration, rec.total_log_score, rec.changed);
        let io = |e: anyhow::Error| TrainError::Config(format!("checkpoint: {e:#}"));
        write_atomic(&out.join(MODEL_FILE), &state.params.to_checkpoint_string()).map_err(io)?;
        write_atomic(&out.join(ITERATIONS_FILE), log).map_err(io)?;
        Ok(())
    };
    let state = match init {
        Some(params) => resume_with(corpus, config, params, |st| checkpoint(st, &mut log))?,
        None => train_with(corpus, config, |st| checkpoint(st, &mut log))?,
    };
    write_atomic(&out.join(ALIGNMENTS_FILE), &format_alignments(&state.assignments, &corpus.pairs))?;
    let report = corpus.gold.as_ref().map(|gold| evalkit::evaluate_alignments(&state.assignments, &corpus.pairs, gold));
    if let Some(r) = &report {
        write_atomic(&out.join(REPORT_FILE), &format_report(r))?;
        write_atomic(&out.join(REPORT_TSV_FILE), &format_report_tsv(r))?;
    }
    Ok((state, report))
}

pub fn align(s: &Settings) -> Result<()> {
    let config = s.train_config()?;
    let corpus = load(s)?;
    let out = s.required_path("out")?;
    let init = s.path("init_model").map(|p| ModelParams::load_checkpoint(&p)).transpose()?;
    let (state, report) = run_training(&corpus, &config, init, &out, "align")?;
    println!("aligned {} utterances ({} words) into {}", corpus.len(), state.assignments.iter().map(|a| a.words.len()).sum::<usize>(), out.display());
    if let Some(r) = report {
        println!("precision\t{:.6}\nrecall\t{:.6}\nf_score\t{:.6}", r.precision, r.recall, r.f_score);
    }
    Ok(())
}

/// Predicted links from either an alignment TSV or a gold-format file.
type LinkTable = (BTreeMap<String, Links>, BTreeMap<String, Vec<String>>);

fn read_links(path: &Path) -> Result<LinkTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty() && !l.starts_with("utt_id\t"));
    if first.is_some_and(|l| l.split('\t').count() == 4) {
        let gold = read_gold_file(path)?;
        return Ok((gold.into_iter().map(|(k, g)| (k, g.links)).collect(), BTreeMap::new()));
    }
    let rows = evalkit::parse_alignments(&text, &path.display().to_string())?;
    Ok(evalkit::rows_to_links(&rows))
}

pub fn eval(s: &Settings) -> Result<()> {
    let (predicted, words) = read_links(&s.required_path("predicted")?)?;
    let gold = read_gold_file(&s.required_path("gold")?)?;
    let report = evalkit::evaluate(&predicted, &gold, &words);
    let text = format_report(&report);
    if let Some(path) = s.path("report") {
        write_atomic(&path, &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn grid(s: &Settings) -> Result<()> {
    let base = s.train_config()?;
    let lambdas = s.lambda_grid()?;
    let corpus = load(s)?;
    if corpus.gold.is_none() {
        bail!("grid search needs gold links (--gold or <corpus>/gold.tsv)");
    }
    let dev = corpus.subset(&read_manifest(&s.required_path("dev_manifest")?)?)?;
    let test = corpus.subset(&read_manifest(&s.required_path("test_manifest")?)?)?;
    let out = s.required_path("out")?;
    let mut table = String::from("split\tlambda\tprecision\trecall\tf_score\n");
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &lambdas {
        let mut config = base.clone();
        config.distortion.lambda = lambda;
        config.validate()?;
        let dir = out.join(format!("dev_lambda_{lambda}"));
        let (_, report) = run_training(&dev, &config, None, &dir, "grid")?;
        let r = report.expect("dev split has gold");
        info!("lambda {lambda}: dev F {:.4}", r.f_score);
        let _ = writeln!(table, "dev\t{lambda}\t{}\t{}\t{}", r.precision, r.recall, r.f_score);
        if best.is_none_or(|(_, f)| r.f_score > f) {
            best = Some((lambda, r.f_score));
        }
    }
    let (lambda, dev_f) = best.expect("grid is non-empty");
    let mut config = base;
    config.distortion.lambda = lambda;
    let (_, report) = run_training(&test, &config, None, &out, "grid")?;
    let r = report.expect("test split has gold");
    let _ = writeln!(table, "test\t{lambda}\t{}\t{}\t{}", r.precision, r.recall, r.f_score);
    write_atomic(&out.join(GRID_FILE), &table)?;
    println!("selected lambda {lambda} (dev F {dev_f:.6}); test F {:.6}", r.f_score);
    Ok(())
}

pub fn synth(s: &Settings) -> Result<()> {
    let config = s.synth_config()?;
    let seed: u64 = s.get("seed")?;
    let out = s.required_path("out")?;
    let (corpus, params) = synth_generate(&config, seed)?;
    // Stage into a sibling directory so a failure leaves no partial corpus.
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let staging = tempfile::Builder::new().prefix(".synth").tempdir_in(parent)?;
    write_corpus(&corpus, staging.path())?;
    fs::write(staging.path().join(TRUE_MODEL_FILE), params.to_checkpoint_string())?;
    if out.exists() {
        if fs::read_dir(&out)?.next().is_some() {
            bail!("{} exists and is not empty", out.display());
        }
        fs::remove_dir(&out)?;
    }
    fs::rename(staging.keep(), &out).with_context(|| format!("moving corpus into {}", out.display()))?;
    println!("wrote {} utterances to {}", corpus.len(), out.display());
    Ok(())
}

pub fn dtw(a: &Path, b: &Path, show_path: bool) -> Result<()> {
    let x = read_feature_file(a)?;
    let y = read_feature_file(b)?;
    let w = dtw_distance(x.view(), y.view())?;
    println!("raw_cost\t{:?}", w.raw_cost);
    println!("normalized_cost\t{:?}", w.normalized_cost);
    println!("path_length\t{}", w.path.len());
    if show_path {
        for (i, j) in &w.path {
            println!("{i}\t{j}");
        }
    }
    Ok(())
}
