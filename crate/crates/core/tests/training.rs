mod support;

use spanalign::evalkit::{evaluate_alignments, naive_baseline};
use spanalign::model::{sentence_log_score, word_widths, Alignment, ModelParams, WordAlignment};
use spanalign::segmentation::{candidates_for_pair, CandidateSpans, Span};
use spanalign::trainer::{e_step, initialize, prepare, resume_with, train, train_with};
use spanalign::{synth_generate, Corpus, SynthConfig, TrainConfig};

fn gold_alignment(corpus: &Corpus, params: &ModelParams) -> Vec<Alignment> {
    let gold = corpus.gold.as_ref().unwrap();
    corpus
        .pairs
        .iter()
        .map(|p| {
            let g = &gold[&p.utt_id];
            let words = p
                .target_words
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let frames: Vec<usize> = g.links.iter().filter(|l| l.0 == i).map(|l| l.1 + 1).collect();
                    let cluster = params.inventory.clusters_of(w).unwrap().next();
                    WordAlignment { cluster, span: Span::new(frames[0], *frames.last().unwrap()), log_score: 0.0 }
                })
                .collect();
            Alignment { utt_id: p.utt_id.clone(), words }
        })
        .collect()
}

fn crisp_config() -> SynthConfig {
    SynthConfig { phone_min_len: 1, phone_max_len: 1, ..Default::default() }
}

#[test]
fn true_prototypes_recover_gold_spans() {
    let (corpus, truth) = synth_generate(&crisp_config(), 3).unwrap();
    let config = TrainConfig { k: 1, ..Default::default() };
    let (candidates, widths) = prepare(&corpus, &config.segmentation).unwrap();
    let gold = gold_alignment(&corpus, &truth);
    let out = e_step(&corpus, &truth, &candidates, &widths, &gold).unwrap();
    for (got, want) in out.iter().zip(&gold) {
        let spans: Vec<Span> = got.words.iter().map(|w| w.span).collect();
        let expected: Vec<Span> = want.words.iter().map(|w| w.span).collect();
        assert_eq!(spans, expected, "{}", got.utt_id);
    }
}

#[test]
fn gold_scores_at_least_every_candidate_alignment() {
    let cfg = SynthConfig { vocab_size: 3, sentences: 4, max_words: 2, proto_min_len: 6, proto_max_len: 9, ..crisp_config() };
    let (corpus, truth) = synth_generate(&cfg, 8).unwrap();
    let gold = gold_alignment(&corpus, &truth);
    let seg = TrainConfig::default().segmentation;
    for (pair, g) in corpus.pairs.iter().zip(&gold) {
        let cands = candidates_for_pair(pair, &seg);
        let mu = word_widths(pair).unwrap();
        let gold_score = sentence_log_score(g, pair, &truth, &cands, &mu).unwrap();
        assert!(gold_score.is_finite());
        // Every assignment of candidate spans to the words, exhaustively.
        let l = pair.num_words();
        let n = cands.len();
        for code in 0..n.pow(l as u32) {
            let mut c = code;
            let mut alt = g.clone();
            for w in alt.words.iter_mut() {
                w.span = cands.spans()[c % n];
                c /= n;
            }
            let s = sentence_log_score(&alt, pair, &truth, &cands, &mu).unwrap();
            assert!(s <= gold_score + 1e-9, "{}: {s} > {gold_score}", pair.utt_id);
        }
    }
}

#[test]
fn candidate_order_does_not_matter() {
    let (corpus, _) = synth_generate(&SynthConfig { sentences: 10, ..Default::default() }, 1).unwrap();
    let config = TrainConfig::default();
    let state = initialize(&corpus, &config).unwrap();
    let reversed: Vec<CandidateSpans> =
        state.candidates.iter().map(|c| CandidateSpans::new(c.spans().iter().rev().copied())).collect();
    let a = e_step(&corpus, &state.params, &state.candidates, &state.widths, &state.assignments).unwrap();
    let b = e_step(&corpus, &state.params, &reversed, &state.widths, &state.assignments).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let (corpus, _) = synth_generate(&SynthConfig { sentences: 20, noise_std: 0.1, ..Default::default() }, 4).unwrap();
    let corpus = corpus.normalized();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&corpus, &TrainConfig::default()).unwrap())
    };
    let (one, many) = (run(1), run(4));
    assert_eq!(one.assignments, many.assignments);
    assert_eq!(one.params, many.params);
}

#[test]
fn e_step_never_lowers_a_word_score() {
    // Under fixed parameters, the E-step picks the per-word maximum, so every
    // word's score is at least that of its previous assignment.
    let (corpus, _) = synth_generate(&SynthConfig { sentences: 15, noise_std: 0.2, ..Default::default() }, 9).unwrap();
    let corpus = corpus.normalized();
    let config = TrainConfig::default();
    let state = initialize(&corpus, &config).unwrap();
    let next = e_step(&corpus, &state.params, &state.candidates, &state.widths, &state.assignments).unwrap();
    for ((pair, before), (after, (cands, mu))) in
        corpus.pairs.iter().zip(&state.assignments).zip(next.iter().zip(state.candidates.iter().zip(&state.widths)))
    {
        for i in 0..pair.num_words() {
            let score_of = |w: &WordAlignment| {
                spanalign::model::word_log_score(i + 1, w.cluster.unwrap(), w.span, pair, &state.params, cands, mu).unwrap()
            };
            assert!(score_of(&after.words[i]) >= score_of(&before.words[i]) - 1e-9);
        }
    }
}

#[test]
fn resume_from_checkpoint_matches_continuing() {
    let (corpus, _) = synth_generate(&SynthConfig { sentences: 12, noise_std: 0.1, ..Default::default() }, 2).unwrap();
    let corpus = corpus.normalized();
    let config = TrainConfig { iterations: 2, ..Default::default() };
    let mut first: Option<ModelParams> = None;
    let full = train_with(&corpus, &config, |st| {
        if st.iteration_log.len() == 1 {
            first = Some(ModelParams::from_checkpoint_str(&st.params.to_checkpoint_string()).unwrap());
        }
        Ok(())
    })
    .unwrap();
    let resumed = resume_with(&corpus, &TrainConfig { iterations: 1, ..config }, first.unwrap(), |_| Ok(())).unwrap();
    assert_eq!(resumed.params, full.params);
}

#[test]
fn noisy_training_beats_proportional_baseline() {
    let (corpus, _) =
        synth_generate(&SynthConfig { sentences: 30, noise_std: 0.1, reorder_prob: 0.1, ..Default::default() }, 6).unwrap();
    let corpus = corpus.normalized();
    let state = train(&corpus, &TrainConfig::default()).unwrap();
    let gold = corpus.gold.as_ref().unwrap();
    let model = evaluate_alignments(&state.assignments, &corpus.pairs, gold);
    let naive: Vec<Alignment> = corpus.pairs.iter().map(|p| naive_baseline(p).unwrap()).collect();
    let base = evaluate_alignments(&naive, &corpus.pairs, gold);
    assert!(model.f_score > base.f_score, "{} vs {}", model.f_score, base.f_score);
}
