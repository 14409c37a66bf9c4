use std::sync::OnceLock;

use proptest::prelude::*;

use super::*;
use crate::nnlm::{Arch, ModelConfig};
use crate::synthetic::{TopicCorpus, TopicCorpusConfig};
use crate::textcorpus::{SegmentedCorpus, Vocabulary};
use crate::train::{train, TrainConfig};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn hyp(s: &str, am: f64) -> Hypothesis {
    Hypothesis::new(&words(s), am, 0.0)
}

fn utt(id: &str, nbest: Vec<Hypothesis>, reference: &str) -> Utterance {
    Utterance {
        id: id.into(),
        nbest,
        reference: Some(words(reference)),
    }
}

struct Trained {
    corpus: TopicCorpus,
    vocab: Vocabulary,
    model: LanguageModel,
}

/// Paragraph-level LSTM trained on the topic corpus, shared by the tests.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let corpus = TopicCorpus::new(TopicCorpusConfig::default()).unwrap();
        let paras = corpus.generate(400, 5);
        let seg = SegmentedCorpus::from_paragraphs(&paras);
        let vocab = Vocabulary::build(&seg, 1000).unwrap();
        let enc = vocab.encode_corpus(&seg);
        let held = vocab.encode_corpus(&SegmentedCorpus::from_paragraphs(&corpus.generate(40, 6)));
        let mc = ModelConfig {
            embed_dim: 32,
            hidden_dim: 64,
            num_layers: 1,
            ..ModelConfig::desk(Arch::Lstm, vocab.len())
        };
        let tc = TrainConfig {
            epochs: 8,
            ..TrainConfig::default()
        };
        let (model, _) = train(&mc, &tc, &enc, &held).unwrap();
        Trained { corpus, vocab, model }
    })
}

fn scorer(t: &Trained) -> NnRescorer<'_> {
    NnRescorer::new(&t.model, &t.vocab, Normalization::SelfNormalized).unwrap()
}

fn untrained() -> (LanguageModel, Vocabulary) {
    let vocab = Vocabulary::from_tokens(words("<unk> <s> a b c d e")).unwrap();
    let model = LanguageModel::init(ModelConfig::desk(Arch::Lstm, vocab.len()), 9).unwrap();
    (model, vocab)
}

#[test]
fn combined_score_arithmetic() {
    let h = Hypothesis::new(&["x", "y"], -1.0, -1.0);
    assert_eq!(combined_score(&h, -7.0, &RerankWeights::am_only()), -1.0);
    let all = RerankWeights {
        w_am: 1.0,
        w_fp: 1.0,
        w_nn: 1.0,
        word_insertion_penalty: 0.0,
    };
    assert_eq!(combined_score(&h, -1.0, &all), -3.0);
    let wip = RerankWeights {
        word_insertion_penalty: 0.5,
        ..all
    };
    assert_eq!(combined_score(&h, -1.0, &wip), -2.0);
}

#[test]
fn am_only_keeps_first_pass_order() {
    let (model, vocab) = untrained();
    let s = NnRescorer::new(&model, &vocab, Normalization::FullSoftmax).unwrap();
    let u = utt("u", vec![hyp("a b", -1.0), hyp("a c", -2.0), hyp("d", -2.0), hyp("", -5.0)], "a b");
    let r = rerank_utterance(&u, &s, &s.fresh_state(), &RerankWeights::am_only()).unwrap();
    let order: Vec<usize> = r.ranking.iter().map(|h| h.index).collect();
    assert_eq!(order, vec![0, 1, 2, 3]);
    // the empty hypothesis scores zero and still consumes the boundary
    assert_eq!(r.ranking[3].nn_log_prob, 0.0);
    assert_eq!(r.states[3].position_offset, 1);
}

#[test]
fn large_nn_weight_selects_the_nn_favourite() {
    let (model, vocab) = untrained();
    let s = NnRescorer::new(&model, &vocab, Normalization::FullSoftmax).unwrap();
    let u = utt("u", vec![hyp("a b", -1.0), hyp("c d", -1.5), hyp("e a", -2.0), hyp("b b", -2.5)], "a b");
    let r = rerank_utterance(&u, &s, &s.fresh_state(), &RerankWeights::am_only()).unwrap();
    let nn_best = r
        .ranking
        .iter()
        .max_by(|a, b| a.nn_log_prob.total_cmp(&b.nn_log_prob))
        .unwrap()
        .index;
    let heavy = RerankWeights {
        w_nn: 1e4,
        ..RerankWeights::am_only()
    };
    let r = rerank_utterance(&u, &s, &s.fresh_state(), &heavy).unwrap();
    assert_eq!(r.best(), nn_best);
}

#[test]
fn single_hypothesis_is_returned_with_its_state() {
    let (model, vocab) = untrained();
    let s = NnRescorer::new(&model, &vocab, Normalization::SelfNormalized).unwrap();
    let u = utt("u", vec![hyp("a b c", -1.0)], "a b c");
    let r = rerank_utterance(&u, &s, &s.fresh_state(), &RerankWeights::default()).unwrap();
    assert_eq!(r.ranking.len(), 1);
    let (nn, state) = s.score(&words("a b c"), &s.fresh_state()).unwrap();
    assert_eq!(r.ranking[0].nn_log_prob, nn);
    assert_eq!(r.states[0], state);
    let empty = Utterance {
        nbest: vec![],
        ..u
    };
    assert!(rerank_utterance(&empty, &s, &s.fresh_state(), &RerankWeights::default()).is_err());
}

#[test]
fn a_cue_word_in_the_context_reorders_the_nbest() {
    let t = trained();
    let s = scorer(t);
    let tc = &t.corpus;
    let (a, b) = (0, 1);
    let cue = |topic: usize| {
        let text = format!("{} {} the {}", tc.topic_token(topic), tc.topic_word(topic, 0), tc.topic_word(topic, 1));
        s.score(&words(&text), &s.fresh_state()).unwrap().1
    };
    let nbest = vec![
        hyp(&format!("the {} {}", tc.topic_word(a, 2), tc.topic_word(a, 3)), -1.0),
        hyp(&format!("the {} {}", tc.topic_word(b, 2), tc.topic_word(b, 3)), -1.0),
    ];
    let u = utt("u", nbest, "the");
    let w = RerankWeights::default();
    assert_eq!(rerank_utterance(&u, &s, &cue(a), &w).unwrap().best(), 0);
    assert_eq!(rerank_utterance(&u, &s, &cue(b), &w).unwrap().best(), 1);
}

fn fixture_sessions(n: usize, seed: u64) -> Vec<Session> {
    let t = trained();
    let paras = t.corpus.generate(n, seed);
    make_fixtures(
        &paras,
        &ConfusionSet::from_topics(&t.corpus),
        &FixtureConfig::default(),
        None,
        seed,
    )
    .unwrap()
}

#[test]
fn single_utterance_sessions_agree_across_modes() {
    let t = trained();
    let s = scorer(t);
    let mut session = fixture_sessions(1, 3).remove(0);
    session.utterances.truncate(1);
    let w = RerankWeights::default();
    let a = rerank_session(&session, &s, &w, ContextMode::Sentence).unwrap();
    let b = rerank_session(&session, &s, &w, ContextMode::ReferenceContext).unwrap();
    let c = rerank_session(&session, &s, &w, ContextMode::OnebestCarryover).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn context_modes_order_wer_on_cue_word_fixtures() {
    let t = trained();
    let s = scorer(t);
    let sessions = fixture_sessions(60, 21);
    let w = RerankWeights::default();
    let run = |mode| results_wer(&rerank_sessions(&sessions, &s, &w, mode, 1).unwrap()).wer();
    let sent = run(ContextMode::Sentence);
    let carry = run(ContextMode::OnebestCarryover);
    let refc = run(ContextMode::ReferenceContext);
    assert!(refc <= carry && carry <= sent, "{refc} {carry} {sent}");
    assert!(refc < sent * 0.95);
}

#[test]
fn am_only_reproduces_first_pass_wer() {
    let t = trained();
    let s = scorer(t);
    let sessions = fixture_sessions(30, 8);
    let base = results_wer(&first_pass(&sessions));
    assert!(base.errors() > 0);
    for mode in [ContextMode::Sentence, ContextMode::ReferenceContext, ContextMode::OnebestCarryover] {
        let r = rerank_sessions(&sessions, &s, &RerankWeights::am_only(), mode, 1).unwrap();
        assert_eq!(results_wer(&r), base);
    }
}

#[test]
fn carryover_survives_a_wrong_first_best() {
    let t = trained();
    let s = scorer(t);
    let mut session = fixture_sessions(1, 4).remove(0);
    // make the first utterance's 1-best a deletion-heavy hypothesis
    session.utterances[0].nbest.insert(0, hyp("", 10.0));
    let r = rerank_session(&session, &s, &RerankWeights::am_only(), ContextMode::OnebestCarryover).unwrap();
    assert!(r[0].transcript.is_empty());
    let again = rerank_session(&session, &s, &RerankWeights::default(), ContextMode::OnebestCarryover).unwrap();
    assert_eq!(again.len(), session.utterances.len());
}

#[test]
fn reference_context_needs_references() {
    let (model, vocab) = untrained();
    let s = NnRescorer::new(&model, &vocab, Normalization::SelfNormalized).unwrap();
    let session = Session {
        id: "s".into(),
        utterances: vec![Utterance {
            id: "u".into(),
            nbest: vec![hyp("a", -1.0)],
            reference: None,
        }],
    };
    assert!(rerank_session(&session, &s, &RerankWeights::default(), ContextMode::ReferenceContext).is_err());
    assert!(rerank_session(&session, &s, &RerankWeights::default(), ContextMode::Sentence).is_ok());
}

#[test]
fn reranking_is_deterministic_across_threads() {
    let t = trained();
    let s = scorer(t);
    let sessions = fixture_sessions(12, 5);
    let w = RerankWeights::default();
    let a = rerank_sessions(&sessions, &s, &w, ContextMode::OnebestCarryover, 1).unwrap();
    let b = rerank_sessions(&sessions, &s, &w, ContextMode::OnebestCarryover, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn adding_the_reference() {
    let u = utt("u", vec![hyp("a b", -1.0), hyp("a c", -2.0)], "a c");
    let same = add_reference(&u, -3.0, -1.0).unwrap();
    assert_eq!(same, u);
    let better = add_reference(&u, -0.5, -1.0).unwrap();
    assert_eq!(better.nbest.len(), 2);
    assert_eq!(better.nbest[1].am_score, -0.5);
    let u2 = utt("u", vec![hyp("a b", -1.0)], "x y");
    let grown = add_reference(&u2, -9.0, -9.0).unwrap();
    assert_eq!(grown.nbest.len(), 2);
    let sessions = vec![Session {
        id: "s".into(),
        utterances: vec![grown],
    }];
    assert_eq!(oracle_wer(&sessions).errors(), 0);
    let no_ref = Utterance { reference: None, ..u2 };
    assert!(add_reference(&no_ref, 0.0, 0.0).is_err());
}

#[test]
fn wer_examples() {
    assert_eq!(wer(&words("a b c"), &words("a b c")).errors(), 0);
    let s = wer(&words("a b c"), &words("a x c"));
    assert_eq!((s.substitutions, s.insertions, s.deletions), (1, 0, 0));
    assert!((s.wer() - 1.0 / 3.0).abs() < 1e-12);
    let d = wer(&words("a b"), &[] as &[&str]);
    assert_eq!((d.deletions, d.wer()), (2, 1.0));
    let i = wer(&[] as &[&str], &words("a"));
    assert_eq!((i.insertions, i.reference_words), (1, 0));
    assert_eq!(wer(&[] as &[&str], &[] as &[&str]).wer(), 0.0);
}

#[test]
fn corpus_wer_pools_counts() {
    // 1 error in 1 word, 0 errors in 9 words
    let pairs = vec![(words("a"), words("b")), (words("a b c d e f g h i"), words("a b c d e f g h i"))];
    let pooled = corpus_wer(&pairs);
    assert!((pooled.wer() - 0.1).abs() < 1e-12);
    let averaged = (1.0 + 0.0) / 2.0;
    assert!((pooled.wer() - averaged).abs() > 0.3);
}

#[test]
fn werr_arithmetic() {
    assert!((werr(4.63, 2.91).unwrap() - 37.1).abs() < 0.1);
    assert_eq!(werr(3.0, 3.0).unwrap(), 0.0);
    assert!(werr(0.0, 1.0).is_err());
}

#[test]
fn oov_filtering() {
    let vocab = Vocabulary::from_tokens(words("<unk> <s> a b")).unwrap();
    let mk = |refs: &[&str]| Session {
        id: "s".into(),
        utterances: refs
            .iter()
            .enumerate()
            .map(|(i, r)| utt(&format!("u{i}"), vec![hyp(r, -1.0)], r))
            .collect(),
    };
    let clean = vec![mk(&["a b", "b"])];
    let (kept, report) = oov_filter(&clean, &vocab);
    assert_eq!((kept, report), (clean.clone(), OovReport { total: 2, removed: 0 }));
    let (kept, report) = oov_filter(&[mk(&["x", "y z"])], &vocab);
    assert!(kept.is_empty());
    assert_eq!(report, OovReport { total: 2, removed: 2 });
    let (kept, report) = oov_filter(&[mk(&["a", "a x", "b b"]), mk(&["q"])], &vocab);
    assert_eq!(report.removed, 2);
    let ids: Vec<&str> = kept.iter().flat_map(|s| &s.utterances).map(|u| u.id.as_str()).collect();
    assert_eq!(ids, vec!["u0", "u2"]);
}

#[test]
fn fixtures_are_deterministic_and_sorted_by_am() {
    let a = fixture_sessions(10, 2);
    assert_eq!(a, fixture_sessions(10, 2));
    for u in a.iter().flat_map(|s| &s.utterances) {
        assert!(u.nbest.windows(2).all(|w| w[0].am_score >= w[1].am_score));
        assert!(u.nbest.iter().any(|h| Some(&h.words) == u.reference.as_ref()));
    }
}

#[test]
fn session_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let mut sessions = fixture_sessions(3, 1);
    sessions[0].utterances[0].reference = None;
    write_sessions(&path, &sessions).unwrap();
    assert_eq!(read_sessions(&path).unwrap(), sessions);

    std::fs::write(&path, "{\"session_id\":\"s\",\"utt_id\":\"u\",\"nbest\":[]}\n").unwrap();
    assert!(read_sessions(&path).is_err());
    let line = |s: &str| format!("{{\"session_id\":\"{s}\",\"utt_id\":\"u\",\"nbest\":[{{\"words\":\"a\",\"am\":-1,\"fplm\":0}}]}}\n");
    std::fs::write(&path, line("a") + &line("b") + &line("a")).unwrap();
    assert!(matches!(read_sessions(&path), Err(Error::Format(_))));

    let mut out = Vec::new();
    write_transcripts(&mut out, &first_pass(&sessions)).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 12);
}

#[test]
fn first_pass_scores_from_ngram() {
    let t = trained();
    let paras = t.corpus.generate(50, 7);
    let enc = t.vocab.encode_corpus(&SegmentedCorpus::from_paragraphs(&paras));
    let kn = NGramModel::train(&enc, 3).unwrap();
    let mut sessions = fixture_sessions(2, 7);
    fill_first_pass_scores(&mut sessions, &kn, &t.vocab).unwrap();
    let h = &sessions[0].utterances[0].nbest[0];
    let want: f64 = kn.score(&t.vocab.encode(&h.words)).unwrap().iter().sum();
    assert_eq!(h.fp_lm_score, want);
    assert!(h.fp_lm_score < 0.0);
}

fn word_seq() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..8)
        .prop_map(|v| v.into_iter().map(str::to_owned).collect())
}

proptest! {
    #[test]
    fn wer_is_symmetric(a in word_seq(), b in word_seq()) {
        let ab = wer(&a, &b);
        let ba = wer(&b, &a);
        prop_assert_eq!(ab.errors(), ba.errors());
        prop_assert_eq!(ab.substitutions, ba.substitutions);
        prop_assert_eq!(ab.insertions, ba.deletions);
        prop_assert_eq!(ab.deletions, ba.insertions);
        prop_assert!(ab.errors() <= a.len().max(b.len()));
    }

    #[test]
    fn shifting_nn_scores_keeps_the_best(
        am in prop::collection::vec(-20.0f64..0.0, 1..8),
        nn in prop::collection::vec(-20.0f64..0.0, 8),
        shift in -50.0f64..50.0,
    ) {
        let hyps: Vec<Hypothesis> = am.iter().map(|&a| Hypothesis::new(&["w"], a, -1.0)).collect();
        let w = RerankWeights::default();
        let best = |d: f64| {
            let mut idx: Vec<usize> = (0..hyps.len()).collect();
            idx.sort_by(|&i, &j| {
                combined_score(&hyps[j], nn[j] + d, &w)
                    .total_cmp(&combined_score(&hyps[i], nn[i] + d, &w))
                    .then(i.cmp(&j))
            });
            idx[0]
        };
        prop_assert_eq!(best(0.0), best(shift));
    }
}
