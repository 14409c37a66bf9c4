use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{grad_check, Tensor};
use crate::evaluate::mean_abs_log_partition;
use crate::synthetic::{TopicCorpus, TopicCorpusConfig};
use crate::textcorpus::{paragraphs_to_sentences, SegmentedCorpus, Vocabulary};

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Train and held-out corpora drawn from the topic generator.
fn toy(paragraphs: usize, paragraph_level: bool) -> (EncodedCorpus, EncodedCorpus) {
    let tc = TopicCorpus::new(TopicCorpusConfig::default()).unwrap();
    let train = tc.generate(paragraphs, 1);
    let held = tc.generate(paragraphs / 4, 2);
    let vocab = Vocabulary::build(&SegmentedCorpus::from_paragraphs(&train), 1000).unwrap();
    let seg = |ps: &[crate::textcorpus::Paragraph]| {
        if paragraph_level {
            SegmentedCorpus::from_paragraphs(ps)
        } else {
            paragraphs_to_sentences(ps, false)
        }
    };
    (vocab.encode_corpus(&seg(&train)), vocab.encode_corpus(&seg(&held)))
}

fn small(arch: Arch, v: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        hidden_dim: 64,
        num_layers: 1,
        num_heads: 2,
        ff_dim: 128,
        ..ModelConfig::desk(arch, v)
    }
}

fn quick(loss: LossKind, epochs: usize) -> TrainConfig {
    TrainConfig {
        loss,
        epochs,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn noam_schedule_shape() {
    let c = TrainConfig {
        schedule: Schedule::Noam,
        base_lr: 2.0,
        warmup_steps: 16,
        ..TrainConfig::default()
    };
    assert!((lr_at(&c, 16).unwrap() - 2.0 / 4.0).abs() < 1e-12);
    for s in 1..16 {
        assert!(lr_at(&c, s).unwrap() < lr_at(&c, s + 1).unwrap());
    }
    assert!(lr_at(&c, 64).unwrap() < lr_at(&c, 16).unwrap());
    assert!(lr_at(&c, 0).is_err());
    let constant = TrainConfig::default();
    assert!((1..50).all(|s| lr_at(&constant, s).unwrap() == constant.base_lr));
}

fn nce_value(target: &[f64], noise: &[f64], t_ln: &[f64], n_ln: &[f64], k: usize) -> f64 {
    let mut tape: Tape<f64> = Tape::new();
    let t = tape.leaf(Tensor::vector(target.to_vec()), false);
    let n = tape.leaf(Tensor::matrix(target.len(), k, noise.to_vec()).unwrap(), false);
    let l = nce_loss(&mut tape, t, n, t_ln, n_ln).unwrap();
    tape.data(l)[0]
}

#[test]
fn nce_hand_computed_single_position() {
    // k = 1, uniform noise over 2 words: log(k p) = ln 0.5
    let ln_half = 0.5f64.ln();
    let got = nce_value(&[1.0], &[-0.5], &[ln_half], &[ln_half], 1);
    let want = softplus(-(1.0 - ln_half)) + softplus(-0.5 - ln_half);
    assert!((got - want).abs() < 1e-6);
    assert!((got - 0.963224).abs() < 1e-6);
}

#[test]
fn nce_balance_point() {
    let k = 4;
    let ln_p = (0.1f64).ln();
    let balance = ln_p + (k as f64).ln();
    let noise = [-3.0, 0.5, 1.0, -0.2];
    let got = nce_value(&[balance], &noise, &[ln_p], &[ln_p; 4], k);
    let noise_part: f64 = noise.iter().map(|&x| softplus(x - balance)).sum();
    assert!((got - noise_part - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn nce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (t, k) in [(1, 1), (2, 3), (4, 2), (3, 5), (6, 4)] {
        let t_ln: Vec<f64> = (0..t).map(|_| rng.gen_range(-5.0..-0.5)).collect();
        let n_ln: Vec<f64> = (0..t * k).map(|_| rng.gen_range(-5.0..-0.5)).collect();
        let inputs = [
            Tensor::vector((0..t).map(|_| rng.gen_range(-2.0..2.0)).collect()),
            Tensor::matrix(t, k, (0..t * k).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap(),
        ];
        let report = grad_check(
            |tape, v| nce_loss(tape, v[0], v[1], &t_ln, &n_ln),
            &inputs,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "shape ({t},{k}): {}", report.max_rel_error);
    }
}

#[test]
fn nce_rejects_bad_noise() {
    let mut tape: Tape<f64> = Tape::new();
    let t = tape.leaf(Tensor::vector(vec![0.0]), false);
    let empty = tape.leaf(Tensor::new(vec![1, 0], vec![]).unwrap(), false);
    assert!(nce_loss(&mut tape, t, empty, &[-1.0], &[]).is_err());
    let n = tape.leaf(Tensor::matrix(1, 1, vec![0.0]).unwrap(), false);
    assert!(nce_loss(&mut tape, t, n, &[-1.0], &[f64::NEG_INFINITY]).is_err());
}

#[test]
fn clipping_caps_the_norm() {
    let mut g = vec![vec![3.0f32, 0.0], vec![4.0]];
    assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
    let after: f64 = g.iter().flatten().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    assert!((after - 1.0).abs() < 1e-6);
    let mut small = vec![vec![0.1f32]];
    clip_gradients(&mut small, 1.0);
    assert_eq!(small[0][0], 0.1);
}

#[test]
fn unigram_noise_has_floor_and_sums_to_one() {
    let (train, _) = toy(8, true);
    let p = noise_distribution(NoiseDistribution::Unigram, &train);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|&x| x > 0.0));
    let u = noise_distribution(NoiseDistribution::Uniform, &train);
    assert!(u.iter().all(|&x| (x - u[0]).abs() < 1e-15));
}

#[test]
fn training_reduces_heldout_perplexity() {
    let (train, held) = toy(50, false);
    assert_eq!(train.len(), 200);
    let (_, report) = super::train(&small(Arch::Lstm, train.vocab_size), &quick(LossKind::Nce, 5), &train, &held).unwrap();
    assert_eq!(report.epochs.len(), 6);
    assert!(report.final_heldout_ppl() < report.epochs[0].heldout_ppl);
    assert!(report.epochs[1..].iter().all(|e| e.train_loss.unwrap().is_finite()));
    assert!(report.grad_norms.iter().all(|n| n.is_finite()));
    assert_eq!(report.lr_trace.len(), report.epochs.last().unwrap().step);
    let mut tsv = Vec::new();
    report.write_tsv(&mut tsv).unwrap();
    assert_eq!(String::from_utf8(tsv).unwrap().lines().count(), 7);
}

#[test]
fn same_seed_same_parameters_any_thread_count() {
    let (train, held) = toy(12, true);
    for arch in [Arch::Lstm, Arch::Lstma, Arch::Transformer] {
        let mc = ModelConfig {
            dropout: 0.1,
            ..small(arch, train.vocab_size)
        };
        let tc = quick(LossKind::Nce, 2);
        let (a, _) = super::train(&mc, &tc, &train, &held).unwrap();
        let (b, _) = super::train(&mc, &tc, &train, &held).unwrap();
        assert_eq!(a.params(), b.params(), "{arch}");
        let par = TrainConfig { threads: 3, ..tc };
        let (c, _) = super::train(&mc, &par, &train, &held).unwrap();
        assert_eq!(a.params(), c.params(), "{arch}");
    }
}

#[test]
fn both_losses_train_to_similar_perplexity() {
    let (train, held) = toy(50, true);
    let mc = small(Arch::Lstm, train.vocab_size);
    let (_, ce) = super::train(&mc, &quick(LossKind::CrossEntropy, 6), &train, &held).unwrap();
    let (nce_model, nce) = super::train(&mc, &quick(LossKind::Nce, 6), &train, &held).unwrap();
    for r in [&ce, &nce] {
        assert!(r.final_heldout_ppl() < r.epochs[0].heldout_ppl);
    }
    let ratio = ce.final_heldout_ppl() / nce.final_heldout_ppl();
    assert!((1.0 / 1.3..1.3).contains(&ratio), "ce {} nce {}", ce.final_heldout_ppl(), nce.final_heldout_ppl());
    let z = mean_abs_log_partition(&nce_model, &held).unwrap();
    assert!(z < 0.5, "mean |log Z| = {z}");
}

#[test]
fn training_forward_matches_fresh_state_scoring() {
    let (train, held) = toy(12, true);
    let tc = TrainConfig {
        max_sequence_tokens: 12,
        ..quick(LossKind::Nce, 1)
    };
    let (model, _) = super::train(&small(Arch::Transformer, train.vocab_size), &tc, &train, &held).unwrap();
    for item in &train.items[..4] {
        let tokens = &item[..item.len().min(tc.max_sequence_tokens)];
        let input = &tokens[..tokens.len() - 1];
        let mut tape = Tape::training(99);
        let vars = model.params().attach(&mut tape, true);
        let (proj, _) = model
            .forward_on_tape(&mut tape, &vars, input, &model.fresh_state())
            .unwrap();
        let (steps, _) = model.forward(input, &model.fresh_state()).unwrap();
        let eval: Vec<f32> = steps.iter().flat_map(|s| s.projected.clone()).collect();
        assert_eq!(tape.data(proj), &eval[..]);
    }
}

#[test]
fn rejects_mismatched_or_empty_corpora() {
    let (train, held) = toy(4, true);
    let mc = small(Arch::Lstm, train.vocab_size);
    let other = EncodedCorpus {
        vocab_size: train.vocab_size + 1,
        ..held.clone()
    };
    assert!(matches!(
        super::train(&mc, &quick(LossKind::Nce, 1), &train, &other),
        Err(Error::VocabMismatch(_))
    ));
    let empty = EncodedCorpus {
        items: vec![],
        ..train.clone()
    };
    assert!(matches!(
        super::train(&mc, &quick(LossKind::Nce, 1), &empty, &held),
        Err(Error::EmptyCorpus)
    ));
    let bad = TrainConfig {
        nce_noise_samples: 0,
        ..TrainConfig::default()
    };
    assert!(super::train(&mc, &bad, &train, &held).is_err());
}
