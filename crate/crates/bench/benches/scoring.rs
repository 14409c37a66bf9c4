use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use longspan_bench::{corpus, sequence};
use longspan_core::rerank::wer;
use longspan_core::{Arch, LanguageModel, ModelConfig, NGramModel, Normalization};

fn forward(c: &mut Criterion) {
    let (vocab, data) = corpus(50, 1);
    let tokens = sequence(&data, 128);
    let mut group = c.benchmark_group("score_128_tokens");
    for arch in [Arch::Lstm, Arch::Lstma, Arch::Transformer] {
        let model = LanguageModel::init(ModelConfig::desk(arch, vocab.len()), 3).unwrap();
        let state = model.fresh_state();
        for norm in [Normalization::SelfNormalized, Normalization::FullSoftmax] {
            group.bench_with_input(BenchmarkId::new(arch.name(), format!("{norm:?}")), &tokens, |b, t| {
                b.iter(|| model.score_sequence(black_box(t), &state, norm).unwrap())
            });
        }
    }
    group.finish();
}

fn ngram(c: &mut Criterion) {
    let (_, data) = corpus(400, 2);
    c.bench_function("kn4_train_400_paragraphs", |b| b.iter(|| NGramModel::train(black_box(&data), 4).unwrap()));
    let model = NGramModel::train(&data, 4).unwrap();
    let tokens = sequence(&data, 1000);
    c.bench_function("kn4_score_1000_tokens", |b| b.iter(|| model.score(black_box(&tokens)).unwrap()));
}

fn word_error_rate(c: &mut Criterion) {
    let reference: Vec<String> = (0..60).map(|i| format!("w{}", i % 17)).collect();
    let hypothesis: Vec<String> = (0..55).map(|i| format!("w{}", (i * 3) % 17)).collect();
    c.bench_function("wer_60_words", |b| b.iter(|| wer(black_box(&reference), black_box(&hypothesis))));
}

criterion_group!(benches, forward, ngram, word_error_rate);
criterion_main!(benches);
