//! Shared fixtures for the benchmarks.

use longspan_core::synthetic::{TopicCorpus, TopicCorpusConfig};
use longspan_core::{EncodedCorpus, SegmentedCorpus, Vocabulary};

/// A synthetic paragraph corpus and its vocabulary.
pub fn corpus(paragraphs: usize, seed: u64) -> (Vocabulary, EncodedCorpus) {
    let tc = TopicCorpus::new(TopicCorpusConfig::default()).expect("default config is valid");
    let text = SegmentedCorpus::from_paragraphs(&tc.generate(paragraphs, seed));
    let vocab = Vocabulary::build(&text, 10_000).expect("corpus is not empty");
    let encoded = vocab.encode_corpus(&text);
    (vocab, encoded)
}

/// Items of `corpus` concatenated, cycled and cut to exactly `len` tokens.
pub fn sequence(corpus: &EncodedCorpus, len: usize) -> Vec<u32> {
    corpus.items.iter().flatten().copied().cycle().take(len).collect()
}
