//! Long-span language modeling toolkit.
//!
//! Builds paragraph-level corpora from sentence text, trains LSTM,
//! LSTM-with-attention and Transformer language models with noise-contrastive
//! estimation, evaluates sentence- and paragraph-level perplexity, and
//! re-ranks session-level n-best lists while carrying model state across
//! sentence boundaries.

pub mod autograd;
pub mod container;
pub mod error;
pub mod evaluate;
pub mod ngram;
pub mod nnlm;
pub mod rerank;
pub mod synthetic;
pub mod textcorpus;
pub mod train;

pub use error::{Error, Result};
pub use evaluate::{perplexity, EvalOptions, PerplexityResult, SequenceScorer};
pub use ngram::NGramModel;
pub use nnlm::{Arch, LanguageModel, ModelConfig, ModelState, Normalization};
pub use rerank::{ContextMode, Hypothesis, RerankWeights, Session, Utterance, WerStats};
pub use textcorpus::{EncodedCorpus, Level, Paragraph, SegmentedCorpus, Sentence, Vocabulary};
pub use train::{TrainConfig, TrainReport};
