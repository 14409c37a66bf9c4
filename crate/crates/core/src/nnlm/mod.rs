//! Neural language models: LSTM, LSTM with multi-head attention over its
//! hidden states, and a Transformer with relative position attention.
//!
//! All three share a tied input/output embedding and a final projection to
//! the embedding dimension. Scoring is resumable: every forward call consumes
//! a [`ModelState`] and returns the state after the last token, so a sentence
//! can be scored in the context of the sentences before it.

mod checkpoint;
mod layers;
mod params;
mod state;

pub use params::{lstm_param_count, ParamStore, EMBEDDING, OUTPUT_BIAS};
pub use state::{ModelState, RowBuffer};

use serde::{Deserialize, Serialize};

use crate::autograd::{log_sum_exp, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lstm,
    Lstma,
    Transformer,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Lstm => "lstm",
            Arch::Lstma => "lstma",
            Arch::Transformer => "transformer",
        }
    }

    pub fn has_attention(self) -> bool {
        !matches!(self, Arch::Lstm)
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Arch::Lstm),
            "lstma" => Ok(Arch::Lstma),
            "transformer" | "trans" => Ok(Arch::Transformer),
            _ => Err(Error::Parse(format!("unknown architecture {s:?}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// LSTM state size, or the Transformer model width.
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    /// Number of most recent positions (including the current one) visible to
    /// attention. `None` is unlimited.
    pub attention_span: Option<usize>,
    pub dropout: f64,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// Laptop-scale defaults: embed 64, hidden 128, 2 layers.
    pub fn desk(arch: Arch, vocab_size: usize) -> Self {
        Self {
            arch,
            vocab_size,
            embed_dim: 64,
            hidden_dim: 128,
            num_layers: 2,
            num_heads: match arch {
                Arch::Lstma => 8,
                _ => 2,
            },
            ff_dim: 256,
            attention_span: None,
            dropout: 0.0,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return bad("embed_dim, hidden_dim and num_layers must be at least 1".into());
        }
        if self.arch.has_attention() && (self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads)) {
            return bad(format!(
                "num_heads {} must divide hidden_dim {}",
                self.num_heads, self.hidden_dim
            ));
        }
        if self.arch == Arch::Transformer && self.ff_dim == 0 {
            return bad("ff_dim must be at least 1".into());
        }
        if self.attention_span == Some(0) {
            return bad("attention_span must be at least 1".into());
        }
        if !self.tie_embeddings {
            return bad("untied embeddings are not supported".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw target logit, implicit log-partition of zero.
    SelfNormalized,
    FullSoftmax,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_normalized" => Ok(Normalization::SelfNormalized),
            "full_softmax" => Ok(Normalization::FullSoftmax),
            _ => Err(Error::Parse(format!("unknown normalization {s:?}"))),
        }
    }
}

/// Per-position model output.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f32>,
    /// Vector fed to the tied output layer.
    pub projected: Vec<f32>,
}

/// A configured model with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageModel {
    config: ModelConfig,
    params: ParamStore,
}

impl LanguageModel {
    pub fn new(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        params.check_against(&ParamStore::zeros(&config)?)?;
        Ok(Self { config, params })
    }

    /// Uniform(−a, a) initialization with a = 1/√fan_in.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::zeros(&config)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn fresh_state(&self) -> ModelState {
        ModelState::fresh(&self.config)
    }

    /// Copy of this model with a different inference-time attention span.
    pub fn with_attention_span(&self, span: Option<usize>) -> Result<Self> {
        if !self.config.arch.has_attention() {
            return Err(Error::ArchMismatch {
                expected: "lstma or transformer".into(),
                got: self.config.arch.to_string(),
            });
        }
        let mut m = self.clone();
        m.config.attention_span = span;
        m.config.validate()?;
        Ok(m)
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::SequenceTooShort { need: 1, got: 0 });
        }
        let v = self.config.vocab_size;
        match tokens.iter().find(|&&t| t as usize >= v) {
            Some(&t) => Err(Error::IdOutOfRange { id: t as usize, size: v }),
            None => Ok(()),
        }
    }

    /// Builds the forward graph on `tape` and returns the projected outputs
    /// `[T, embed_dim]` together with the state after the last token.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<f32>,
        vars: &[Var],
        tokens: &[u32],
        state: &ModelState,
    ) -> Result<(Var, ModelState)> {
        self.check_tokens(tokens)?;
        state.check_compatible(&self.config)?;
        let p = params::Bound::new(&self.params, vars);
        match self.config.arch {
            Arch::Lstm => layers::lstm_forward(&self.config, tape, &p, tokens, state),
            Arch::Lstma => layers::lstma_forward(&self.config, tape, &p, tokens, state),
            Arch::Transformer => layers::transformer_forward(&self.config, tape, &p, tokens, state),
        }
    }

    /// Full logits `[T, vocab]` through the tied output layer.
    pub fn logits_on_tape(&self, tape: &mut Tape<f32>, vars: &[Var], projected: Var) -> Result<Var> {
        let p = params::Bound::new(&self.params, vars);
        let l = tape.matmul_t(projected, p.get(params::EMBEDDING))?;
        tape.add(l, p.get(params::OUTPUT_BIAS))
    }

    /// Forward pass returning per-position logits and the new state.
    pub fn forward(&self, tokens: &[u32], state: &ModelState) -> Result<(Vec<StepOutput>, ModelState)> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let (proj, next) = self.forward_on_tape(&mut tape, &vars, tokens, state)?;
        let logits = self.logits_on_tape(&mut tape, &vars, proj)?;
        let v = self.config.vocab_size;
        let e = self.config.embed_dim;
        let out = tape
            .data(logits)
            .chunks(v)
            .zip(tape.data(proj).chunks(e))
            .map(|(l, p)| StepOutput {
                logits: l.to_vec(),
                projected: p.to_vec(),
            })
            .collect();
        Ok((out, next))
    }

    /// Consumes `tokens` without producing scores.
    pub fn advance(&self, tokens: &[u32], state: &ModelState) -> Result<ModelState> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        Ok(self.forward_on_tape(&mut tape, &vars, tokens, state)?.1)
    }

    /// Log-probabilities of `tokens[1..]` given `tokens[0]` and `state`.
    pub fn score_sequence(
        &self,
        tokens: &[u32],
        state: &ModelState,
        normalization: Normalization,
    ) -> Result<(Vec<f64>, ModelState)> {
        if tokens.len() < 2 {
            return Err(Error::SequenceTooShort {
                need: 2,
                got: tokens.len(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let (proj, next) = self.forward_on_tape(&mut tape, &vars, tokens, state)?;
        let targets = &tokens[1..];
        let scores = match normalization {
            Normalization::FullSoftmax => {
                let logits = self.logits_on_tape(&mut tape, &vars, proj)?;
                let v = self.config.vocab_size;
                tape.data(logits)
                    .chunks(v)
                    .zip(targets)
                    .map(|(row, &t)| {
                        let row: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                        row[t as usize] - log_sum_exp(&row)
                    })
                    .collect()
            }
            Normalization::SelfNormalized => {
                let emb = self.params.tensor(params::EMBEDDING);
                let bias = self.params.tensor(params::OUTPUT_BIAS).data();
                let e = self.config.embed_dim;
                tape.data(proj)
                    .chunks(e)
                    .zip(targets)
                    .map(|(p, &t)| {
                        let w = emb.row(t as usize);
                        let dot: f32 = p.iter().zip(w).map(|(a, b)| a * b).sum();
                        (dot + bias[t as usize]) as f64
                    })
                    .collect()
            }
        };
        Ok((scores, next))
    }
}
