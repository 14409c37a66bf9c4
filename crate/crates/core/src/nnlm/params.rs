use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Arch, ModelConfig};
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const EMBEDDING: &str = "embedding";
pub const OUTPUT_BIAS: &str = "output.bias";

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform(−a, a), a = 1/√fan_in with fan_in the leading dimension.
    FanIn,
    /// Uniform(−a, a), a = 1/√cols (the tied output layer's fan-in).
    Embedding,
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> Spec {
    Spec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn lstm_specs(c: &ModelConfig, out: &mut Vec<Spec>) {
    let h = c.hidden_dim;
    for l in 0..c.num_layers {
        let input = if l == 0 { c.embed_dim } else { h };
        out.push(spec(format!("lstm.{l}.w_ih"), &[input, 4 * h], Init::FanIn));
        out.push(spec(format!("lstm.{l}.w_hh"), &[h, 4 * h], Init::FanIn));
        out.push(spec(format!("lstm.{l}.bias"), &[4 * h], Init::Zeros));
    }
}

fn specs(c: &ModelConfig) -> Vec<Spec> {
    let (v, e, h) = (c.vocab_size, c.embed_dim, c.hidden_dim);
    let mut out = vec![
        spec(EMBEDDING, &[v, e], Init::Embedding),
        spec(OUTPUT_BIAS, &[v], Init::Zeros),
    ];
    match c.arch {
        Arch::Lstm => {
            lstm_specs(c, &mut out);
            out.push(spec("proj.weight", &[h, e], Init::FanIn));
        }
        Arch::Lstma => {
            lstm_specs(c, &mut out);
            for n in ["query", "key", "value", "output"] {
                out.push(spec(format!("attn.{n}"), &[h, h], Init::FanIn));
            }
            out.push(spec("proj.weight", &[2 * h, e], Init::FanIn));
        }
        Arch::Transformer => {
            out.push(spec("input.weight", &[e, h], Init::FanIn));
            out.push(spec("input.bias", &[h], Init::Zeros));
            for l in 0..c.num_layers {
                let p = |n: &str| format!("layer.{l}.{n}");
                out.push(spec(p("ln1.gain"), &[h], Init::Ones));
                out.push(spec(p("ln1.bias"), &[h], Init::Zeros));
                for n in ["query", "key", "value", "position", "output"] {
                    out.push(spec(p(&format!("attn.{n}")), &[h, h], Init::FanIn));
                }
                out.push(spec(p("attn.content_bias"), &[h], Init::Zeros));
                out.push(spec(p("attn.position_bias"), &[h], Init::Zeros));
                out.push(spec(p("ln2.gain"), &[h], Init::Ones));
                out.push(spec(p("ln2.bias"), &[h], Init::Zeros));
                out.push(spec(p("ff.w1"), &[h, c.ff_dim], Init::FanIn));
                out.push(spec(p("ff.b1"), &[c.ff_dim], Init::Zeros));
                out.push(spec(p("ff.w2"), &[c.ff_dim, h], Init::FanIn));
                out.push(spec(p("ff.b2"), &[h], Init::Zeros));
            }
            out.push(spec("final_ln.gain", &[h], Init::Ones));
            out.push(spec("final_ln.bias", &[h], Init::Zeros));
            out.push(spec("proj.weight", &[h, e], Init::FanIn));
        }
    }
    out.push(spec("proj.bias", &[e], Init::Zeros));
    out
}

/// Closed-form parameter count of an LSTM language model with tied
/// embeddings and a final projection to the embedding dimension.
pub fn lstm_param_count(vocab: usize, embed: usize, hidden: usize, layers: usize) -> usize {
    let embedding = vocab * embed + vocab;
    let first = embed * 4 * hidden + hidden * 4 * hidden + 4 * hidden;
    let rest = (layers - 1) * (hidden * 4 * hidden + hidden * 4 * hidden + 4 * hidden);
    embedding + first + rest + hidden * embed + embed
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn from_named(named: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        let mut index = HashMap::new();
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for (i, (n, t)) in named.into_iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate parameter {n}")));
            }
            names.push(n);
            tensors.push(t);
        }
        Ok(Self {
            names,
            tensors,
            index,
        })
    }

    fn build(c: &ModelConfig, mut draw: impl FnMut(&Spec) -> Vec<f32>) -> Result<Self> {
        let named = specs(c)
            .into_iter()
            .map(|s| {
                let data = draw(&s);
                Tensor::new(s.shape.clone(), data).map(|t| (s.name, t))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_named(named)
    }

    pub fn zeros(c: &ModelConfig) -> Result<Self> {
        Self::build(c, |s| vec![0.0; s.shape.iter().product()])
    }

    pub fn init(c: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(c, |s| {
            let n: usize = s.shape.iter().product();
            let bound = match s.init {
                Init::Zeros => return vec![0.0; n],
                Init::Ones => return vec![1.0; n],
                Init::FanIn => 1.0 / (s.shape[0] as f32).sqrt(),
                Init::Embedding => 1.0 / (s.shape[1] as f32).sqrt(),
            };
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Panics on unknown names; parameter names are fixed by the architecture.
    pub fn tensor(&self, name: &str) -> &Tensor<f32> {
        &self.tensors[self.index[name]]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Tensor<f32> {
        let i = self.index[name];
        &mut self.tensors[i]
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on `tape` as a leaf, in store order.
    pub fn attach(&self, tape: &mut Tape<f32>, requires_grad: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect()
    }

    /// Same names, order and shapes as `template`.
    pub fn check_against(&self, template: &ParamStore) -> Result<()> {
        if self.names != template.names {
            return Err(Error::Format(format!(
                "parameter names do not match the architecture (expected {}, got {})",
                template.names.len(),
                self.names.len()
            )));
        }
        for (n, (a, b)) in self.names.iter().zip(self.tensors.iter().zip(&template.tensors)) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!(
                    "parameter {n} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Parameter vars on a tape, looked up by name.
pub(crate) struct Bound<'a> {
    store: &'a ParamStore,
    vars: &'a [Var],
}

impl<'a> Bound<'a> {
    pub(crate) fn new(store: &'a ParamStore, vars: &'a [Var]) -> Self {
        Self { store, vars }
    }

    pub(crate) fn get(&self, name: &str) -> Var {
        self.vars[self.store.index[name]]
    }
}
