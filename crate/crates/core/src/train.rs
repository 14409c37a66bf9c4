//! Minibatch SGD training with NCE or cross-entropy loss.
//!
//! Every item is an independent sequence: the model state is fresh at the
//! item start, and items longer than `max_sequence_tokens` are truncated.
//! Per-item gradients are computed on separate tapes (in parallel when
//! `threads > 1`) and summed in item order, so results do not depend on the
//! thread count.

use std::io::Write;
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::evaluate::{map_items, perplexity, EvalOptions};
use crate::nnlm::{Arch, LanguageModel, ModelConfig, EMBEDDING, OUTPUT_BIAS};
use crate::textcorpus::EncodedCorpus;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nce,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Unigram,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Noam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub nce_noise_samples: usize,
    pub noise_distribution: NoiseDistribution,
    /// Items per update.
    pub batch_size: usize,
    pub max_sequence_tokens: usize,
    pub base_lr: f64,
    pub schedule: Schedule,
    pub warmup_steps: usize,
    pub grad_clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Nce,
            nce_noise_samples: 64,
            noise_distribution: NoiseDistribution::Unigram,
            batch_size: 4,
            max_sequence_tokens: 256,
            base_lr: 1.0,
            schedule: Schedule::Constant,
            warmup_steps: 100,
            grad_clip_norm: 1.0,
            epochs: 10,
            seed: 17,
            threads: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults with the Transformer's warm-up schedule where it applies.
    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Transformer => Self {
                schedule: Schedule::Noam,
                base_lr: 10.0,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.loss == LossKind::Nce && self.nce_noise_samples == 0 {
            return bad("nce_noise_samples must be at least 1");
        }
        if self.schedule == Schedule::Noam && self.warmup_steps == 0 {
            return bad("warmup_steps must be at least 1 with the noam schedule");
        }
        if self.batch_size == 0 || self.max_sequence_tokens < 2 {
            return bad("batch_size must be at least 1 and max_sequence_tokens at least 2");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }
}

pub fn lr_at(config: &TrainConfig, step: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::InvalidArgument("learning-rate steps start at 1".into()));
    }
    Ok(match config.schedule {
        Schedule::Constant => config.base_lr,
        Schedule::Noam => {
            let s = step as f64;
            let w = config.warmup_steps as f64;
            config.base_lr * s.powf(-0.5).min(s * w.powf(-1.5))
        }
    })
}

/// NCE objective summed over positions.
///
/// `target_logits` is `[T]`, `noise_logits` is `[T, k]`; the log noise
/// probabilities are given per target and per noise entry (row-major).
pub fn nce_loss<F: Real>(
    tape: &mut Tape<F>,
    target_logits: Var,
    noise_logits: Var,
    target_log_noise: &[f64],
    noise_log_noise: &[f64],
) -> Result<Var> {
    let shape = tape.shape(noise_logits).to_vec();
    let k = *shape.last().unwrap_or(&0);
    if k == 0 {
        return Err(Error::InvalidArgument("NCE needs at least one noise sample".into()));
    }
    if target_log_noise
        .iter()
        .chain(noise_log_noise)
        .any(|x| !x.is_finite())
    {
        return Err(Error::InvalidArgument("noise word with zero probability".into()));
    }
    let ln_k = (k as f64).ln();
    let offsets = |v: &[f64], shape: &[usize]| -> Result<Tensor<F>> {
        Tensor::new(shape.to_vec(), v.iter().map(|&x| F::of(x + ln_k)).collect())
    };
    let t_shape = tape.shape(target_logits).to_vec();
    let t_off = tape.constant(offsets(target_log_noise, &t_shape)?);
    let n_off = tape.constant(offsets(noise_log_noise, &shape)?);
    let dt = tape.sub(target_logits, t_off)?;
    let dn = tape.sub(n_off, noise_logits)?;
    let lt = tape.log_sigmoid(dt)?;
    let ln = tape.log_sigmoid(dn)?;
    let st = tape.sum(lt)?;
    let sn = tape.sum(ln)?;
    let total = tape.add(st, sn)?;
    tape.scale(total, -1.0)
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    /// Mean loss per predicted token; absent for the untrained model.
    pub train_loss: Option<f64>,
    pub heldout_ppl: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    /// Row 0 is the untrained model.
    pub epochs: Vec<EpochRecord>,
    /// Learning rate of every update.
    pub lr_trace: Vec<f64>,
    /// Gradient norm before clipping, per update.
    pub grad_norms: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch\tstep\tlr\ttrain_loss\theldout_ppl")?;
        for r in &self.epochs {
            let loss = r.train_loss.map_or_else(|| "-".to_owned(), |l| format!("{l:.6}"));
            writeln!(w, "{}\t{}\t{:.6e}\t{}\t{:.4}", r.epoch, r.step, r.lr, loss, r.heldout_ppl)?;
        }
        Ok(())
    }

    pub fn final_heldout_ppl(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |r| r.heldout_ppl)
    }
}

/// Noise probabilities over the vocabulary.
pub fn noise_distribution(kind: NoiseDistribution, corpus: &EncodedCorpus) -> Vec<f64> {
    let v = corpus.vocab_size;
    let counts = match kind {
        NoiseDistribution::Uniform => vec![1.0; v],
        NoiseDistribution::Unigram => {
            let mut c = vec![0.0; v];
            for item in &corpus.items {
                for &t in item.iter().skip(1) {
                    c[t as usize] += 1.0;
                }
            }
            c.into_iter().map(|x: f64| x.max(1.0)).collect()
        }
    };
    let total: f64 = counts.iter().sum();
    counts.into_iter().map(|c| c / total).collect()
}

/// One item's work order: tokens (already truncated), noise words, dropout seed.
struct Job<'a> {
    tokens: &'a [u32],
    noise: Vec<u32>,
    seed: u64,
}

struct ItemGrad {
    loss: f64,
    predicted: usize,
    grads: Vec<Vec<f32>>,
}

fn item_gradient(model: &LanguageModel, tc: &TrainConfig, log_noise: &[f64], job: &Job) -> Result<ItemGrad> {
    let mut tape = Tape::training(job.seed);
    let vars = model.params().attach(&mut tape, true);
    let input = &job.tokens[..job.tokens.len() - 1];
    let targets: Vec<usize> = job.tokens[1..].iter().map(|&t| t as usize).collect();
    let state = model.fresh_state();
    let (proj, _) = model.forward_on_tape(&mut tape, &vars, input, &state)?;

    let loss = match tc.loss {
        LossKind::CrossEntropy => {
            let logits = model.logits_on_tape(&mut tape, &vars, proj)?;
            let lsm = tape.log_softmax(logits)?;
            let picked = tape.pick(lsm, &targets)?;
            let s = tape.sum(picked)?;
            tape.scale(s, -1.0)?
        }
        LossKind::Nce => {
            let emb = vars[model.params().index_of(EMBEDDING).expect("embedding")];
            let bias = vars[model.params().index_of(OUTPUT_BIAS).expect("output bias")];
            let v = model.config().vocab_size;
            let bias2 = tape.reshape(bias, &[v, 1])?;
            let noise: Vec<usize> = job.noise.iter().map(|&t| t as usize).collect();
            let t_rows = tape.embedding_gather(emb, &targets)?;
            let t_dot = tape.mul(proj, t_rows)?;
            let t_dot = tape.sum_last(t_dot)?;
            let t_bias = tape.embedding_gather(bias2, &targets)?;
            let t_bias = tape.reshape(t_bias, &[targets.len()])?;
            let target_logits = tape.add(t_dot, t_bias)?;
            let n_rows = tape.embedding_gather(emb, &noise)?;
            let n_dot = tape.matmul_t(proj, n_rows)?;
            let n_bias = tape.embedding_gather(bias2, &noise)?;
            let n_bias = tape.reshape(n_bias, &[noise.len()])?;
            let noise_logits = tape.add(n_dot, n_bias)?;
            let t_ln: Vec<f64> = targets.iter().map(|&t| log_noise[t]).collect();
            let n_ln: Vec<f64> = (0..targets.len())
                .flat_map(|_| noise.iter().map(|&w| log_noise[w]))
                .collect();
            nce_loss(&mut tape, target_logits, noise_logits, &t_ln, &n_ln)?
        }
    };
    let loss_value = tape.data(loss)[0] as f64;
    let mut g = tape.backward(loss)?;
    let grads = vars
        .iter()
        .map(|&v| g.take(v).expect("parameter gradient"))
        .collect();
    Ok(ItemGrad {
        loss: loss_value,
        predicted: targets.len(),
        grads,
    })
}

fn check_corpus(config: &ModelConfig, corpus: &EncodedCorpus, what: &str) -> Result<()> {
    if corpus.vocab_size != config.vocab_size {
        return Err(Error::VocabMismatch(format!(
            "{what} corpus was encoded with {} words, model has {}",
            corpus.vocab_size, config.vocab_size
        )));
    }
    if corpus.predicted_tokens() == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

/// Initializes a model from `tc.seed`, with output biases set to the log
/// unigram distribution of the training corpus, and trains it.
pub fn train(
    config: &ModelConfig,
    tc: &TrainConfig,
    train_corpus: &EncodedCorpus,
    heldout: &EncodedCorpus,
) -> Result<(LanguageModel, TrainReport)> {
    config.validate()?;
    check_corpus(config, train_corpus, "training")?;
    let mut model = LanguageModel::init(config.clone(), tc.seed)?;
    let unigram = noise_distribution(NoiseDistribution::Unigram, train_corpus);
    for (b, p) in model.params_mut().tensor_mut(OUTPUT_BIAS).data_mut().iter_mut().zip(unigram) {
        *b = p.ln() as f32;
    }
    let report = fit(&mut model, tc, train_corpus, heldout)?;
    Ok((model, report))
}

/// Trains `model` in place.
pub fn fit(
    model: &mut LanguageModel,
    tc: &TrainConfig,
    train_corpus: &EncodedCorpus,
    heldout: &EncodedCorpus,
) -> Result<TrainReport> {
    tc.validate()?;
    let config = model.config().clone();
    check_corpus(&config, train_corpus, "training")?;
    check_corpus(&config, heldout, "held-out")?;
    let start = Instant::now();
    let eval = EvalOptions {
        threads: tc.threads,
        ..EvalOptions::default()
    };

    let noise_p = noise_distribution(tc.noise_distribution, train_corpus);
    let log_noise: Vec<f64> = noise_p.iter().map(|p| p.ln()).collect();
    let sampler = WeightedIndex::new(&noise_p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_7a11);

    let items: Vec<&[u32]> = train_corpus
        .items
        .iter()
        .filter(|t| t.len() >= 2)
        .map(|t| &t[..t.len().min(tc.max_sequence_tokens)])
        .collect();

    let mut report = TrainReport::default();
    report.epochs.push(EpochRecord {
        epoch: 0,
        step: 0,
        lr: 0.0,
        train_loss: None,
        heldout_ppl: perplexity(&*model, heldout, eval)?.perplexity,
    });

    let mut step = 0;
    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        let mut lr = 0.0;
        for batch in order.chunks(tc.batch_size) {
            step += 1;
            lr = lr_at(tc, step)?;
            let jobs: Vec<Job> = batch
                .iter()
                .map(|&i| Job {
                    tokens: items[i],
                    noise: match tc.loss {
                        LossKind::Nce => (0..tc.nce_noise_samples)
                            .map(|_| sampler.sample(&mut rng) as u32)
                            .collect(),
                        LossKind::CrossEntropy => Vec::new(),
                    },
                    seed: rng.gen(),
                })
                .collect();
            let frozen: &LanguageModel = model;
            let results = map_items(&jobs, tc.threads, |job| item_gradient(frozen, tc, &log_noise, job))?;

            let predicted: usize = results.iter().map(|r| r.predicted).sum();
            let mut grads: Vec<Vec<f32>> = model.params().tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            for r in &results {
                epoch_loss += r.loss;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            epoch_tokens += predicted;
            let inv = 1.0 / predicted as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            let norm = clip_gradients(&mut grads, tc.grad_clip_norm);
            if !norm.is_finite() {
                return Err(Error::NonFinite("gradient norm"));
            }
            let lr32 = lr as f32;
            for (t, g) in model.params_mut().tensors_mut().iter_mut().zip(&grads) {
                t.data_mut().iter_mut().zip(g).for_each(|(p, d)| *p -= lr32 * d);
            }
            report.lr_trace.push(lr);
            report.grad_norms.push(norm);
        }
        let train_loss = epoch_loss / epoch_tokens.max(1) as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let heldout_ppl = perplexity(&*model, heldout, eval)?.perplexity;
        log::info!("epoch {epoch} step {step} lr {lr:.4e} loss {train_loss:.4} heldout ppl {heldout_ppl:.3}");
        report.epochs.push(EpochRecord {
            epoch,
            step,
            lr,
            train_loss: Some(train_loss),
            heldout_ppl,
        });
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests;
