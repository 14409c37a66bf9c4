//! Perplexity over encoded corpora, evaluation grids and attention-span
//! sweeps. The model state is reset at the start of every corpus item.

use std::io::Write;

use rayon::prelude::*;

use crate::autograd::log_sum_exp;
use crate::error::{Error, Result};
use crate::ngram::NGramModel;
use crate::nnlm::{LanguageModel, Normalization};
use crate::textcorpus::{EncodedCorpus, BOUNDARY_ID};

/// Anything that assigns natural-log probabilities to `tokens[1..]` of one
/// item scored from a fresh state.
pub trait SequenceScorer: Sync {
    fn vocab_size(&self) -> usize;
    fn score_item(&self, tokens: &[u32]) -> Result<Vec<f64>>;
}

impl SequenceScorer for LanguageModel {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn score_item(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        if tokens.len() < 2 {
            return Ok(Vec::new());
        }
        Ok(self
            .score_sequence(tokens, &self.fresh_state(), Normalization::FullSoftmax)?
            .0)
    }
}

impl SequenceScorer for NGramModel {
    fn vocab_size(&self) -> usize {
        NGramModel::vocab_size(self)
    }

    fn score_item(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        self.score(tokens)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    /// Count interior `<s>` predictions. The leading `<s>` is never predicted.
    pub count_boundary_tokens: bool,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            count_boundary_tokens: true,
            threads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerplexityResult {
    pub perplexity: f64,
    pub tokens: usize,
    pub total_log_prob: f64,
}

/// Runs `f` over every item, in parallel when `threads > 1`, and returns
/// the results in item order.
pub(crate) fn map_items<I, T, F>(items: &[I], threads: usize, f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync + Send,
{
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

fn check_vocab(model_vocab: usize, corpus: &EncodedCorpus) -> Result<()> {
    if model_vocab != corpus.vocab_size {
        return Err(Error::VocabMismatch(format!(
            "model has {model_vocab} words, corpus was encoded with {}",
            corpus.vocab_size
        )));
    }
    Ok(())
}

pub fn perplexity(model: &dyn SequenceScorer, corpus: &EncodedCorpus, opts: EvalOptions) -> Result<PerplexityResult> {
    check_vocab(model.vocab_size(), corpus)?;
    let per_item = map_items(&corpus.items, opts.threads, |tokens| {
        let scores = model.score_item(tokens)?;
        let mut total = 0.0;
        let mut n = 0;
        for (lp, &t) in scores.iter().zip(&tokens[1..]) {
            if opts.count_boundary_tokens || t != BOUNDARY_ID {
                total += lp;
                n += 1;
            }
        }
        Ok((total, n))
    })?;
    let (total_log_prob, tokens) = per_item
        .into_iter()
        .fold((0.0, 0), |(a, b), (x, y)| (a + x, b + y));
    if tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(PerplexityResult {
        perplexity: (-total_log_prob / tokens as f64).exp(),
        tokens,
        total_log_prob,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub model: String,
    pub corpus: String,
    pub result: PerplexityResult,
}

pub fn eval_grid(
    models: &[(String, &dyn SequenceScorer)],
    corpora: &[(String, &EncodedCorpus)],
    opts: EvalOptions,
) -> Result<Vec<GridCell>> {
    let mut cells = Vec::with_capacity(models.len() * corpora.len());
    for (mname, model) in models {
        for (cname, corpus) in corpora {
            cells.push(GridCell {
                model: mname.clone(),
                corpus: cname.clone(),
                result: perplexity(*model, corpus, opts)?,
            });
        }
    }
    Ok(cells)
}

pub fn write_grid<W: Write>(mut w: W, cells: &[GridCell]) -> Result<()> {
    writeln!(w, "model\tcorpus\tppl\ttokens")?;
    for c in cells {
        writeln!(w, "{}\t{}\t{:.4}\t{}", c.model, c.corpus, c.result.perplexity, c.result.tokens)?;
    }
    Ok(())
}

/// Perplexity of `model` with each attention span in `spans`.
pub fn span_sweep(
    model: &LanguageModel,
    corpus: &EncodedCorpus,
    spans: &[usize],
    opts: EvalOptions,
) -> Result<Vec<(usize, PerplexityResult)>> {
    spans
        .iter()
        .map(|&s| {
            if s == 0 {
                return Err(Error::InvalidArgument("attention span must be at least 1".into()));
            }
            let restricted = model.with_attention_span(Some(s))?;
            Ok((s, perplexity(&restricted, corpus, opts)?))
        })
        .collect()
}

/// Mean of |log Σ exp(logits)| over all predicted positions: how far the
/// model is from emitting normalized scores.
pub fn mean_abs_log_partition(model: &LanguageModel, corpus: &EncodedCorpus) -> Result<f64> {
    check_vocab(model.config().vocab_size, corpus)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for tokens in corpus.items.iter().filter(|t| t.len() >= 2) {
        let (steps, _) = model.forward(&tokens[..tokens.len() - 1], &model.fresh_state())?;
        for s in steps {
            let row: Vec<f64> = s.logits.iter().map(|&x| x as f64).collect();
            total += log_sum_exp(&row).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nnlm::{Arch, ModelConfig};
    use crate::textcorpus::Level;

    /// Bigram table model: p(w | prev) from an explicit matrix.
    struct TableModel {
        v: usize,
        probs: Vec<f64>,
    }

    impl SequenceScorer for TableModel {
        fn vocab_size(&self) -> usize {
            self.v
        }
        fn score_item(&self, tokens: &[u32]) -> Result<Vec<f64>> {
            Ok(tokens
                .windows(2)
                .map(|w| self.probs[w[0] as usize * self.v + w[1] as usize].ln())
                .collect())
        }
    }

    fn random_items(rng: &mut ChaCha8Rng, v: u32, n: usize) -> Vec<Vec<u32>> {
        (0..n)
            .map(|_| {
                let len = rng.gen_range(2..10);
                std::iter::once(1).chain((0..len).map(|_| rng.gen_range(0..v))).collect()
            })
            .collect()
    }

    fn encoded(items: Vec<Vec<u32>>, v: usize) -> EncodedCorpus {
        EncodedCorpus {
            level: Level::Paragraph,
            vocab_size: v,
            items,
        }
    }

    #[test]
    fn uniform_model_has_perplexity_v() {
        let v = 13;
        let m = TableModel {
            v,
            probs: vec![1.0 / v as f64; v * v],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = encoded(random_items(&mut rng, v as u32, 20), v);
        let r = perplexity(&m, &c, EvalOptions::default()).unwrap();
        assert!((r.perplexity - v as f64).abs() < 1e-3);
        // zero-parameter neural model is uniform too
        let nn = LanguageModel::zeros(ModelConfig::desk(Arch::Lstm, v)).unwrap();
        let r = perplexity(&nn, &c, EvalOptions::default()).unwrap();
        assert!((r.perplexity - v as f64).abs() < 1e-3);
    }

    #[test]
    fn matches_brute_force_and_boundary_flag() {
        let v = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut probs = Vec::new();
        for _ in 0..v {
            let row: Vec<f64> = (0..v).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = row.iter().sum();
            probs.extend(row.iter().map(|x| x / s));
        }
        let m = TableModel { v, probs: probs.clone() };
        let items = random_items(&mut rng, v as u32, 15);
        let c = encoded(items.clone(), v);

        let mut all = (0.0, 0usize);
        let mut words = (0.0, 0usize);
        for it in &items {
            for w in it.windows(2) {
                let lp = probs[w[0] as usize * v + w[1] as usize].ln();
                all = (all.0 + lp, all.1 + 1);
                if w[1] != BOUNDARY_ID {
                    words = (words.0 + lp, words.1 + 1);
                }
            }
        }
        let r = perplexity(&m, &c, EvalOptions::default()).unwrap();
        assert_eq!(r.tokens, all.1);
        assert!((r.perplexity - (-all.0 / all.1 as f64).exp()).abs() < 1e-9);
        let opts = EvalOptions {
            count_boundary_tokens: false,
            ..EvalOptions::default()
        };
        let r = perplexity(&m, &c, opts).unwrap();
        assert_eq!(r.tokens, words.1);
        assert!((r.perplexity - (-words.0 / words.1 as f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn shuffling_threads_and_repeats_change_nothing() {
        let v = 20;
        let model = LanguageModel::init(ModelConfig::desk(Arch::Lstma, v), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let items = random_items(&mut rng, v as u32, 8);
        let base = perplexity(&model, &encoded(items.clone(), v), EvalOptions::default()).unwrap();
        let again = perplexity(&model, &encoded(items.clone(), v), EvalOptions::default()).unwrap();
        assert_eq!(base, again);

        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        let r = perplexity(&model, &encoded(shuffled, v), EvalOptions::default()).unwrap();
        assert!((r.total_log_prob - base.total_log_prob).abs() < 1e-9 * base.total_log_prob.abs());
        let par = EvalOptions {
            threads: 3,
            ..EvalOptions::default()
        };
        assert_eq!(perplexity(&model, &encoded(items, v), par).unwrap(), base);
    }

    #[test]
    fn grid_cells_match_single_runs_in_any_order() {
        let v = 15;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = LanguageModel::init(ModelConfig::desk(Arch::Lstm, v), 1).unwrap();
        let c1 = encoded(random_items(&mut rng, v as u32, 5), v);
        let c2 = encoded(random_items(&mut rng, v as u32, 5), v);
        let ng = NGramModel::train(&c1, 3).unwrap();
        let opts = EvalOptions::default();

        let one = eval_grid(&[("a".into(), &a)], &[("c1".into(), &c1)], opts).unwrap();
        assert_eq!(one[0].result, perplexity(&a, &c1, opts).unwrap());

        let corpora = [("c1".to_owned(), &c1), ("c2".to_owned(), &c2)];
        let fwd = eval_grid(&[("a".into(), &a), ("kn".into(), &ng)], &corpora, opts).unwrap();
        let rev = eval_grid(&[("kn".into(), &ng), ("a".into(), &a)], &corpora, opts).unwrap();
        for cell in &fwd {
            assert!(rev.contains(cell));
        }
        let mut out = Vec::new();
        write_grid(&mut out, &fwd).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("model\tcorpus\tppl\ttokens\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn span_sweep_saturates_and_validates() {
        let v = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = encoded(random_items(&mut rng, v as u32, 6), v);
        let m = LanguageModel::init(ModelConfig::desk(Arch::Transformer, v), 2).unwrap();
        let full = perplexity(&m, &c, EvalOptions::default()).unwrap();
        let sweep = span_sweep(&m, &c, &[1, 2, 4, 8, 1000], EvalOptions::default()).unwrap();
        assert!(sweep.iter().all(|(_, r)| r.perplexity.is_finite()));
        let rel = (sweep[4].1.perplexity - full.perplexity).abs() / full.perplexity;
        assert!(rel < 1e-6);
        assert!(span_sweep(&m, &c, &[0], EvalOptions::default()).is_err());
        let lstm = LanguageModel::init(ModelConfig::desk(Arch::Lstm, v), 2).unwrap();
        assert!(matches!(
            span_sweep(&lstm, &c, &[4], EvalOptions::default()),
            Err(Error::ArchMismatch { .. })
        ));
    }

    #[test]
    fn mismatch_and_empty() {
        let m = LanguageModel::zeros(ModelConfig::desk(Arch::Lstm, 10)).unwrap();
        assert!(matches!(
            perplexity(&m, &encoded(vec![vec![1, 2]], 11), EvalOptions::default()),
            Err(Error::VocabMismatch(_))
        ));
        assert!(matches!(
            perplexity(&m, &encoded(vec![vec![1]], 10), EvalOptions::default()),
            Err(Error::EmptyCorpus)
        ));
    }
}
