use std::path::{Path, PathBuf};

use longspan_core::container::Container;
use longspan_core::evaluate::{eval_grid, span_sweep, write_grid, GridCell, SequenceScorer};
use longspan_core::textcorpus::read_corpus;
use longspan_core::train::train;
use longspan_core::{
    Arch, EncodedCorpus, EvalOptions, LanguageModel, Level, ModelConfig, NGramModel, TrainConfig, Vocabulary,
};
use serde::{Deserialize, Serialize};
use toml::Table;

use crate::config::RunConfig;
use crate::error::{input, output_err, CliError, Result};
use crate::stdout_or_file;

/// Model hyperparameters; the vocabulary size comes from the vocabulary file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub arch: Arch,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub attention_span: Option<usize>,
    pub dropout: f64,
}

impl ModelOptions {
    fn for_arch(arch: Arch) -> Self {
        let d = ModelConfig::desk(arch, 0);
        Self {
            arch,
            embed_dim: d.embed_dim,
            hidden_dim: d.hidden_dim,
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            ff_dim: d.ff_dim,
            attention_span: d.attention_span,
            dropout: d.dropout,
        }
    }

    fn to_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ff_dim: self.ff_dim,
            attention_span: self.attention_span,
            dropout: self.dropout,
            tie_embeddings: true,
        }
    }
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self::for_arch(Arch::Lstm)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCmdConfig {
    pub train_corpus: PathBuf,
    pub heldout_corpus: PathBuf,
    /// Segmentation of both corpora; decides whether this is a sentence or
    /// a paragraph model.
    pub level: Level,
    pub vocab: PathBuf,
    pub output: PathBuf,
    /// Per-epoch report (TSV).
    pub report: Option<PathBuf>,
    pub model: ModelOptions,
    pub train: TrainConfig,
}

impl TrainCmdConfig {
    fn for_arch(arch: Arch) -> Self {
        Self {
            train_corpus: PathBuf::new(),
            heldout_corpus: PathBuf::new(),
            level: Level::Paragraph,
            vocab: PathBuf::from("vocab.txt"),
            output: PathBuf::from("model.lslm"),
            report: None,
            model: ModelOptions::for_arch(arch),
            train: TrainConfig::for_arch(arch),
        }
    }
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self::for_arch(Arch::Lstm)
    }
}

impl RunConfig for TrainCmdConfig {
    const OPTIONAL_KEYS: &'static [&'static str] = &["report", "model.attention_span"];

    /// Architecture-specific defaults (head count, learning-rate schedule).
    fn defaults_for(user: &Table) -> Result<Self> {
        let arch = match user.get("model").and_then(|m| m.get("arch")) {
            None => Arch::Lstm,
            Some(v) => v
                .as_str()
                .ok_or_else(|| CliError::Config("model.arch must be a string".into()))?
                .parse()
                .map_err(|e: longspan_core::Error| CliError::Config(e.to_string()))?,
        };
        Ok(Self::for_arch(arch))
    }
}

fn load_encoded(vocab: &Vocabulary, path: &Path, level: Level) -> Result<EncodedCorpus> {
    Ok(vocab.encode_corpus(&read_corpus(input(path)?, level)?))
}

pub fn train_model(c: &TrainCmdConfig) -> Result<()> {
    let vocab = Vocabulary::load(input(&c.vocab)?)?;
    let train_set = load_encoded(&vocab, &c.train_corpus, c.level)?;
    let heldout = load_encoded(&vocab, &c.heldout_corpus, c.level)?;
    let mc = c.model.to_config(vocab.len());
    log::info!(
        "training {}-{} on {} items ({} predicted tokens)",
        mc.arch,
        if c.level == Level::Sentence { "sent" } else { "para" },
        train_set.len(),
        train_set.predicted_tokens()
    );
    let (model, report) = train(&mc, &c.train, &train_set, &heldout)?;
    model.save_checkpoint(&c.output)?;
    log::info!("{}: held-out perplexity {:.3}", c.output.display(), report.final_heldout_ppl());
    if let Some(path) = &c.report {
        let f = std::fs::File::create(path).map_err(output_err(path))?;
        report.write_tsv(std::io::BufWriter::new(f))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainNgramConfig {
    pub corpus: PathBuf,
    pub level: Level,
    pub vocab: PathBuf,
    pub order: usize,
    pub output: PathBuf,
}

impl Default for TrainNgramConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            level: Level::Sentence,
            vocab: PathBuf::from("vocab.txt"),
            order: 4,
            output: PathBuf::from("kn4.lslm"),
        }
    }
}

impl RunConfig for TrainNgramConfig {}

pub fn train_ngram(c: &TrainNgramConfig) -> Result<()> {
    let vocab = Vocabulary::load(input(&c.vocab)?)?;
    let corpus = load_encoded(&vocab, &c.corpus, c.level)?;
    let model = NGramModel::train(&corpus, c.order)?;
    model.save(&c.output)?;
    log::info!("{}: order {} discounts {:?}", c.output.display(), model.order(), model.discounts());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub name: String,
    pub path: PathBuf,
    pub level: Level,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalPplConfig {
    pub vocab: PathBuf,
    pub count_boundary_tokens: bool,
    pub threads: usize,
    /// Attention spans to sweep for attention models; rows are named
    /// `model@spanN`.
    pub spans: Vec<usize>,
    /// Grid file; standard output when unset.
    pub output: Option<PathBuf>,
    /// Neural checkpoints or n-gram models, told apart by their header.
    pub models: Vec<NamedPath>,
    pub corpora: Vec<CorpusSpec>,
}

impl Default for EvalPplConfig {
    fn default() -> Self {
        Self {
            vocab: PathBuf::from("vocab.txt"),
            count_boundary_tokens: true,
            threads: 1,
            spans: Vec::new(),
            output: None,
            models: Vec::new(),
            corpora: Vec::new(),
        }
    }
}

impl RunConfig for EvalPplConfig {
    const OPTIONAL_KEYS: &'static [&'static str] = &["output"];
}

pub enum LoadedModel {
    Neural(LanguageModel),
    Ngram(NGramModel),
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(input(path)?)?;
        Ok(if c.get("arch") == Some("kn4") {
            Self::Ngram(NGramModel::from_container(&c)?)
        } else {
            Self::Neural(LanguageModel::from_container(c)?)
        })
    }

    fn scorer(&self) -> &dyn SequenceScorer {
        match self {
            Self::Neural(m) => m,
            Self::Ngram(m) => m,
        }
    }
}

pub fn eval_ppl(c: &EvalPplConfig) -> Result<()> {
    if c.models.is_empty() || c.corpora.is_empty() {
        return Err(CliError::Config("eval-ppl needs at least one of each of models and corpora".into()));
    }
    let vocab = Vocabulary::load(input(&c.vocab)?)?;
    let models = c
        .models
        .iter()
        .map(|m| Ok((m.name.clone(), LoadedModel::load(&m.path)?)))
        .collect::<Result<Vec<_>>>()?;
    let corpora = c
        .corpora
        .iter()
        .map(|s| Ok((s.name.clone(), load_encoded(&vocab, &s.path, s.level)?)))
        .collect::<Result<Vec<_>>>()?;
    let opts = EvalOptions {
        count_boundary_tokens: c.count_boundary_tokens,
        threads: c.threads,
    };
    let scorers: Vec<(String, &dyn SequenceScorer)> = models.iter().map(|(n, m)| (n.clone(), m.scorer())).collect();
    let corpus_refs: Vec<(String, &EncodedCorpus)> = corpora.iter().map(|(n, e)| (n.clone(), e)).collect();
    let mut cells = eval_grid(&scorers, &corpus_refs, opts)?;
    if !c.spans.is_empty() {
        for (name, model) in &models {
            let LoadedModel::Neural(m) = model else { continue };
            if !m.config().arch.has_attention() {
                continue;
            }
            for (cname, corpus) in &corpora {
                for (span, result) in span_sweep(m, corpus, &c.spans, opts)? {
                    cells.push(GridCell {
                        model: format!("{name}@span{span}"),
                        corpus: cname.clone(),
                        result,
                    });
                }
            }
        }
    }
    for cell in &cells {
        log::info!("{} on {}: ppl {:.3}", cell.model, cell.corpus, cell.result.perplexity);
    }
    stdout_or_file(c.output.as_deref(), |w| Ok(write_grid(w, &cells)?))
}
