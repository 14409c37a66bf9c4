use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use longspan_core::rerank::ConfusionSet;
use longspan_core::synthetic::{TopicCorpus, TopicCorpusConfig};
use longspan_core::textcorpus::{
    length_histogram, normalize_text, paragraphs_to_sentences, read_corpus, segment_paragraphs, write_histogram,
    write_paragraphs,
};
use longspan_core::{Level, Paragraph, SegmentedCorpus, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{input, output_err, CliError, Result};
use crate::stdout_or_file;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildCorpusConfig {
    /// Raw UTF-8 text, one or more sentences per line.
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub target_chars: usize,
    /// Keep each distinct training sentence once.
    pub dedupe: bool,
    /// Share of paragraphs, taken from the end, written to the held-out files.
    pub heldout_fraction: f64,
}

impl Default for BuildCorpusConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            out_dir: PathBuf::from("."),
            target_chars: 2000,
            dedupe: false,
            heldout_fraction: 0.0,
        }
    }
}

impl RunConfig for BuildCorpusConfig {}

fn write_sentence_items(path: &Path, corpus: &SegmentedCorpus) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(output_err(path))?);
    for item in corpus.items() {
        writeln!(w, "{}", item.join(" ")).map_err(output_err(path))?;
    }
    w.flush().map_err(output_err(path))
}

fn emit(dir: &Path, suffix: &str, paragraphs: &[Paragraph], dedupe: bool) -> Result<()> {
    let paras = dir.join(format!("paragraphs{suffix}.txt"));
    let sents = dir.join(format!("sentences{suffix}.txt"));
    write_paragraphs(&paras, paragraphs)?;
    let split = paragraphs_to_sentences(paragraphs, dedupe);
    write_sentence_items(&sents, &split)?;
    log::info!(
        "{}: {} paragraphs, {} sentences, {} words",
        paras.display(),
        paragraphs.len(),
        split.len(),
        split.word_count()
    );
    Ok(())
}

pub fn build_corpus(c: &BuildCorpusConfig) -> Result<()> {
    if !(0.0..1.0).contains(&c.heldout_fraction) {
        return Err(CliError::Config("heldout_fraction must lie in [0, 1)".into()));
    }
    let text = fs::read_to_string(input(&c.input)?).map_err(|e| CliError::Data(format!("{}: {e}", c.input.display())))?;
    let lines: Vec<&str> = text.lines().collect();
    let sentences = normalize_text(&lines);
    if sentences.is_empty() {
        return Err(longspan_core::Error::EmptyCorpus.into());
    }
    let paragraphs = segment_paragraphs(&sentences, c.target_chars)?;
    let held = (paragraphs.len() as f64 * c.heldout_fraction).round() as usize;
    let (train, heldout) = paragraphs.split_at(paragraphs.len() - held);
    fs::create_dir_all(&c.out_dir).map_err(output_err(&c.out_dir))?;
    emit(&c.out_dir, "", train, c.dedupe)?;
    if !heldout.is_empty() {
        emit(&c.out_dir, ".heldout", heldout, false)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildVocabConfig {
    pub corpus: PathBuf,
    pub level: Level,
    pub max_size: usize,
    pub output: PathBuf,
}

impl Default for BuildVocabConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            level: Level::Paragraph,
            max_size: 10_000,
            output: PathBuf::from("vocab.txt"),
        }
    }
}

impl RunConfig for BuildVocabConfig {}

pub fn build_vocab(c: &BuildVocabConfig) -> Result<()> {
    let corpus = read_corpus(input(&c.corpus)?, c.level)?;
    let vocab = Vocabulary::build(&corpus, c.max_size)?;
    vocab.save(&c.output)?;
    log::info!("{}: {} tokens", c.output.display(), vocab.len());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub corpus: PathBuf,
    pub level: Level,
    pub bin_width: usize,
    /// Histogram file; standard output when unset.
    pub output: Option<PathBuf>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            level: Level::Sentence,
            bin_width: 10,
            output: None,
        }
    }
}

impl RunConfig for StatsConfig {
    const OPTIONAL_KEYS: &'static [&'static str] = &["output"];
}

pub fn stats(c: &StatsConfig) -> Result<()> {
    let corpus = read_corpus(input(&c.corpus)?, c.level)?;
    let bins = length_histogram(&corpus, c.bin_width)?;
    log::info!("{} {} items, {} words", corpus.len(), c.level, corpus.word_count());
    stdout_or_file(c.output.as_deref(), |w| Ok(write_histogram(w, &bins)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthCorpusConfig {
    pub paragraphs: usize,
    pub seed: u64,
    /// Paragraph corpus file.
    pub output: PathBuf,
    /// Confusion groups (word i of every topic) for `make-fixtures`.
    pub confusions: Option<PathBuf>,
    pub topic: TopicCorpusConfig,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            paragraphs: 400,
            seed: 17,
            output: PathBuf::from("paragraphs.txt"),
            confusions: None,
            topic: TopicCorpusConfig::default(),
        }
    }
}

impl RunConfig for SynthCorpusConfig {
    const OPTIONAL_KEYS: &'static [&'static str] = &["confusions"];
}

pub fn synth_corpus(c: &SynthCorpusConfig) -> Result<()> {
    let tc = TopicCorpus::new(c.topic.clone())?;
    let paragraphs = tc.generate(c.paragraphs, c.seed);
    write_paragraphs(&c.output, &paragraphs)?;
    log::info!(
        "{}: {} paragraphs, {} words",
        c.output.display(),
        paragraphs.len(),
        SegmentedCorpus::from_paragraphs(&paragraphs).word_count()
    );
    if let Some(path) = &c.confusions {
        let groups: Vec<String> = ConfusionSet::from_topics(&tc).groups().iter().map(|g| g.join(" ")).collect();
        fs::write(path, groups.join("\n") + "\n").map_err(output_err(path))?;
    }
    Ok(())
}
