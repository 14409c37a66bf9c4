use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use longspan_core::rerank::{
    add_reference, first_pass, make_fixtures, oov_filter, oracle_wer, read_sessions, rerank_sessions, results_wer,
    wer, werr, write_sessions, write_transcripts, ConfusionSet, FixtureConfig, NnRescorer,
};
use longspan_core::textcorpus::read_paragraphs;
use longspan_core::{ContextMode, Normalization, RerankWeights, Session, Vocabulary, WerStats};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{input, output_err, CliError, Result};
use crate::models::LoadedModel;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MakeFixturesConfig {
    /// Paragraph corpus; each paragraph becomes a session.
    pub paragraphs: PathBuf,
    /// One confusion group per line.
    pub confusions: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    /// With `ngram`, fills in first-pass LM scores.
    pub vocab: Option<PathBuf>,
    pub ngram: Option<PathBuf>,
    pub fixture: FixtureConfig,
}

impl Default for MakeFixturesConfig {
    fn default() -> Self {
        Self {
            paragraphs: PathBuf::new(),
            confusions: PathBuf::new(),
            output: PathBuf::from("sessions.jsonl"),
            seed: 17,
            vocab: None,
            ngram: None,
            fixture: FixtureConfig::default(),
        }
    }
}

impl RunConfig for MakeFixturesConfig {
    const OPTIONAL_KEYS: &'static [&'static str] = &["vocab", "ngram"];
}

pub fn make_fixtures_cmd(c: &MakeFixturesConfig) -> Result<()> {
    let paragraphs = read_paragraphs(input(&c.paragraphs)?)?;
    let text = std::fs::read_to_string(input(&c.confusions)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", c.confusions.display())))?;
    let confusions = ConfusionSet::parse(&text)?;
    let first_pass_lm = match (&c.vocab, &c.ngram) {
        (Some(v), Some(n)) => {
            let LoadedModel::Ngram(ngram) = LoadedModel::load(n)? else {
                return Err(longspan_core::Error::ArchMismatch {
                    expected: "kn4".into(),
                    got: "neural checkpoint".into(),
                }
                .into());
            };
            Some((ngram, Vocabulary::load(input(v)?)?))
        }
        (None, None) => None,
        _ => return Err(CliError::Config("vocab and ngram must be set together".into())),
    };
    let sessions = make_fixtures(
        &paragraphs,
        &confusions,
        &c.fixture,
        first_pass_lm.as_ref().map(|(n, v)| (n, v)),
        c.seed,
    )?;
    write_sessions(&c.output, &sessions)?;
    let base = results_wer(&first_pass(&sessions));
    log::info!(
        "{}: {} sessions, first-pass WER {:.2}%, oracle WER {:.2}%",
        c.output.display(),
        sessions.len(),
        base.percent(),
        oracle_wer(&sessions).percent()
    );
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankConfig {
    pub sessions: PathBuf,
    pub model: PathBuf,
    pub vocab: PathBuf,
    pub mode: ContextMode,
    pub normalization: Normalization,
    pub threads: usize,
    /// Drop sessions whose references contain out-of-vocabulary words.
    pub oov_filter: bool,
    /// Add each reference to its n-best with the best acoustic score plus
    /// `reference_am_offset` and the first-pass LM score of that hypothesis.
    pub add_reference: bool,
    pub reference_am_offset: f64,
    /// Transcripts file; standard output when unset, and the summary then
    /// goes to standard error.
    pub output: Option<PathBuf>,
    pub weights: RerankWeights,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            sessions: PathBuf::new(),
            model: PathBuf::from("model.lslm"),
            vocab: PathBuf::from("vocab.txt"),
            mode: ContextMode::OnebestCarryover,
            normalization: Normalization::SelfNormalized,
            threads: 1,
            oov_filter: false,
            add_reference: false,
            reference_am_offset: 0.0,
            output: None,
            weights: RerankWeights::default(),
        }
    }
}

impl RunConfig for RerankConfig {
    const OPTIONAL_KEYS: &'static [&'static str] = &["output"];
}

fn with_references(sessions: &[Session], offset: f64) -> Result<Vec<Session>> {
    sessions
        .iter()
        .map(|s| {
            let utterances = s
                .utterances
                .iter()
                .map(|u| {
                    let top = u
                        .nbest
                        .iter()
                        .max_by(|a, b| a.am_score.total_cmp(&b.am_score))
                        .expect("n-best lists are non-empty");
                    Ok(add_reference(u, top.am_score + offset, top.fp_lm_score)?)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Session {
                id: s.id.clone(),
                utterances,
            })
        })
        .collect()
}

fn summary(label: &str, baseline: &WerStats, reranked: &WerStats, oracle: &WerStats) -> String {
    let w = werr(baseline.percent(), reranked.percent()).map_or("n/a".to_owned(), |x| format!("{x:.2}"));
    format!(
        "eval_set\t{label}\nfirst_pass_wer\t{:.2}\nreranked_wer\t{:.2}\nwerr\t{w}\noracle_wer\t{:.2}\nreference_words\t{}\n",
        baseline.percent(),
        reranked.percent(),
        oracle.percent(),
        reranked.reference_words
    )
}

pub fn rerank(c: &RerankConfig) -> Result<()> {
    let vocab = Vocabulary::load(input(&c.vocab)?)?;
    let LoadedModel::Neural(model) = LoadedModel::load(&c.model)? else {
        return Err(longspan_core::Error::ArchMismatch {
            expected: "neural checkpoint".into(),
            got: "kn4".into(),
        }
        .into());
    };
    let mut sessions = read_sessions(input(&c.sessions)?)?;
    if c.oov_filter {
        let (kept, report) = oov_filter(&sessions, &vocab);
        log::info!("OOV filter removed {} of {} sessions", report.removed, report.total);
        sessions = kept;
    }
    if c.add_reference {
        sessions = with_references(&sessions, c.reference_am_offset)?;
    }
    let scorer = NnRescorer::new(&model, &vocab, c.normalization)?;
    let results = rerank_sessions(&sessions, &scorer, &c.weights, c.mode, c.threads)?;
    let has_refs = sessions.iter().flat_map(|s| &s.utterances).all(|u| u.reference.is_some());
    let text = if has_refs {
        summary(
            &c.sessions.display().to_string(),
            &results_wer(&first_pass(&sessions)),
            &results_wer(&results),
            &oracle_wer(&sessions),
        )
    } else {
        "no references; WER not computed\n".to_owned()
    };
    match &c.output {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(output_err(path))?;
            write_transcripts(std::io::BufWriter::new(f), &results)?;
            print!("{text}");
        }
        None => {
            let out = std::io::stdout();
            write_transcripts(out.lock(), &results)?;
            eprint!("{text}");
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFormat {
    /// `utt_id<TAB>words` lines.
    Tsv,
    /// Session file with `ref` fields.
    Sessions,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WerConfig {
    pub reference: PathBuf,
    pub reference_format: ReferenceFormat,
    /// `utt_id<TAB>transcript` lines, as written by `rerank`.
    pub hypothesis: PathBuf,
    /// Baseline WER in percent, for the relative reduction.
    pub baseline_wer: Option<f64>,
}

impl Default for WerConfig {
    fn default() -> Self {
        Self {
            reference: PathBuf::new(),
            reference_format: ReferenceFormat::Sessions,
            hypothesis: PathBuf::new(),
            baseline_wer: None,
        }
    }
}

impl RunConfig for WerConfig {
    const OPTIONAL_KEYS: &'static [&'static str] = &["baseline_wer"];
}

fn read_tsv(path: &std::path::Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(input(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let (id, words) = l
                .split_once('\t')
                .ok_or_else(|| CliError::Data(format!("{}:{}: expected utt_id<TAB>words", path.display(), n + 1)))?;
            Ok((id.to_owned(), words.split_whitespace().map(str::to_owned).collect()))
        })
        .collect()
}

pub fn wer_cmd(c: &WerConfig) -> Result<()> {
    let references: Vec<(String, Vec<String>)> = match c.reference_format {
        ReferenceFormat::Tsv => read_tsv(&c.reference)?,
        ReferenceFormat::Sessions => read_sessions(input(&c.reference)?)?
            .into_iter()
            .flat_map(|s| s.utterances)
            .map(|u| {
                let r = u
                    .reference
                    .ok_or_else(|| CliError::Data(format!("utterance {} has no reference", u.id)))?;
                Ok((u.id, r))
            })
            .collect::<Result<_>>()?,
    };
    let hyps: HashMap<String, Vec<String>> = read_tsv(&c.hypothesis)?.into_iter().collect();
    let mut total = WerStats::default();
    for (id, reference) in &references {
        let h = hyps
            .get(id)
            .ok_or_else(|| CliError::Data(format!("no hypothesis for utterance {id}")))?;
        total += wer(reference, h);
    }
    let out = std::io::stdout();
    let mut w = out.lock();
    let io = |e| CliError::Output {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    writeln!(
        w,
        "utterances\t{}\nreference_words\t{}\nsubstitutions\t{}\ninsertions\t{}\ndeletions\t{}\nwer\t{:.2}",
        references.len(),
        total.reference_words,
        total.substitutions,
        total.insertions,
        total.deletions,
        total.percent()
    )
    .map_err(io)?;
    if let Some(b) = c.baseline_wer {
        writeln!(w, "werr\t{:.2}", werr(b, total.percent())?).map_err(io)?;
    }
    Ok(())
}
