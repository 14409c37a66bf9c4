//! Session-level n-best re-ranking.
//!
//! Each hypothesis is scored by the neural model as a `<s>`-prefixed
//! continuation of a context state and combined log-linearly with its
//! acoustic and first-pass LM scores. The context state depends on the mode:
//! fresh for every utterance, advanced through the reference transcripts of
//! earlier utterances, or carried over from the previously selected 1-best.

mod fixtures;
mod io;
mod wer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::map_items;
use crate::ngram::NGramModel;
use crate::nnlm::{LanguageModel, ModelState, Normalization};
use crate::textcorpus::{Vocabulary, BOUNDARY_ID};

pub use fixtures::{make_fixtures, ConfusionSet, FixtureConfig};
pub use io::{read_sessions, write_sessions, write_transcripts};
pub use wer::{corpus_wer, wer, werr, WerStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub words: Vec<String>,
    pub am_score: f64,
    pub fp_lm_score: f64,
}

impl Hypothesis {
    pub fn new<S: AsRef<str>>(words: &[S], am_score: f64, fp_lm_score: f64) -> Self {
        Self {
            words: words.iter().map(|w| w.as_ref().to_owned()).collect(),
            am_score,
            fp_lm_score,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    /// In first-pass rank order.
    pub nbest: Vec<Hypothesis>,
    pub reference: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankWeights {
    pub w_am: f64,
    pub w_fp: f64,
    pub w_nn: f64,
    pub word_insertion_penalty: f64,
}

impl Default for RerankWeights {
    fn default() -> Self {
        Self {
            w_am: 1.0,
            w_fp: 0.5,
            w_nn: 0.5,
            word_insertion_penalty: 0.0,
        }
    }
}

impl RerankWeights {
    /// First-pass acoustic score only.
    pub fn am_only() -> Self {
        Self {
            w_am: 1.0,
            w_fp: 0.0,
            w_nn: 0.0,
            word_insertion_penalty: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    Sentence,
    ReferenceContext,
    OnebestCarryover,
}

impl std::str::FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(Self::Sentence),
            "reference_context" => Ok(Self::ReferenceContext),
            "onebest_carryover" => Ok(Self::OnebestCarryover),
            _ => Err(Error::Parse(format!(
                "unknown mode {s:?} (sentence, reference_context, onebest_carryover)"
            ))),
        }
    }
}

impl std::fmt::Display for ContextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sentence => "sentence",
            Self::ReferenceContext => "reference_context",
            Self::OnebestCarryover => "onebest_carryover",
        })
    }
}

pub fn combined_score(h: &Hypothesis, nn_log_prob: f64, w: &RerankWeights) -> f64 {
    w.w_am * h.am_score + w.w_fp * h.fp_lm_score + w.w_nn * nn_log_prob + w.word_insertion_penalty * h.words.len() as f64
}

/// Neural model plus the vocabulary that maps hypothesis words to ids.
#[derive(Clone, Copy)]
pub struct NnRescorer<'a> {
    pub model: &'a LanguageModel,
    pub vocab: &'a Vocabulary,
    pub normalization: Normalization,
}

impl<'a> NnRescorer<'a> {
    pub fn new(model: &'a LanguageModel, vocab: &'a Vocabulary, normalization: Normalization) -> Result<Self> {
        if model.config().vocab_size != vocab.len() {
            return Err(Error::VocabMismatch(format!(
                "model has {} words, vocabulary has {}",
                model.config().vocab_size,
                vocab.len()
            )));
        }
        Ok(Self {
            model,
            vocab,
            normalization,
        })
    }

    pub fn fresh_state(&self) -> ModelState {
        self.model.fresh_state()
    }

    /// Log-probability of `words` after `<s>`, continuing from `state`, and
    /// the state after the last word. Out-of-vocabulary words score as `<unk>`.
    pub fn score<S: AsRef<str>>(&self, words: &[S], state: &ModelState) -> Result<(f64, ModelState)> {
        let tokens = self.vocab.encode(words);
        if tokens.len() < 2 {
            return Ok((0.0, self.model.advance(&[BOUNDARY_ID], state)?));
        }
        let (scores, next) = self.model.score_sequence(&tokens, state, self.normalization)?;
        Ok((scores.iter().sum(), next))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedHypothesis {
    /// First-pass rank (position in the incoming n-best).
    pub index: usize,
    pub nn_log_prob: f64,
    pub combined: f64,
}

#[derive(Clone, Debug)]
pub struct RankedUtterance {
    /// Best first.
    pub ranking: Vec<RankedHypothesis>,
    /// End state of each hypothesis, by first-pass rank.
    pub states: Vec<ModelState>,
}

impl RankedUtterance {
    pub fn best(&self) -> usize {
        self.ranking[0].index
    }
}

pub fn rerank_utterance(
    utt: &Utterance,
    scorer: &NnRescorer,
    context: &ModelState,
    weights: &RerankWeights,
) -> Result<RankedUtterance> {
    if utt.nbest.is_empty() {
        return Err(Error::InvalidArgument(format!("utterance {} has an empty n-best list", utt.id)));
    }
    let mut ranking = Vec::with_capacity(utt.nbest.len());
    let mut states = Vec::with_capacity(utt.nbest.len());
    for (index, h) in utt.nbest.iter().enumerate() {
        let (nn, state) = scorer.score(&h.words, context)?;
        ranking.push(RankedHypothesis {
            index,
            nn_log_prob: nn,
            combined: combined_score(h, nn, weights),
        });
        states.push(state);
    }
    ranking.sort_by(|a, b| b.combined.total_cmp(&a.combined).then(a.index.cmp(&b.index)));
    Ok(RankedUtterance { ranking, states })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceResult {
    pub utt_id: String,
    pub best_index: usize,
    pub transcript: Vec<String>,
    pub reference: Option<Vec<String>>,
}

pub fn rerank_session(
    session: &Session,
    scorer: &NnRescorer,
    weights: &RerankWeights,
    mode: ContextMode,
) -> Result<Vec<UtteranceResult>> {
    let mut state = scorer.fresh_state();
    let mut out = Vec::with_capacity(session.utterances.len());
    for utt in &session.utterances {
        let context = match mode {
            ContextMode::Sentence => scorer.fresh_state(),
            _ => state.clone(),
        };
        let ranked = rerank_utterance(utt, scorer, &context, weights)?;
        let best = ranked.best();
        state = match mode {
            ContextMode::Sentence => state,
            ContextMode::ReferenceContext => {
                let reference = utt.reference.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("utterance {} has no reference transcript", utt.id))
                })?;
                scorer.score(reference, &context)?.1
            }
            ContextMode::OnebestCarryover => ranked.states[best].clone(),
        };
        out.push(UtteranceResult {
            utt_id: utt.id.clone(),
            best_index: best,
            transcript: utt.nbest[best].words.clone(),
            reference: utt.reference.clone(),
        });
    }
    Ok(out)
}

/// Reranks every session, in parallel when `threads > 1`; results keep
/// session order.
pub fn rerank_sessions(
    sessions: &[Session],
    scorer: &NnRescorer,
    weights: &RerankWeights,
    mode: ContextMode,
    threads: usize,
) -> Result<Vec<Vec<UtteranceResult>>> {
    map_items(sessions, threads, |s| rerank_session(s, scorer, weights, mode))
}

/// The first-pass 1-best of every utterance.
pub fn first_pass(sessions: &[Session]) -> Vec<Vec<UtteranceResult>> {
    sessions
        .iter()
        .map(|s| {
            s.utterances
                .iter()
                .map(|u| UtteranceResult {
                    utt_id: u.id.clone(),
                    best_index: 0,
                    transcript: u.nbest.first().map(|h| h.words.clone()).unwrap_or_default(),
                    reference: u.reference.clone(),
                })
                .collect()
        })
        .collect()
}

/// Pooled WER over all results that carry a reference.
pub fn results_wer(results: &[Vec<UtteranceResult>]) -> WerStats {
    results
        .iter()
        .flatten()
        .filter_map(|r| r.reference.as_ref().map(|rf| wer(rf, &r.transcript)))
        .fold(WerStats::default(), |a, b| a + b)
}

/// Adds the reference as a hypothesis. If the n-best already holds the same
/// words, that entry keeps whichever scores have the better AM score.
pub fn add_reference(utt: &Utterance, ref_am_score: f64, ref_fp_score: f64) -> Result<Utterance> {
    let reference = utt
        .reference
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("utterance {} has no reference transcript", utt.id)))?;
    let mut out = utt.clone();
    match out.nbest.iter_mut().find(|h| &h.words == reference) {
        Some(h) => {
            if ref_am_score > h.am_score {
                h.am_score = ref_am_score;
                h.fp_lm_score = ref_fp_score;
            }
        }
        None => out.nbest.push(Hypothesis {
            words: reference.clone(),
            am_score: ref_am_score,
            fp_lm_score: ref_fp_score,
        }),
    }
    Ok(out)
}

/// Lowest WER reachable by picking from each n-best.
pub fn oracle_wer(sessions: &[Session]) -> WerStats {
    sessions
        .iter()
        .flat_map(|s| &s.utterances)
        .filter_map(|u| {
            let r = u.reference.as_ref()?;
            u.nbest.iter().map(|h| wer(r, &h.words)).min_by_key(|w| w.errors())
        })
        .fold(WerStats::default(), |a, b| a + b)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OovReport {
    pub total: usize,
    pub removed: usize,
}

/// Drops utterances whose reference contains a word outside `vocab`;
/// sessions left empty are dropped too.
pub fn oov_filter(sessions: &[Session], vocab: &Vocabulary) -> (Vec<Session>, OovReport) {
    let mut report = OovReport::default();
    let kept = sessions
        .iter()
        .filter_map(|s| {
            let utterances: Vec<Utterance> = s
                .utterances
                .iter()
                .filter(|u| {
                    report.total += 1;
                    let oov = u
                        .reference
                        .as_ref()
                        .is_some_and(|r| r.iter().any(|w| !vocab.contains(w)));
                    report.removed += usize::from(oov);
                    !oov
                })
                .cloned()
                .collect();
            (!utterances.is_empty()).then(|| Session {
                id: s.id.clone(),
                utterances,
            })
        })
        .collect();
    (kept, report)
}

/// Sets every hypothesis's first-pass LM score from an n-gram model,
/// scoring each hypothesis as a sentence of its own.
pub fn fill_first_pass_scores(sessions: &mut [Session], ngram: &NGramModel, vocab: &Vocabulary) -> Result<()> {
    for h in sessions
        .iter_mut()
        .flat_map(|s| s.utterances.iter_mut())
        .flat_map(|u| u.nbest.iter_mut())
    {
        h.fp_lm_score = ngram.score(&vocab.encode(&h.words))?.iter().sum();
    }
    Ok(())
}

#[cfg(test)]
mod tests;
