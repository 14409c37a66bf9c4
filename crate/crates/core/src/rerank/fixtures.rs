//! Synthetic re-ranking sessions.
//!
//! Every paragraph becomes a session with one utterance per sentence. The
//! competing hypotheses come from confusion groups: words in one group are
//! interchangeable "homophones", and a word's position in its group is its
//! channel. The main competitor moves every confusable word of a sentence to
//! one alternative channel chosen per session, so it is as fluent as the
//! reference on its own and only earlier sentences reveal which one is right.
//! Acoustic scores favor that competitor on a configurable share of
//! utterances.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hypothesis, Session, Utterance};
use crate::error::{Error, Result};
use crate::ngram::NGramModel;
use crate::synthetic::TopicCorpus;
use crate::textcorpus::{Paragraph, Vocabulary};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionSet {
    groups: Vec<Vec<String>>,
    /// word -> (group, channel)
    index: HashMap<String, (usize, usize)>,
}

impl ConfusionSet {
    pub fn new(groups: Vec<Vec<String>>) -> Result<Self> {
        let mut index = HashMap::new();
        for (g, words) in groups.iter().enumerate() {
            if words.len() < 2 {
                return Err(Error::InvalidArgument(format!("confusion group {g} has fewer than 2 words")));
            }
            for (c, w) in words.iter().enumerate() {
                if index.insert(w.clone(), (g, c)).is_some() {
                    return Err(Error::InvalidArgument(format!("word {w:?} is in two confusion groups")));
                }
            }
        }
        Ok(Self { groups, index })
    }

    /// Word i of every topic forms group i.
    pub fn from_topics(corpus: &TopicCorpus) -> Self {
        let c = corpus.config();
        let groups = (0..c.words_per_topic)
            .map(|i| (0..corpus.topics()).map(|t| corpus.topic_word(t, i).to_owned()).collect())
            .collect();
        Self::new(groups).expect("topic words are distinct")
    }

    /// One group per non-empty line, words separated by whitespace.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
                .filter(|g| !g.is_empty())
                .collect(),
        )
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn channel(&self, word: &str) -> Option<usize> {
        self.index.get(word).map(|&(_, c)| c)
    }

    fn width(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `word` moved to `channel`, if it is confusable and not already there.
    fn swap(&self, word: &str, channel: usize) -> Option<&str> {
        let &(g, c) = self.index.get(word)?;
        let group = &self.groups[g];
        let target = channel % group.len();
        (target != c).then(|| group[target].as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    /// Share of utterances whose acoustic score prefers the competitor.
    pub corruption_rate: f64,
    pub min_margin: f64,
    pub max_margin: f64,
    /// Acoustic log-likelihood per reference word.
    pub am_per_word: f64,
    pub am_jitter: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            corruption_rate: 0.5,
            min_margin: 0.2,
            max_margin: 1.0,
            am_per_word: -2.0,
            am_jitter: 0.3,
        }
    }
}

impl FixtureConfig {
    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.corruption_rate)
            && self.min_margin > 0.0
            && self.min_margin <= self.max_margin
            && self.am_jitter >= 0.0
            && self.am_per_word.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "fixture config needs corruption_rate in [0,1] and 0 < min_margin <= max_margin".into(),
            ))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// One session per paragraph. First-pass LM scores come from `first_pass`
/// when given and are zero otherwise.
pub fn make_fixtures(
    paragraphs: &[Paragraph],
    confusions: &ConfusionSet,
    config: &FixtureConfig,
    first_pass: Option<(&NGramModel, &Vocabulary)>,
    seed: u64,
) -> Result<Vec<Session>> {
    config.validate()?;
    let width = confusions.width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sessions = Vec::with_capacity(paragraphs.len());
    for (p, para) in paragraphs.iter().enumerate() {
        let own = para
            .sentences()
            .iter()
            .flat_map(|s| s.words())
            .find_map(|w| confusions.channel(w))
            .unwrap_or(0);
        let alt = if width > 1 {
            (own + rng.gen_range(1..width)) % width
        } else {
            own
        };
        let mut utterances = Vec::with_capacity(para.sentences().len());
        for (i, sentence) in para.sentences().iter().enumerate() {
            let reference: Vec<String> = sentence.words().to_vec();
            let base = config.am_per_word * reference.len() as f64 + uniform(&mut rng, -config.am_jitter, config.am_jitter);
            let favored = rng.gen_bool(config.corruption_rate);
            let margin = uniform(&mut rng, config.min_margin, config.max_margin);
            let partial_drop = uniform(&mut rng, 0.0, 1.0) * config.max_margin;
            let deletion_drop = 1.0 + uniform(&mut rng, 0.0, 1.0);

            let mut nbest = vec![Hypothesis::new(&reference, base, 0.0)];
            let corrupt: Vec<String> = reference
                .iter()
                .map(|w| confusions.swap(w, alt).unwrap_or(w).to_owned())
                .collect();
            if corrupt != reference {
                let am = if favored { base + margin } else { base - margin };
                nbest.push(Hypothesis::new(&corrupt, am, 0.0));
            }
            if let Some(first) = reference.iter().position(|w| confusions.swap(w, alt).is_some()) {
                let mut partial = reference.clone();
                partial[first] = corrupt[first].clone();
                nbest.push(Hypothesis::new(&partial, base - partial_drop, 0.0));
            }
            if reference.len() > 1 {
                nbest.push(Hypothesis::new(&reference[..reference.len() - 1], base - deletion_drop, 0.0));
            }
            nbest.sort_by(|a, b| b.am_score.total_cmp(&a.am_score));
            let mut seen = Vec::new();
            nbest.retain(|h| {
                let fresh = !seen.contains(&h.words);
                seen.push(h.words.clone());
                fresh
            });
            if let Some((ngram, vocab)) = first_pass {
                for h in &mut nbest {
                    h.fp_lm_score = ngram.score(&vocab.encode(&h.words))?.iter().sum();
                }
            }
            utterances.push(Utterance {
                id: format!("s{p:04}-u{i}"),
                nbest,
                reference: Some(reference),
            });
        }
        sessions.push(Session {
            id: format!("s{p:04}"),
            utterances,
        });
    }
    Ok(sessions)
}
