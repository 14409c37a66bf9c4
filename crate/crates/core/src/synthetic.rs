//! Synthetic paragraphs whose topic is announced once.
//!
//! Each paragraph picks a topic. Its first sentence opens with the topic
//! token; every other word in every sentence is a topic word (with
//! probability `topic_word_prob`) or a shared function word. A model that
//! sees earlier sentences knows the topic before the first topic word of a
//! later sentence; a model reset at each sentence does not. With
//! `repeat_prob`, a topic word may instead repeat one already used in the
//! same sentence. With `echo_words > 0`, every sentence also opens and
//! closes with the same phrase of `echo_len` words drawn from a shared pool,
//! so its tail can only be predicted by looking back within the sentence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcorpus::{Paragraph, Sentence};

const STEMS: [&str; 8] = ["sail", "bake", "tune", "farm", "code", "race", "mine", "fish"];
const FUNCTION_WORDS: [&str; 20] = [
    "the", "a", "of", "and", "to", "in", "is", "it", "that", "was", "for", "on", "with", "as", "by", "at", "from",
    "this", "be", "or",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicCorpusConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub function_words: usize,
    pub sentences_per_paragraph: usize,
    pub min_sentence_words: usize,
    pub max_sentence_words: usize,
    pub topic_word_prob: f64,
    pub repeat_prob: f64,
    pub echo_words: usize,
    pub echo_len: usize,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        Self {
            topics: 8,
            words_per_topic: 10,
            function_words: 20,
            sentences_per_paragraph: 4,
            min_sentence_words: 3,
            max_sentence_words: 6,
            topic_word_prob: 0.7,
            repeat_prob: 0.0,
            echo_words: 0,
            echo_len: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TopicCorpus {
    config: TopicCorpusConfig,
    topic_tokens: Vec<String>,
    topic_words: Vec<Vec<String>>,
    function_words: Vec<String>,
    echo_words: Vec<String>,
}

impl TopicCorpus {
    pub fn new(config: TopicCorpusConfig) -> Result<Self> {
        let c = &config;
        if c.topics < 2 || c.words_per_topic == 0 || c.function_words == 0 {
            return Err(Error::InvalidArgument(
                "need at least 2 topics, 1 topic word and 1 function word".into(),
            ));
        }
        if c.sentences_per_paragraph == 0 || c.min_sentence_words < 2 || c.min_sentence_words > c.max_sentence_words {
            return Err(Error::InvalidArgument(
                "need sentences_per_paragraph >= 1 and 2 <= min_sentence_words <= max_sentence_words".into(),
            ));
        }
        if !(0.0..=1.0).contains(&c.topic_word_prob) || !(0.0..=1.0).contains(&c.repeat_prob) {
            return Err(Error::InvalidArgument("topic_word_prob and repeat_prob must lie in [0, 1]".into()));
        }
        let topic_tokens: Vec<String> = (0..c.topics)
            .map(|k| STEMS.get(k).map_or_else(|| format!("topic{k}"), |s| s.to_string()))
            .collect();
        let topic_words = topic_tokens
            .iter()
            .map(|t| (0..c.words_per_topic).map(|i| format!("{t}{i}")).collect())
            .collect();
        let function_words = (0..c.function_words)
            .map(|i| FUNCTION_WORDS.get(i).map_or_else(|| format!("fn{i}"), |s| s.to_string()))
            .collect();
        let echo_words = (0..c.echo_words).map(|i| format!("echo{i}")).collect();
        Ok(Self {
            config,
            topic_tokens,
            topic_words,
            function_words,
            echo_words,
        })
    }

    pub fn config(&self) -> &TopicCorpusConfig {
        &self.config
    }

    pub fn topics(&self) -> usize {
        self.topic_tokens.len()
    }

    pub fn topic_token(&self, topic: usize) -> &str {
        &self.topic_tokens[topic]
    }

    /// Word `i` of `topic`.
    pub fn topic_word(&self, topic: usize, i: usize) -> &str {
        &self.topic_words[topic][i]
    }

    /// Topic owning `word` if it is a topic word (not the topic token).
    pub fn topic_of_word(&self, word: &str) -> Option<usize> {
        self.topic_words.iter().position(|ws| ws.iter().any(|w| w == word))
    }

    /// Topic announced by `token`.
    pub fn topic_of_token(&self, token: &str) -> Option<usize> {
        self.topic_tokens.iter().position(|t| t == token)
    }

    /// The word at the same index in topic `to`, for topic words.
    pub fn counterpart(&self, word: &str, to: usize) -> Option<&str> {
        let from = self.topic_of_word(word)?;
        let i = self.topic_words[from].iter().position(|w| w == word)?;
        Some(&self.topic_words[to][i])
    }

    fn sentence(&self, topic: usize, opening: bool, rng: &mut ChaCha8Rng) -> Sentence {
        let c = &self.config;
        let n = rng.gen_range(c.min_sentence_words..=c.max_sentence_words);
        let mut words = Vec::with_capacity(n);
        if opening {
            words.push(self.topic_tokens[topic].clone());
        }
        let echo: Vec<String> = if self.echo_words.is_empty() {
            Vec::new()
        } else {
            (0..c.echo_len).map(|_| self.echo_words.choose(rng).expect("non-empty").clone()).collect()
        };
        words.extend(echo.iter().cloned());
        // the body keeps its drawn length; echoes come on top
        let n = if echo.is_empty() { n } else { n + echo.len() };
        let mut used: Vec<String> = Vec::new();
        while words.len() < n {
            let w = if rng.gen_bool(c.topic_word_prob) {
                let w = if !used.is_empty() && rng.gen_bool(c.repeat_prob) {
                    used.choose(rng)
                } else {
                    self.topic_words[topic].choose(rng)
                };
                let w = w.expect("non-empty word list").clone();
                used.push(w.clone());
                w
            } else {
                self.function_words.choose(rng).expect("non-empty word list").clone()
            };
            words.push(w);
        }
        words.extend(echo);
        Sentence::new(words).expect("generated sentence is valid")
    }

    pub fn paragraph(&self, topic: usize, rng: &mut ChaCha8Rng) -> Paragraph {
        let sentences = (0..self.config.sentences_per_paragraph)
            .map(|i| self.sentence(topic, i == 0, rng))
            .collect();
        Paragraph::new(sentences).expect("generated paragraph is valid")
    }

    /// `count` paragraphs with uniformly drawn topics.
    pub fn generate(&self, count: usize, seed: u64) -> Vec<Paragraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let topic = rng.gen_range(0..self.topics());
                self.paragraph(topic, &mut rng)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paragraphs_follow_the_config() {
        let tc = TopicCorpus::new(TopicCorpusConfig::default()).unwrap();
        let ps = tc.generate(50, 3);
        for p in &ps {
            assert_eq!(p.sentences().len(), 4);
            let first = &p.sentences()[0].words()[0];
            let topic = tc.topic_of_token(first).unwrap();
            for s in p.sentences() {
                assert!((3..=6).contains(&s.words().len()));
                for w in s.words() {
                    if let Some(t) = tc.topic_of_word(w) {
                        assert_eq!(t, topic);
                    }
                }
            }
        }
        assert_eq!(tc.generate(50, 3), ps);
        assert_ne!(tc.generate(50, 4), ps);
    }

    #[test]
    fn echo_phrases_open_and_close_each_sentence() {
        let tc = TopicCorpus::new(TopicCorpusConfig {
            echo_words: 5,
            echo_len: 2,
            ..TopicCorpusConfig::default()
        })
        .unwrap();
        for p in tc.generate(20, 1) {
            for (i, s) in p.sentences().iter().enumerate() {
                // the topic token counts towards the drawn length
                assert!((7..=10).contains(&s.words().len()));
                let w = &s.words()[usize::from(i == 0)..];
                assert_eq!(w[..2], w[w.len() - 2..]);
                assert!(w[0].starts_with("echo"));
                assert!(!w[2..w.len() - 2].iter().any(|x| x.starts_with("echo")));
            }
        }
    }

    #[test]
    fn counterparts_map_index_to_index() {
        let tc = TopicCorpus::new(TopicCorpusConfig::default()).unwrap();
        assert_eq!(tc.counterpart("sail3", 1), Some("bake3"));
        assert_eq!(tc.counterpart("the", 1), None);
        assert_eq!(tc.topic_of_word("sail"), None);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = TopicCorpusConfig {
            topics: 1,
            ..TopicCorpusConfig::default()
        };
        assert!(TopicCorpus::new(bad).is_err());
        let bad = TopicCorpusConfig {
            min_sentence_words: 7,
            ..TopicCorpusConfig::default()
        };
        assert!(TopicCorpus::new(bad).is_err());
    }
}
