//! Sentence and paragraph corpora, vocabularies, and their file formats.

mod io;
mod normalize;
mod vocab;

pub use io::{
    read_corpus, read_paragraphs, write_histogram, write_paragraphs, write_sentences,
};
pub use normalize::normalize_text;
pub use vocab::{EncodedCorpus, Vocabulary, BOUNDARY, BOUNDARY_ID, UNK, UNK_ID};

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

/// A normalized sentence: non-empty, no boundary symbols inside.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sentence {
    words: Vec<String>,
}

impl Sentence {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::InvalidArgument("empty sentence".into()));
        }
        if words.iter().any(|w| w == BOUNDARY || w.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "sentence contains a boundary symbol or empty word: {:?}",
                words
            )));
        }
        Ok(Self { words })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.split_whitespace().map(str::to_owned).collect())
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Characters of all words plus one space between consecutive words.
    pub fn char_len(&self) -> usize {
        self.words.iter().map(|w| w.chars().count()).sum::<usize>() + self.words.len() - 1
    }
}

/// Consecutive sentences treated as one training or evaluation item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Paragraph {
    sentences: Vec<Sentence>,
}

impl Paragraph {
    pub fn new(sentences: Vec<Sentence>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("empty paragraph".into()));
        }
        Ok(Self { sentences })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn into_sentences(self) -> Vec<Sentence> {
        self.sentences
    }

    /// Sentence lengths plus one separator character between sentences.
    pub fn char_len(&self) -> usize {
        self.sentences.iter().map(Sentence::char_len).sum::<usize>() + self.sentences.len() - 1
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(|s| s.words.len()).sum()
    }

    /// Sentences joined by single `<s>` tokens.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.word_count() + self.sentences.len());
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push(BOUNDARY.to_owned());
            }
            out.extend(s.words.iter().cloned());
        }
        out
    }

    /// Inverse of [`Paragraph::tokens`].
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let sentences = tokens
            .split(|t| t.as_ref() == BOUNDARY)
            .map(|ws| Sentence::new(ws.iter().map(|w| w.as_ref().to_owned()).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sentences)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Sentence,
    Paragraph,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" | "sent" => Ok(Level::Sentence),
            "paragraph" | "para" => Ok(Level::Paragraph),
            _ => Err(Error::Parse(format!("unknown corpus level {s:?}"))),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Sentence => "sentence",
            Level::Paragraph => "paragraph",
        })
    }
}

/// Token-string items at one segmentation level. Paragraph items carry
/// interior `<s>` separators; no item carries a leading `<s>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentedCorpus {
    level: Level,
    items: Vec<Vec<String>>,
    word_count: usize,
}

fn words_in(item: &[String]) -> usize {
    item.iter().filter(|t| *t != BOUNDARY).count()
}

impl SegmentedCorpus {
    pub fn new(level: Level, items: Vec<Vec<String>>) -> Self {
        let word_count = items.iter().map(|i| words_in(i)).sum();
        Self {
            level,
            items,
            word_count,
        }
    }

    pub fn from_sentences(sentences: &[Sentence]) -> Self {
        Self::new(Level::Sentence, sentences.iter().map(|s| s.words.clone()).collect())
    }

    pub fn from_paragraphs(paragraphs: &[Paragraph]) -> Self {
        Self::new(Level::Paragraph, paragraphs.iter().map(Paragraph::tokens).collect())
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn items(&self) -> &[Vec<String>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Non-boundary tokens over all items.
    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn item_word_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|i| words_in(i))
    }
}

/// Greedy segmentation into paragraphs of roughly `target_chars` characters.
///
/// A paragraph closes after sentence k iff
/// `|len(..=k) − target| <= |len(..=k+1) − target|`, where lengths include the
/// one-character separators. Sentences are never split.
pub fn segment_paragraphs(sentences: &[Sentence], target_chars: usize) -> Result<Vec<Paragraph>> {
    if target_chars == 0 {
        return Err(Error::InvalidArgument("target_chars must be at least 1".into()));
    }
    let target = target_chars as i64;
    let mut out = Vec::new();
    let mut current: Vec<Sentence> = Vec::new();
    let mut cum: i64 = 0;
    for (k, s) in sentences.iter().enumerate() {
        cum += s.char_len() as i64 + if current.is_empty() { 0 } else { 1 };
        current.push(s.clone());
        let close = match sentences.get(k + 1) {
            None => true,
            Some(next) => {
                let extended = cum + 1 + next.char_len() as i64;
                (cum - target).abs() <= (extended - target).abs()
            }
        };
        if close {
            out.push(Paragraph::new(std::mem::take(&mut current))?);
            cum = 0;
        }
    }
    Ok(out)
}

/// Splits paragraphs back into a sentence-level corpus. With `dedupe`, each
/// distinct sentence is kept once at its first occurrence.
pub fn paragraphs_to_sentences(corpus: &[Paragraph], dedupe: bool) -> SegmentedCorpus {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for s in corpus.iter().flat_map(|p| p.sentences.iter()) {
        if dedupe && !seen.insert(&s.words) {
            continue;
        }
        items.push(s.words.clone());
    }
    SegmentedCorpus::new(Level::Sentence, items)
}

/// Removes repeated items, keeping first occurrences in order.
pub fn dedupe_items(corpus: &SegmentedCorpus) -> SegmentedCorpus {
    let mut seen = HashSet::new();
    let items = corpus
        .items
        .iter()
        .filter(|i| seen.insert(*i))
        .cloned()
        .collect();
    SegmentedCorpus::new(corpus.level, items)
}

/// Item lengths in words, binned by `bin_width`; returns `(bin_start, count)`
/// sorted by bin start.
pub fn length_histogram(corpus: &SegmentedCorpus, bin_width: usize) -> Result<Vec<(usize, usize)>> {
    if bin_width == 0 {
        return Err(Error::InvalidArgument("bin_width must be at least 1".into()));
    }
    let mut bins = BTreeMap::new();
    for len in corpus.item_word_lengths() {
        *bins.entry(len / bin_width * bin_width).or_insert(0) += 1;
    }
    Ok(bins.into_iter().collect())
}
