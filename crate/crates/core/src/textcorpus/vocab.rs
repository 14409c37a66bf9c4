use std::collections::HashMap;

use super::{Level, Paragraph, SegmentedCorpus, Sentence};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOUNDARY: &str = "<s>";
pub const UNK_ID: u32 = 0;
pub const BOUNDARY_ID: u32 = 1;

/// Bijective token ↔ id map with `<unk>` at 0 and `<s>` at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list whose first two entries
    /// are `<unk>` and `<s>`.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != UNK || tokens[1] != BOUNDARY {
            return Err(Error::Parse(format!(
                "vocabulary must start with {UNK} and {BOUNDARY}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Parse(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keeps `<unk>`, `<s>`, then the `max_size − 2` most frequent words,
    /// ties broken lexicographically.
    pub fn build(corpus: &SegmentedCorpus, max_size: usize) -> Result<Self> {
        if max_size < 3 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary max_size must be at least 3, got {max_size}"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in corpus.items().iter().flatten() {
            if t != BOUNDARY && t != UNK {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = [UNK, BOUNDARY]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .map(str::to_owned)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::IdOutOfRange {
                id: id as usize,
                size: self.tokens.len(),
            })
    }

    /// Encodes one corpus item (interior `<s>` allowed) with a leading `<s>`.
    pub fn encode<S: AsRef<str>>(&self, item: &[S]) -> Vec<u32> {
        std::iter::once(BOUNDARY_ID)
            .chain(item.iter().map(|t| self.id(t.as_ref())))
            .collect()
    }

    pub fn encode_sentence(&self, s: &Sentence) -> Vec<u32> {
        self.encode(s.words())
    }

    pub fn encode_paragraph(&self, p: &Paragraph) -> Vec<u32> {
        self.encode(&p.tokens())
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(str::to_owned)).collect()
    }

    /// Decodes and drops the leading `<s>`: inverse of [`Vocabulary::encode`]
    /// for in-vocabulary items.
    pub fn decode_item(&self, ids: &[u32]) -> Result<Vec<String>> {
        let body = match ids.first() {
            Some(&BOUNDARY_ID) => &ids[1..],
            _ => ids,
        };
        self.decode(body)
    }

    pub fn encode_corpus(&self, corpus: &SegmentedCorpus) -> EncodedCorpus {
        EncodedCorpus {
            level: corpus.level(),
            vocab_size: self.len(),
            items: corpus.items().iter().map(|i| self.encode(i)).collect(),
        }
    }
}

/// Corpus items encoded under one vocabulary, each starting with `<s>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedCorpus {
    pub level: Level,
    pub vocab_size: usize,
    pub items: Vec<Vec<u32>>,
}

impl EncodedCorpus {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Number of predicted positions (all tokens after the leading `<s>`).
    pub fn predicted_tokens(&self) -> usize {
        self.items.iter().map(|i| i.len().saturating_sub(1)).sum()
    }
}
