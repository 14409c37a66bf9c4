use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Level, Paragraph, SegmentedCorpus, Sentence, Vocabulary};
use crate::error::Result;

fn lines(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

/// Reads a corpus file: one item per line, whitespace-separated tokens,
/// paragraphs with `<s>` between sentences.
pub fn read_corpus(path: &Path, level: Level) -> Result<SegmentedCorpus> {
    let items = lines(path)?
        .iter()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect();
    Ok(SegmentedCorpus::new(level, items))
}

pub fn read_paragraphs(path: &Path) -> Result<Vec<Paragraph>> {
    lines(path)?
        .iter()
        .map(|l| Paragraph::from_tokens(&l.split_whitespace().collect::<Vec<_>>()))
        .collect()
}

pub fn write_sentences(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in sentences {
        writeln!(w, "{}", s.words().join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_paragraphs(path: &Path, paragraphs: &[Paragraph]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in paragraphs {
        writeln!(w, "{}", p.tokens().join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram<W: Write>(mut w: W, bins: &[(usize, usize)]) -> Result<()> {
    for (start, count) in bins {
        writeln!(w, "{start}\t{count}")?;
    }
    Ok(())
}

impl Vocabulary {
    /// One token per line; the id is the zero-based line number.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in self.tokens() {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let tokens = reader
            .lines()
            .map(|l| l.map(|s| s.trim().to_owned()))
            .collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens.into_iter().filter(|t| !t.is_empty()).collect())
    }
}
