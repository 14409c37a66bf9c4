use std::ops::{Add, AddAssign};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WerStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_words: usize,
}

impl WerStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Errors per reference word. An empty reference gives 0 when the
    /// hypothesis is empty too and infinity otherwise.
    pub fn wer(&self) -> f64 {
        match (self.errors(), self.reference_words) {
            (0, _) => 0.0,
            (_, 0) => f64::INFINITY,
            (e, n) => e as f64 / n as f64,
        }
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.wer()
    }
}

impl Add for WerStats {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            substitutions: self.substitutions + o.substitutions,
            insertions: self.insertions + o.insertions,
            deletions: self.deletions + o.deletions,
            reference_words: self.reference_words + o.reference_words,
        }
    }
}

impl AddAssign for WerStats {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Minimum edit alignment. Among alignments with the fewest edits the one
/// with the most substitutions wins; the insertion and deletion counts then
/// follow from the length difference, so the result is unique.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> WerStats {
    let (n, m) = (reference.len(), hypothesis.len());
    // (edits, insertions + deletions), compared lexicographically
    let mut prev: Vec<(usize, usize)> = (0..=m).map(|j| (j, j)).collect();
    let mut cur = vec![(0, 0); m + 1];
    for i in 1..=n {
        cur[0] = (i, i);
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let diag = (prev[j - 1].0 + usize::from(!same), prev[j - 1].1);
            let del = (prev[j].0 + 1, prev[j].1 + 1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1 + 1);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (edits, indels) = prev[m];
    let substitutions = edits - indels;
    // I − D = m − n and I + D = indels
    let insertions = if m >= n {
        (indels + (m - n)) / 2
    } else {
        (indels - (n - m)) / 2
    };
    WerStats {
        substitutions,
        insertions,
        deletions: indels - insertions,
        reference_words: n,
    }
}

/// Pooled statistics over `(reference, hypothesis)` pairs.
pub fn corpus_wer<S: AsRef<str>, T: AsRef<str>>(pairs: &[(Vec<S>, Vec<T>)]) -> WerStats {
    pairs
        .iter()
        .map(|(r, h)| wer(r, h))
        .fold(WerStats::default(), |a, b| a + b)
}

/// Relative WER reduction in percent.
pub fn werr(baseline: f64, new: f64) -> Result<f64> {
    if baseline == 0.0 || !baseline.is_finite() {
        return Err(Error::InvalidArgument(format!("baseline WER {baseline} must be non-zero")));
    }
    Ok(100.0 * (baseline - new) / baseline)
}
