use super::Sentence;

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn clean_word(raw: &str) -> Option<String> {
    let w = raw.trim_matches('\'');
    if w.is_empty() {
        None
    } else {
        Some(w.to_owned())
    }
}

fn to_sentence(fragment: &str) -> Option<Sentence> {
    let cleaned: String = fragment
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect();
    let words: Vec<String> = cleaned.split_whitespace().filter_map(clean_word).collect();
    Sentence::new(words).ok()
}

/// Simplified text normalizer.
///
/// Splits each line at `.`, `!` and `?`, lowercases, replaces every other
/// non-alphanumeric character except the apostrophe with whitespace, and
/// collapses whitespace. Fragments with no words are dropped.
pub fn normalize_text<S: AsRef<str>>(raw_lines: &[S]) -> Vec<Sentence> {
    raw_lines
        .iter()
        .flat_map(|line| line.as_ref().split(is_terminator).filter_map(to_sentence))
        .collect()
}
