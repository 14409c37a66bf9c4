use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Hypothesis, Session, Utterance, UtteranceResult};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HypRecord {
    words: String,
    am: f64,
    fplm: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UttRecord {
    session_id: String,
    utt_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r#ref: Option<String>,
    nbest: Vec<HypRecord>,
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

/// Reads one utterance per line. Lines of one session must be consecutive
/// and in temporal order.
pub fn read_sessions(path: &Path) -> Result<Vec<Session>> {
    let reader = BufReader::new(File::open(path)?);
    let mut sessions: Vec<Session> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UttRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let nbest: Vec<Hypothesis> = rec
            .nbest
            .into_iter()
            .map(|h| Hypothesis {
                words: split(&h.words),
                am_score: h.am,
                fp_lm_score: h.fplm,
            })
            .collect();
        if nbest.is_empty() || nbest.iter().any(|h| !h.am_score.is_finite() || !h.fp_lm_score.is_finite()) {
            return Err(Error::Format(format!(
                "{}:{}: n-best must be non-empty with finite scores",
                path.display(),
                n + 1
            )));
        }
        let utt = Utterance {
            id: rec.utt_id,
            nbest,
            reference: rec.r#ref.as_deref().map(split),
        };
        match sessions.last_mut() {
            Some(s) if s.id == rec.session_id => s.utterances.push(utt),
            _ => {
                if sessions.iter().any(|s| s.id == rec.session_id) {
                    return Err(Error::Format(format!(
                        "{}:{}: session {} is not contiguous",
                        path.display(),
                        n + 1,
                        rec.session_id
                    )));
                }
                sessions.push(Session {
                    id: rec.session_id,
                    utterances: vec![utt],
                });
            }
        }
    }
    Ok(sessions)
}

pub fn write_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in sessions {
        for u in &s.utterances {
            let rec = UttRecord {
                session_id: s.id.clone(),
                utt_id: u.id.clone(),
                r#ref: u.reference.as_ref().map(|r| r.join(" ")),
                nbest: u
                    .nbest
                    .iter()
                    .map(|h| HypRecord {
                        words: h.words.join(" "),
                        am: h.am_score,
                        fplm: h.fp_lm_score,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `utt_id<TAB>transcript` lines.
pub fn write_transcripts<W: Write>(mut w: W, results: &[Vec<UtteranceResult>]) -> Result<()> {
    for r in results.iter().flatten() {
        writeln!(w, "{}\t{}", r.utt_id, r.transcript.join(" "))?;
    }
    Ok(())
}
