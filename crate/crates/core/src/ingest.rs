//! Loading evaluation samples and building (text, view) supervision pairs.
//!
//! Three line-oriented inputs are understood:
//!
//! * sample documents: one JSON object per line with `text`, `scan_id`,
//!   `view_id` and optional `source` and `id`;
//! * narration documents: `{"words": [[token, t], ...], "trace": [[t, view_id], ...]}`
//!   with optional `id` and `scan_id`;
//! * landmark documents: one JSON object per line with `entity`, `scan_id`,
//!   `view_id`; a `bbox` field, if present, is ignored.
//!
//! Blank lines are skipped. A record without an `id` is keyed by its 1-based
//! line number.

use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world_model::ScanSet;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: empty text")]
    EmptyText { line: usize },
    #[error("malformed narration: {0}")]
    Narration(String),
    #[error("sample {id:?}: {message}")]
    Invalid { id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gold,
    Rxr,
    Landmarks,
}

/// One (description, view) record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    /// Sample key; text embeddings are looked up by it.
    pub id: String,
    pub text: String,
    pub scan_id: String,
    pub view_id: String,
    pub source: Source,
}

impl AlignedPair {
    /// Checks that the referenced view exists.
    pub fn validate(&self, scans: &ScanSet) -> Result<()> {
        let invalid = |message: String| IngestError::Invalid {
            id: self.id.clone(),
            message,
        };
        let scan = scans.get(&self.scan_id).map_err(|e| invalid(e.to_string()))?;
        if !scan.contains(&self.view_id) {
            return Err(invalid(format!(
                "view {:?} is not in scan {:?}",
                self.view_id, self.scan_id
            )));
        }
        Ok(())
    }
}

pub fn validate_pairs(pairs: &[AlignedPair], scans: &ScanSet) -> Result<()> {
    pairs.iter().try_for_each(|p| p.validate(scans))
}

#[derive(Deserialize)]
struct SampleLine {
    #[serde(default)]
    id: Option<String>,
    text: String,
    scan_id: String,
    view_id: String,
    #[serde(default)]
    source: Option<Source>,
}

#[derive(Deserialize)]
struct LandmarkLine {
    #[serde(default)]
    id: Option<String>,
    entity: String,
    scan_id: String,
    view_id: String,
}

fn for_each_record<T: for<'de> Deserialize<'de>>(
    source: impl BufRead,
    mut f: impl FnMut(usize, T) -> Result<()>,
) -> Result<()> {
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        f(line_no, record)?;
    }
    Ok(())
}

/// Loads a sample document. Records default to [`Source::Gold`].
pub fn load_samples(source: impl BufRead) -> Result<Vec<AlignedPair>> {
    let mut pairs = Vec::new();
    for_each_record(source, |line, rec: SampleLine| {
        if rec.text.trim().is_empty() {
            return Err(IngestError::EmptyText { line });
        }
        pairs.push(AlignedPair {
            id: rec.id.unwrap_or_else(|| line.to_string()),
            text: rec.text,
            scan_id: rec.scan_id,
            view_id: rec.view_id,
            source: rec.source.unwrap_or(Source::Gold),
        });
        Ok(())
    })?;
    Ok(pairs)
}

/// Loads entity-grounding records, mapping each entity to its whole view.
pub fn load_landmarks(source: impl BufRead) -> Result<Vec<AlignedPair>> {
    let mut pairs = Vec::new();
    for_each_record(source, |line, rec: LandmarkLine| {
        if rec.entity.trim().is_empty() {
            return Err(IngestError::EmptyText { line });
        }
        pairs.push(AlignedPair {
            id: rec.id.unwrap_or_else(|| line.to_string()),
            text: rec.entity,
            scan_id: rec.scan_id,
            view_id: rec.view_id,
            source: Source::Landmarks,
        });
        Ok(())
    })?;
    Ok(pairs)
}

/// A timestamped path narration and the pose trace of views it was spoken along.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedNarration {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub scan_id: String,
    /// `(token, time_s)`, nondecreasing in time.
    pub words: Vec<(String, f64)>,
    /// `(time_s, view_id)`, nondecreasing in time, nonempty.
    pub trace: Vec<(f64, String)>,
}

impl TimedNarration {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IngestError::Narration(m));
        if self.trace.is_empty() {
            return bad("empty pose trace".into());
        }
        if let Some((tok, t)) = self.words.iter().find(|(_, t)| !t.is_finite()) {
            return bad(format!("word {tok:?} has non-finite time {t}"));
        }
        if let Some((t, v)) = self.trace.iter().find(|(t, _)| !t.is_finite()) {
            return bad(format!("trace entry {v:?} has non-finite time {t}"));
        }
        if let Some(i) = self.words.windows(2).position(|w| w[1].1 < w[0].1) {
            return bad(format!("word times decrease at word {}", i + 1));
        }
        if let Some(i) = self.trace.windows(2).position(|w| w[1].0 < w[0].0) {
            return bad(format!("trace times decrease at entry {}", i + 1));
        }
        Ok(())
    }
}

pub fn load_narration(mut source: impl Read) -> Result<TimedNarration> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let n: TimedNarration =
        serde_json::from_str(&text).map_err(|e| IngestError::Narration(e.to_string()))?;
    n.validate()?;
    Ok(n)
}

/// Splits a narration into per-view text fragments.
///
/// Each word goes to the last view entered at or before its timestamp (words
/// spoken before the first trace entry go to the first view). Maximal runs of
/// consecutive words on the same view become one pair, joined by single
/// spaces; runs of fewer than `min_words` words are dropped. Pair ids are
/// `"{narration id}/{run index}"`, counting dropped runs.
pub fn align_narration(n: &TimedNarration, min_words: usize) -> Result<Vec<AlignedPair>> {
    n.validate()?;
    let mut pairs = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let mut run_view: Option<usize> = None;
    let mut run_index = 0;
    let mut cursor = 0;

    let mut flush = |view: usize, run: &mut Vec<&str>, run_index: &mut usize| {
        if run.len() >= min_words.max(1) {
            pairs.push(AlignedPair {
                id: format!("{}/{}", n.id, run_index),
                text: run.join(" "),
                scan_id: n.scan_id.clone(),
                view_id: n.trace[view].1.clone(),
                source: Source::Rxr,
            });
        }
        *run_index += 1;
        run.clear();
    };

    for (token, t) in &n.words {
        // words are time-ordered, so the active trace entry only moves forward
        while cursor + 1 < n.trace.len() && n.trace[cursor + 1].0 <= *t {
            cursor += 1;
        }
        // consecutive trace entries may name the same view
        let same_view = run_view.is_some_and(|v| n.trace[v].1 == n.trace[cursor].1);
        if !same_view {
            if let Some(v) = run_view {
                flush(v, &mut run, &mut run_index);
            }
            run_view = Some(cursor);
        }
        run.push(token);
    }
    if let Some(v) = run_view {
        flush(v, &mut run, &mut run_index);
    }
    Ok(pairs)
}
