//! Per-sample localization outcomes and dataset-level reports.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorer::{LocalizationResult, ScoreError};
use crate::world_model::{Scan, ScanError};

/// Default "close" threshold in meters of graph distance.
pub const CLOSE_THRESHOLD_M: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty result list")]
    Empty,
    #[error("candidate {0:?} is not a view of the scan")]
    CandidateNotInScan(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to serialize report: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Outcome of one localization against its ground-truth view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub hit_at_1: bool,
    pub close: bool,
    pub same_room: bool,
    pub success: bool,
    /// Graph distance from the top guess to the target; `None` when unreachable.
    pub error_m: Option<f64>,
    pub reciprocal_rank: f64,
}

/// Scores the top guess of `result` against `target`.
///
/// Unreachable guesses are never close and carry no error distance.
pub fn score_sample(
    result: &LocalizationResult,
    target: &str,
    scan: &Scan,
    threshold_m: f64,
) -> Result<SampleResult> {
    if let Some(id) = result.candidate_ids().iter().find(|id| !scan.contains(id)) {
        return Err(MetricsError::CandidateNotInScan(id.clone()));
    }
    let rank = result.rank_of(target)?;
    let guess = result.guess();
    let hit_at_1 = rank == 1;
    let error_m = scan.graph_distance(guess, target)?.meters();
    let close = error_m.is_some_and(|d| d < threshold_m);
    let same_room = scan.same_region(guess, target)?;
    Ok(SampleResult {
        hit_at_1,
        close,
        same_room,
        success: hit_at_1 || close || same_room,
        error_m,
        reciprocal_rank: 1.0 / rank as f64,
    })
}

/// Dataset-level aggregates, in the column order used for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_samples: usize,
    pub success_pct: f64,
    pub hits_at_1_pct: f64,
    pub close_pct: f64,
    pub same_room_pct: f64,
    /// Mean over samples with a reachable guess; `None` if there are none.
    pub mean_error_m: Option<f64>,
    pub mrr: f64,
    pub n_unreachable: usize,
}

pub fn aggregate(results: &[SampleResult]) -> Result<Report> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = results.len() as f64;
    let pct = |f: fn(&SampleResult) -> bool| 100.0 * results.iter().filter(|r| f(r)).count() as f64 / n;
    let reachable: Vec<f64> = results.iter().filter_map(|r| r.error_m).collect();
    let mean_error_m = (!reachable.is_empty())
        .then(|| reachable.iter().sum::<f64>() / reachable.len() as f64);
    Ok(Report {
        n_samples: results.len(),
        success_pct: pct(|r| r.success),
        hits_at_1_pct: pct(|r| r.hit_at_1),
        close_pct: pct(|r| r.close),
        same_room_pct: pct(|r| r.same_room),
        mean_error_m,
        mrr: results.iter().map(|r| r.reciprocal_rank).sum::<f64>() / n,
        n_unreachable: results.len() - reachable.len(),
    })
}

pub const CSV_HEADER: &str = "success,hits_at_1,close,same_room,error,mrr,n_samples,n_unreachable";

impl Report {
    /// One CSV data row matching [`CSV_HEADER`]. Unknown error is left empty.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.success_pct,
            self.hits_at_1_pct,
            self.close_pct,
            self.same_room_pct,
            self.mean_error_m.map(|e| e.to_string()).unwrap_or_default(),
            self.mrr,
            self.n_samples,
            self.n_unreachable,
        )
    }

    pub fn write_csv(&self, mut sink: impl Write) -> Result<u64> {
        let text = format!("{CSV_HEADER}\n{}\n", self.csv_row());
        sink.write_all(text.as_bytes())?;
        Ok(text.len() as u64)
    }

    pub fn write_json(&self, mut sink: impl Write) -> Result<u64> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        sink.write_all(text.as_bytes())?;
        Ok(text.len() as u64)
    }
}
