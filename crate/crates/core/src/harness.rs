//! Evaluation protocols over a sample set.
//!
//! Two protocols are supported. `FullScan` ranks every view of the sample's
//! scan. `KCandidate` ranks the target plus `k - 1` distinct distractors drawn
//! uniformly without replacement from the rest of the scan.
//!
//! Every sample draws from its own RNG, seeded from the global seed and the
//! sample key (see [`sample_rng`]), so results are independent of evaluation
//! order, worker count, and which other samples are present.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::{EmbeddingStore, StoreError};
use crate::ingest::AlignedPair;
use crate::metrics::{self, MetricsError, Report, SampleResult, CLOSE_THRESHOLD_M};
use crate::scorer::{self, LocalizationResult, ScoreConfig, ScoreError};
use crate::world_model::{Scan, ScanError, ScanSet};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("k must be at least 2, got {0}")]
    BadK(usize),
    #[error("k = {k} exceeds the {views} views of scan {scan:?}")]
    KTooLarge { scan: String, k: usize, views: usize },
    #[error("threshold must be finite and nonnegative, got {0}")]
    BadThreshold(f64),
    #[error("sample {sample:?}: no text embedding")]
    MissingText { sample: String },
    #[error("sample {sample:?}: no image embedding for view {view:?}")]
    MissingImage { sample: String, view: String },
    #[error("sample {sample:?}: {source}")]
    Scan {
        sample: String,
        #[source]
        source: ScanError,
    },
    #[error("sample {sample:?}: {source}")]
    Score {
        sample: String,
        #[source]
        source: ScoreError,
    },
    #[error("sample {sample:?}: {source}")]
    Metrics {
        sample: String,
        #[source]
        source: MetricsError,
    },
    #[error(transparent)]
    Report(#[from] MetricsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("failed to build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("failed to write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to serialize output: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FullScan,
    KCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub protocol: Protocol,
    /// Candidate count for [`Protocol::KCandidate`].
    pub k: usize,
    pub seed: u64,
    pub threshold_m: f64,
    pub score: ScoreConfig,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Keep each sample's full distribution in its [`SampleRecord`].
    pub keep_distributions: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::FullScan,
            k: 20,
            seed: 0,
            threshold_m: CLOSE_THRESHOLD_M,
            score: ScoreConfig::default(),
            workers: None,
            keep_distributions: false,
        }
    }
}

/// Produces a localization over a fixed candidate list.
///
/// `rng` is the sample's own stream, already advanced past the candidate draw.
pub trait CandidateScorer: Sync {
    fn localize(
        &self,
        sample: &AlignedPair,
        candidates: &[&str],
        rng: &mut ChaCha8Rng,
    ) -> Result<LocalizationResult>;
}

/// Dot-product scoring of precomputed text and image embeddings.
///
/// Text embeddings are keyed by sample id, image embeddings by view id.
pub struct EmbeddingScorer<'a> {
    pub text: &'a EmbeddingStore,
    pub image: &'a EmbeddingStore,
    pub config: ScoreConfig,
}

impl CandidateScorer for EmbeddingScorer<'_> {
    fn localize(
        &self,
        sample: &AlignedPair,
        candidates: &[&str],
        _rng: &mut ChaCha8Rng,
    ) -> Result<LocalizationResult> {
        let query = self.text.get(&sample.id).ok_or_else(|| HarnessError::MissingText {
            sample: sample.id.clone(),
        })?;
        let views = candidates
            .iter()
            .map(|&id| {
                self.image
                    .get(id)
                    .map(|v| (id, v))
                    .ok_or_else(|| HarnessError::MissingImage {
                        sample: sample.id.clone(),
                        view: id.to_owned(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        scorer::localize(query, &views, &self.config).map_err(|source| HarnessError::Score {
            sample: sample.id.clone(),
            source,
        })
    }
}

/// Uniformly random ranking: i.i.d. uniform scores per candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomScorer {
    pub temperature: f64,
}

impl CandidateScorer for RandomScorer {
    fn localize(
        &self,
        sample: &AlignedPair,
        candidates: &[&str],
        rng: &mut ChaCha8Rng,
    ) -> Result<LocalizationResult> {
        let scores = candidates.iter().map(|_| rng.gen::<f64>()).collect();
        let ids = candidates.iter().map(|s| s.to_string()).collect();
        LocalizationResult::from_scores(ids, scores, self.temperature).map_err(|source| {
            HarnessError::Score {
                sample: sample.id.clone(),
                source,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProb {
    pub view_id: String,
    pub prob: f64,
}

/// Per-sample evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub scan_id: String,
    pub target: String,
    pub guess: String,
    pub rank: usize,
    pub n_candidates: usize,
    #[serde(flatten)]
    pub result: SampleResult,
    /// Candidates best first; present only when distributions are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Vec<CandidateProb>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: Report,
    pub samples: Vec<SampleRecord>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The RNG for one sample: ChaCha8 seeded with
/// `splitmix64(seed ^ splitmix64(fnv1a64(key)))`.
pub fn sample_rng(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(fnv1a64(key.as_bytes()))))
}

/// Candidate view indices for one sample, in scan order.
pub fn candidate_set(
    scan: &Scan,
    target: usize,
    protocol: Protocol,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let m = scan.len();
    match protocol {
        Protocol::FullScan => Ok((0..m).collect()),
        Protocol::KCandidate => {
            if k < 2 {
                return Err(HarnessError::BadK(k));
            }
            if k > m {
                return Err(HarnessError::KTooLarge {
                    scan: scan.scan_id().to_owned(),
                    k,
                    views: m,
                });
            }
            let mut picked: Vec<usize> = index::sample(rng, m - 1, k - 1)
                .into_iter()
                // skip over the target's slot
                .map(|i| if i >= target { i + 1 } else { i })
                .collect();
            picked.push(target);
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

fn check_config(samples: &[AlignedPair], scans: &ScanSet, cfg: &EvalConfig) -> Result<()> {
    if samples.is_empty() {
        return Err(HarnessError::NoSamples);
    }
    if !(cfg.threshold_m.is_finite() && cfg.threshold_m >= 0.0) {
        return Err(HarnessError::BadThreshold(cfg.threshold_m));
    }
    cfg.score.validate().map_err(|source| HarnessError::Score {
        sample: String::new(),
        source,
    })?;
    if cfg.protocol == Protocol::KCandidate {
        if cfg.k < 2 {
            return Err(HarnessError::BadK(cfg.k));
        }
        for s in samples {
            let scan = scans.get(&s.scan_id).map_err(|source| HarnessError::Scan {
                sample: s.id.clone(),
                source,
            })?;
            if cfg.k > scan.len() {
                return Err(HarnessError::KTooLarge {
                    scan: scan.scan_id().to_owned(),
                    k: cfg.k,
                    views: scan.len(),
                });
            }
        }
    }
    Ok(())
}

fn evaluate_one(
    sample: &AlignedPair,
    scans: &ScanSet,
    scorer: &dyn CandidateScorer,
    cfg: &EvalConfig,
) -> Result<SampleRecord> {
    let scan_err = |source| HarnessError::Scan {
        sample: sample.id.clone(),
        source,
    };
    let scan = scans.get(&sample.scan_id).map_err(scan_err)?;
    let target = scan.index_of(&sample.view_id).map_err(scan_err)?;

    let mut rng = sample_rng(cfg.seed, &sample.id);
    let picked = candidate_set(scan, target, cfg.protocol, cfg.k, &mut rng)?;
    let views = scan.views();
    let ids: Vec<&str> = picked.iter().map(|&i| views[i].view_id.as_str()).collect();

    let result = scorer.localize(sample, &ids, &mut rng)?;
    let metrics_err = |source| HarnessError::Metrics {
        sample: sample.id.clone(),
        source,
    };
    let scored = metrics::score_sample(&result, &sample.view_id, scan, cfg.threshold_m)
        .map_err(metrics_err)?;
    let rank = result
        .rank_of(&sample.view_id)
        .map_err(|e| metrics_err(e.into()))?;

    let distribution = cfg.keep_distributions.then(|| {
        result
            .ranking()
            .iter()
            .map(|&i| CandidateProb {
                view_id: result.candidate_ids()[i].clone(),
                prob: result.probs()[i],
            })
            .collect()
    });

    Ok(SampleRecord {
        id: sample.id.clone(),
        scan_id: sample.scan_id.clone(),
        target: sample.view_id.clone(),
        guess: result.guess().to_owned(),
        rank,
        n_candidates: ids.len(),
        result: scored,
        distribution,
    })
}

/// Evaluates every sample with `scorer` under `cfg`'s protocol.
///
/// The first failing sample (in input order) determines the error.
pub fn run_protocol(
    samples: &[AlignedPair],
    scans: &ScanSet,
    scorer: &dyn CandidateScorer,
    cfg: &EvalConfig,
) -> Result<EvalOutput> {
    check_config(samples, scans, cfg)?;
    let run = || -> Vec<Result<SampleRecord>> {
        samples
            .par_iter()
            .map(|s| evaluate_one(s, scans, scorer, cfg))
            .collect()
    };
    let outcomes = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(run),
        None => run(),
    };
    let records = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let results: Vec<SampleResult> = records.iter().map(|r| r.result).collect();
    Ok(EvalOutput {
        report: metrics::aggregate(&results)?,
        samples: records,
    })
}

/// Evaluates precomputed embeddings.
pub fn run_eval(
    samples: &[AlignedPair],
    scans: &ScanSet,
    text_store: &EmbeddingStore,
    image_store: &EmbeddingStore,
    cfg: &EvalConfig,
) -> Result<EvalOutput> {
    let scorer = EmbeddingScorer {
        text: text_store,
        image: image_store,
        config: cfg.score,
    };
    run_protocol(samples, scans, &scorer, cfg)
}

/// A seeded uniformly random ranker under the same protocol.
pub fn random_baseline(samples: &[AlignedPair], scans: &ScanSet, cfg: &EvalConfig) -> Result<EvalOutput> {
    let scorer = RandomScorer {
        temperature: cfg.score.temperature,
    };
    run_protocol(samples, scans, &scorer, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes the dataset-level report and returns the byte count.
pub fn emit_report(report: &Report, sink: impl Write, format: ReportFormat) -> Result<u64> {
    Ok(match format {
        ReportFormat::Json => report.write_json(sink)?,
        ReportFormat::Csv => report.write_csv(sink)?,
    })
}

/// Writes one JSON object per sample, in sample order.
pub fn emit_per_sample(records: &[SampleRecord], mut sink: impl Write) -> Result<u64> {
    let mut written = 0;
    for r in records {
        let mut line = serde_json::to_string(r)?;
        line.push('\n');
        sink.write_all(line.as_bytes())?;
        written += line.len() as u64;
    }
    sink.flush()?;
    Ok(written)
}
