//! Similarity scoring, localization distributions and the batch contrastive loss.

use std::cmp::Ordering;
use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_store::{l2_norm, MIN_NORM};

/// Probabilities are clamped to `[LOSS_EPS, 1 - LOSS_EPS]` inside the loss.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("temperature must be finite and positive, got {0}")]
    BadTemperature(f64),
    #[error("embedding dimension mismatch: expected {expected}, got {got} ({which})")]
    DimMismatch {
        which: String,
        expected: usize,
        got: usize,
    },
    #[error("{0} must be nonempty")]
    Empty(&'static str),
    #[error("cannot normalize zero vector ({0})")]
    ZeroVector(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("{ids} candidate ids but {scores} scores")]
    LengthMismatch { ids: usize, scores: usize },
    #[error("duplicate candidate id {0:?}")]
    DuplicateCandidate(String),
    #[error("{0:?} is not a candidate")]
    NotACandidate(String),
}

pub type Result<T, E = ScoreError> = std::result::Result<T, E>;

/// How encodings are compared.
///
/// Logits are `temperature * <t, i>`, with both sides L2-normalized first when
/// `normalize` is set. Rankings do not depend on `temperature`; only the
/// sharpness of the distribution does.
///
/// Note that [`contrastive_loss`] applies binary cross-entropy to row-softmaxed
/// logits against the identity matrix. This is not the symmetric
/// cross-entropy commonly used to pretrain image-text encoders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub normalize: bool,
    pub temperature: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            normalize: true,
            temperature: 1.0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_finite() && self.temperature > 0.0 {
            Ok(())
        } else {
            Err(ScoreError::BadTemperature(self.temperature))
        }
    }
}

fn prepare(v: &[f32], normalize: bool, which: impl Fn() -> String) -> Result<Vec<f64>> {
    let v: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ScoreError::NonFinite(which()));
    }
    if !normalize {
        return Ok(v);
    }
    let norm = l2_norm(&v);
    if norm < MIN_NORM {
        return Err(ScoreError::ZeroVector(which()));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

fn prepare_all<T: AsRef<[f32]>>(
    items: &[T],
    dim: usize,
    normalize: bool,
    label: &'static str,
) -> Result<Vec<Vec<f64>>> {
    items
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(ScoreError::DimMismatch {
                    which: format!("{label}[{i}]"),
                    expected: dim,
                    got: v.len(),
                });
            }
            prepare(v, normalize, || format!("{label}[{i}]"))
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unscaled similarities `<t_n, i_m>` (after optional normalization).
fn raw_similarity<T: AsRef<[f32]>, I: AsRef<[f32]>>(
    texts: &[T],
    images: &[I],
    normalize: bool,
) -> Result<Array2<f64>> {
    let first = texts.first().ok_or(ScoreError::Empty("texts"))?;
    if images.is_empty() {
        return Err(ScoreError::Empty("images"));
    }
    let dim = first.as_ref().len();
    let t = prepare_all(texts, dim, normalize, "texts")?;
    let i = prepare_all(images, dim, normalize, "images")?;
    Ok(Array2::from_shape_fn((t.len(), i.len()), |(n, m)| dot(&t[n], &i[m])))
}

/// The `N x M` logit matrix between `N` text encodings and `M` image encodings.
pub fn similarity_matrix<T: AsRef<[f32]>, I: AsRef<[f32]>>(
    texts: &[T],
    images: &[I],
    cfg: &ScoreConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let mut logits = raw_similarity(texts, images, cfg.normalize)?;
    logits.mapv_inplace(|x| cfg.temperature * x);
    Ok(logits)
}

/// A query's distribution over candidate views, with the induced ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationResult {
    candidate_ids: Vec<String>,
    /// Similarity before temperature scaling; the ranking key.
    scores: Vec<f64>,
    probs: Vec<f64>,
    /// Candidate indices, most probable first.
    ranking: Vec<usize>,
}

impl LocalizationResult {
    /// Builds the distribution `softmax(temperature * scores)` over `ids`.
    ///
    /// Ranking is by descending score, ties broken by ascending id. The
    /// normalizer is summed in ranking order so the probabilities do not
    /// depend on the order candidates were supplied in.
    pub fn from_scores(ids: Vec<String>, scores: Vec<f64>, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(ScoreError::BadTemperature(temperature));
        }
        if ids.len() != scores.len() {
            return Err(ScoreError::LengthMismatch {
                ids: ids.len(),
                scores: scores.len(),
            });
        }
        if ids.is_empty() {
            return Err(ScoreError::Empty("candidates"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(ScoreError::NonFinite("scores".into()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(ScoreError::DuplicateCandidate(id.clone()));
            }
        }

        let mut ranking: Vec<usize> = (0..ids.len()).collect();
        ranking.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| ids[a].cmp(&ids[b]))
        });

        let max = temperature * scores[ranking[0]];
        let exps: Vec<f64> = scores
            .iter()
            .map(|&s| (temperature * s - max).exp())
            .collect();
        let total: f64 = ranking.iter().map(|&i| exps[i]).sum();
        // floor keeps every component strictly positive after underflow
        let probs = exps
            .iter()
            .map(|e| (e / total).max(f64::MIN_POSITIVE))
            .collect();

        Ok(Self {
            candidate_ids: ids,
            scores,
            probs,
            ranking,
        })
    }

    pub fn candidate_ids(&self) -> &[String] {
        &self.candidate_ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Probabilities in candidate order.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Candidate indices, best first.
    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    pub fn ranked_ids(&self) -> impl Iterator<Item = &str> {
        self.ranking.iter().map(|&i| self.candidate_ids[i].as_str())
    }

    /// The top-ranked candidate.
    pub fn guess(&self) -> &str {
        &self.candidate_ids[self.ranking[0]]
    }

    pub fn prob_of(&self, id: &str) -> Option<f64> {
        self.candidate_ids
            .iter()
            .position(|c| c == id)
            .map(|i| self.probs[i])
    }

    /// 1-based position of `target` in the ranking.
    pub fn rank_of(&self, target: &str) -> Result<usize> {
        self.ranked_ids()
            .position(|id| id == target)
            .map(|p| p + 1)
            .ok_or_else(|| ScoreError::NotACandidate(target.to_owned()))
    }
}

/// Scores one text encoding against a scan's candidate views.
pub fn localize<Q, I, S>(query: &Q, candidates: &[(S, I)], cfg: &ScoreConfig) -> Result<LocalizationResult>
where
    Q: AsRef<[f32]> + ?Sized,
    I: AsRef<[f32]>,
    S: AsRef<str>,
{
    cfg.validate()?;
    if candidates.is_empty() {
        return Err(ScoreError::Empty("candidates"));
    }
    let images: Vec<&[f32]> = candidates.iter().map(|(_, v)| v.as_ref()).collect();
    let raw = raw_similarity(&[query.as_ref()], &images, cfg.normalize)?;
    let ids = candidates.iter().map(|(id, _)| id.as_ref().to_owned()).collect();
    LocalizationResult::from_scores(ids, raw.row(0).to_vec(), cfg.temperature)
}

/// Mean binary cross-entropy between row-softmaxed logits and the identity.
///
/// Each `N x N` cell contributes `-[y ln p + (1 - y) ln(1 - p)]` with `y` the
/// identity entry and `p` clamped to `[LOSS_EPS, 1 - LOSS_EPS]`.
pub fn contrastive_loss(batch_logits: ArrayView2<f64>) -> Result<f64> {
    let (rows, cols) = batch_logits.dim();
    if rows != cols {
        return Err(ScoreError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(ScoreError::Empty("batch"));
    }
    if batch_logits.iter().any(|x| !x.is_finite()) {
        return Err(ScoreError::NonFinite("batch logits".into()));
    }

    let mut total = 0.0;
    for (n, row) in batch_logits.outer_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (m, e) in exps.iter().enumerate() {
            let p = (e / z).clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            total -= if n == m { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(total / (rows * cols) as f64)
}
