//! Vision-language localization.
//!
//! Given one text embedding describing where a user is and one image embedding
//! per view of a mapped building, produce a probability distribution over the
//! views, rank them, and score the ranking with graph-distance, same-room and
//! reciprocal-rank metrics.
//!
//! * [`world_model`]: scans as view graphs with positions and region labels.
//! * [`embedding_store`]: the binary embedding file format.
//! * [`scorer`]: logit matrices, localization distributions, contrastive loss.
//! * [`metrics`]: per-sample outcomes and aggregate reports.
//! * [`ingest`]: sample, narration and landmark loaders.
//! * [`harness`]: full-scan and k-candidate evaluation protocols.

pub mod embedding_store;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod scorer;
pub mod world_model;

pub use embedding_store::{l2_normalize, read_store, write_store, EmbeddingKind, EmbeddingStore};
pub use harness::{random_baseline, run_eval, EvalConfig, EvalOutput, Protocol};
pub use ingest::{align_narration, load_landmarks, load_samples, AlignedPair, TimedNarration};
pub use metrics::{aggregate, score_sample, Report, SampleResult};
pub use scorer::{contrastive_loss, localize, similarity_matrix, LocalizationResult, ScoreConfig};
pub use world_model::{load_scan, Distance, Scan, ScanSet, View};
