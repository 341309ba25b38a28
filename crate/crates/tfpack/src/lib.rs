//! Context-length-bounded packing of supervised-fine-tuning samples.
//!
//! Concatenating related samples into one training sequence gives a model
//! useful context across sequence boundaries, but packing *too similar*
//! samples together invites it to parrot its neighbors. The core
//! algorithm here walks a greedy nearest-neighbor path over sample
//! embeddings while forcing every step to stay farther than a calibrated
//! threshold from the most recent selections, then cuts the path into
//! token-budgeted packs. The classic baselines (padding, sorted batching,
//! random packing, loss-weighted packing, k-NN packing) live behind the
//! same strategy interface, along with group-balanced variants and
//! fairness metrics for classification outputs.
//!
//! The library deals in ids, token counts and embedding vectors only —
//! bring your own tokenizer and embedding model. Outputs are JSONL
//! manifests that reference samples by id and embed their full
//! configuration plus a dataset checksum, so every run is reproducible
//! byte for byte.
//!
//! See the `examples/` directory for one runnable walkthrough per major
//! capability, and the `tfpack` binary for the file-based workflow.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod fairness;
pub mod geometry;
pub mod manifest;
pub mod packstats;
pub mod strategies;
pub mod synth;
pub mod tfp;

pub use dataset::{toy_embed, Dataset, EmbedSegment, EmbeddingMatrix, Sample};
pub use error::{Error, ErrorCategory, Result};
pub use fairness::{
    demographic_parity_difference, fairness_report, tfp_balanced, tfp_resampling, FairnessReport,
    PredictionRecord,
};
pub use geometry::{
    calibrate_threshold, distance, pairwise_stats, DistanceStats, PairwiseOptions, StatsMode,
};
pub use manifest::{Manifest, ManifestHeader, ManifestSummary};
pub use packstats::{
    compare_strategies, intra_pack_distance, render_table, Comparison, DistanceWeighting,
    PackReport,
};
pub use strategies::{
    knn_packing, random_packing, run_strategy, run_strategy_full, sorted_batching,
    vanilla_padding, RepetitionStats, StrategyKind, StrategySpec,
};
pub use tfp::{
    build_tfp_path, segment_into_packs, select_next, Pack, PathOrder, Selection, TfpConfig,
    Weighting,
};
