//! Error type shared across the crate.
//!
//! Every failure carries enough context to be actionable (offending id,
//! line number, dimension), and maps onto one of three exit classes so
//! callers can distinguish bad input from violated constraints.

use std::path::PathBuf;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed or inconsistent input data (files, records, embeddings).
    Input,
    /// A parameter or invariant constraint was violated.
    Constraint,
    /// I/O or other internal failure.
    Internal,
}

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrorCategory::Input => write!(f, "input"),
            ErrorCategory::Constraint => write!(f, "constraint"),
            ErrorCategory::Internal => write!(f, "internal"),
        }
    }
}

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("line {line}: invalid JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },

    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { id: String, line: usize },

    #[error("line {line}: token_length must be >= 1, got {value}")]
    NonPositiveTokenLength { line: usize, value: i64 },

    #[error("line {line}: label must be 0 or 1, got {value}")]
    InvalidLabel { line: usize, value: i64 },

    #[error("line {line}: embedding has {got} dimensions, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("line {line}: embedding contains a non-finite value")]
    NonFiniteEmbedding { line: usize },

    #[error("no embedding for sample {id:?} (line {line}); provide inline embeddings or a sidecar file")]
    MissingEmbedding { id: String, line: usize },

    #[error("sample {id:?} has an inline embedding but a sidecar file was also given")]
    ConflictingEmbeddings { id: String },

    #[error("embedding sidecar {path}: {reason}")]
    BadSidecar { path: PathBuf, reason: String },

    #[error("sidecar has {rows} rows but the dataset has {samples} samples")]
    RowCountMismatch { rows: usize, samples: usize },

    #[error("vectors have different dimensions: {a} vs {b}")]
    DistanceDimMismatch { a: usize, b: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("need at least 2 samples for pairwise statistics, got {n}")]
    TooFewSamples { n: usize },

    #[error("percent must lie in (0, 100], got {0}")]
    InvalidPercent(f64),

    #[error("percentile must lie in [0, 100], got {0}")]
    InvalidPercentile(f64),

    #[error("embedding dimension must be >= 2, got {0}")]
    InvalidDim(usize),

    #[error("the selected segment is empty for every sample; nothing to embed")]
    NothingToEmbed,

    #[error("start_index {index} out of range for {n} samples")]
    StartIndexOutOfRange { index: usize, n: usize },

    #[error("all samples already visited")]
    AllVisited,

    #[error("max_pack_tokens must be >= 1")]
    ZeroPackBudget,

    #[error("batch_size must be >= 1")]
    ZeroBatchSize,

    #[error("k must satisfy 1 <= k < n (k = {k}, n = {n})")]
    InvalidK { k: usize, n: usize },

    #[error("strategy {kind}: {reason}")]
    InvalidSpec { kind: String, reason: String },

    #[error("sample {id:?} has no group attribute; balanced variants require one per sample")]
    MissingGroup { id: String },

    #[error("balanced variants require exactly two group values, found {found:?}")]
    NotBinaryGroups { found: Vec<String> },

    #[error("no records with group = {group}")]
    EmptyGroup { group: u8 },

    #[error("no records in cell (group = {group}, label = {label})")]
    EmptyCell { group: u8, label: u8 },

    #[error("line {line}: {field} must be 0 or 1, got {value}")]
    InvalidBinaryField {
        line: usize,
        field: &'static str,
        value: i64,
    },

    #[error("all packs are singletons; intra-pack distance is undefined")]
    AllPacksSingleton,

    #[error("manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },

    #[error("unknown sample id {id:?} referenced by manifest")]
    UnknownSampleId { id: String },

    #[error(
        "manifest was built for a different dataset (checksum {manifest} vs {dataset})"
    )]
    ChecksumMismatch { manifest: String, dataset: String },

    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
}

impl Error {
    /// Exit class for this error. The CLI maps `Input` to exit 2,
    /// `Constraint` to exit 3 and `Internal` to exit 1.
    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Read { .. } | Json { .. } | DuplicateId { .. } | NonPositiveTokenLength { .. }
            | InvalidLabel { .. } | DimensionMismatch { .. } | NonFiniteEmbedding { .. }
            | MissingEmbedding { .. } | ConflictingEmbeddings { .. } | BadSidecar { .. }
            | RowCountMismatch { .. } | BadManifest { .. } | UnknownSampleId { .. }
            | InvalidBinaryField { .. } => ErrorCategory::Input,

            DistanceDimMismatch { .. } | EmptyDataset | TooFewSamples { .. }
            | InvalidPercent(_) | InvalidPercentile(_) | InvalidDim(_) | NothingToEmbed
            | StartIndexOutOfRange { .. } | AllVisited | ZeroPackBudget | ZeroBatchSize
            | InvalidK { .. } | InvalidSpec { .. } | MissingGroup { .. }
            | NotBinaryGroups { .. } | EmptyGroup { .. } | EmptyCell { .. }
            | AllPacksSingleton | ChecksumMismatch { .. } | UnknownStrategy(_) => {
                ErrorCategory::Constraint
            }

            Write { .. } => ErrorCategory::Internal,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
