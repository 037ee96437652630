//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset handling, certificates, segmentation,
/// extraction and the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input and output lengths differ: {u_len} vs {y_len}")]
    LengthMismatch { u_len: usize, y_len: usize },

    #[error("invalid system order: n_a + n_b must be at least 1")]
    EmptyOrder,

    #[error("series too short: need more than {min_len} samples, got {len}")]
    SeriesTooShort { len: usize, min_len: usize },

    #[error("invalid system description: {0}")]
    InvalidSystem(String),

    #[error("divergent trajectory at sample {index}: |y| = {value:.3e} exceeds bound {bound:.3e}")]
    DivergentTrajectory { index: usize, value: f64, bound: f64 },

    #[error("degenerate signal: output variance is zero")]
    DegenerateSignal,

    #[error("rank-deficient regressors: rank {rank} < {expected} (insufficient excitation)")]
    RankDeficientRegressors { rank: usize, expected: usize },

    #[error("matrix too large for exhaustive search: {columns} columns / {subsets} subsets (limits {col_limit} / {subset_limit})")]
    TooLarge {
        columns: usize,
        subsets: usize,
        col_limit: usize,
        subset_limit: usize,
    },

    #[error("zero column at index {index}")]
    ZeroColumn { index: usize },

    #[error("leverage one at column {index}: diagonal {value} too close to 1, coherence surrogate undefined")]
    LeverageOne { index: usize, value: f64 },

    #[error("empty block")]
    EmptyBlock,

    #[error("infeasible dwell: {m_max} segments of at least {dwell} samples exceed the {n_eff} available")]
    InfeasibleDwell {
        m_max: usize,
        dwell: usize,
        n_eff: usize,
    },

    #[error("no block assigned at threshold {eps_thres:.3e}")]
    NoBlockAssigned { eps_thres: f64 },

    #[error("rank-deficient assignment: stacked regressors have rank {rank} < {expected}")]
    RankDeficientAssignment { rank: usize, expected: usize },

    #[error("no progress: residual {residual:.6e} failed to decrease")]
    NoProgress { residual: f64 },

    #[error("constant reference output: fit score undefined")]
    ConstantReference,

    #[error("oracle mode labels unavailable or of wrong length")]
    PolicyUnavailable,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
