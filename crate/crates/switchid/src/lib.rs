//! Identification of switched linear (switched ARX) systems from
//! input-output time series.
//!
//! The method runs in two stages. Stage one detects the switching
//! instants by dynamic programming over least-squares segment costs
//! under a minimum-dwell constraint ([`segmentation`]). Stage two
//! extracts one submodel parameter vector at a time from the segmented
//! data by sparsity inducing, either through iteratively reweighted
//! least squares with momentum or through a block orthogonal matching
//! pursuit ([`extraction`]). The [`pipeline`] module composes both
//! stages, labels the segments, and scores predictions, while
//! [`sparsity`] provides the recovery certificates (spark, mutual
//! coherence, the coherence surrogate of the regressor hat matrix and
//! the derived uniqueness thresholds) that make the extraction order
//! auditable.

#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod extraction;
pub mod pipeline;
pub mod presets;
pub mod segmentation;
pub mod sparsity;

pub use dataset::{
    build_regressors, sigma_for_snr, simulate, InputSpec, RegressorMatrix, SystemOrder,
    TimeSeries, TrueSystem,
};
pub use error::{Error, Result};
pub use extraction::{
    assign_blocks, block_omp, omp_extract, reestimate, reweighted_l1_extract, ExtractedSubmodel,
    ExtractionConfig, OmpReport, SegmentBlocks,
};
pub use pipeline::{
    fit_score, identify, kernel_overlap, pe_diagnostics, predict, predict_free_run,
    ExtractorKind, IdentificationResult, IdentifyConfig, ModePolicy, PeDiagnostics, Prediction,
};
pub use segmentation::{
    backtrack, dp_tables, identify_instants, rls_sweep, segment_cost, select_m, DpTables,
    Segmentation,
};
pub use sparsity::{
    extraction_bound, genericity_index, mutual_coherence, nu, nu_vec, projector, spark, tau,
    CountOrInf, Projector, SparsitySummary,
};
