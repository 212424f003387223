//! Model cascade simulation over precomputed per-model predictions.
//!
//! A cascade runs an instance through models ordered by inference cost and
//! stops at the first model whose confidence clears its stage threshold. This
//! crate replays that process offline from prediction dumps, so that cost and
//! accuracy can be measured for any threshold setting:
//!
//! - [`ingest`] loads and validates instances, predictions and cost profiles.
//! - [`confidence`] scores each prediction (MaxProb, distance to uniform,
//!   keyed random, input length).
//! - [`engine`] executes sequential and routing cascades with exact cost
//!   accounting.
//! - [`sweep`] traces accuracy-cost curves, extracts the frontier and computes
//!   AUC and the matched-cost / max-accuracy comparisons.
//! - [`analysis`] breaks a run down by answering model and tunes thresholds to
//!   a compute budget.
//! - [`synth`] generates synthetic bundles with controllable calibration.
//! - [`plot`] renders accuracy-cost curves as standalone SVG.

pub mod analysis;
pub mod confidence;
pub mod engine;
pub mod ingest;
pub mod plot;
pub mod sweep;
pub mod synth;

pub use analysis::{
    contribution, improvement_report, tune, ContributionReport, ImprovementReport, ImprovementRow,
    ModelContribution, TunedOperatingPoint,
};
pub use confidence::{ConfidenceScore, HeuristicOptions, Policy};
pub use engine::{
    aggregate, run, run_routing, run_sequential, CascadeConfig, CascadeEngine, CascadeOutcome,
    Mode, RunSummary,
};
pub use ingest::{
    instance_cost, load_bundle, normalize_scores, CostSettings, EvaluationBundle, InstanceRecord,
    ModelProfile, PredictionRecord,
};
pub use sweep::{
    auc, matched_cost, max_accuracy_gain, pareto_frontier, summarize, sweep, threshold_grid,
    CurvePoint, CurveSummary, Grid, MatchedCost, MatchedEntry,
};
pub use synth::{extend_below, generate, SynthModel, SynthSpec};

/// Errors surfaced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Confidence(#[from] confidence::ConfidenceError),
    #[error(transparent)]
    Cascade(#[from] engine::CascadeError),
    #[error(transparent)]
    Sweep(#[from] sweep::SweepError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
