//! Confidence-gated classifier cascades.
//!
//! A cascade runs a cheap model first and only hands a sample to the next,
//! more expensive model when the cheap model's maximum softmax confidence
//! falls below a threshold. This crate holds the allocation-only core:
//!
//! - [`record`]: per-sample prediction records and multi-model alignment.
//! - [`hardness`]: confidence binning and the correctable / non-correctable
//!   mistake decomposition of a (little, big) pair.
//! - [`engine`]: routing, cascade evaluation, threshold sweeps and the
//!   MACs scaling estimator.
//! - [`optimizer`]: threshold selection under an accuracy tolerance,
//!   Pareto fronts and cross-dataset transfer reports.
//!
//! IO, file formats and the runtime executor live in the `cascade-opt`
//! crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod engine;
pub mod error;
pub mod hardness;
pub mod optimizer;
pub mod record;

pub use engine::{
    estimate_scaling_cost, evaluate, passes_gate, route, sweep, sweep_kpass, CascadeConfig,
    CascadePoint, RouteDecision, ScalingSpec, ThresholdGrid, TradeoffCurve,
};
pub use error::{Error, Result};
pub use hardness::{
    bin_by_confidence, decompose_mistakes, ConfidenceBinStats, MistakeDecomposition,
};
pub use optimizer::{
    cross_evaluate, pareto_front, select_kpass, select_threshold, GeneralizationReport,
    SelectionCriterion, SelectionResult,
};
pub use record::{
    align, AlignedRecordSet, AlignedRow, Confidence, ModelProfile, Prediction, PredictionRecord,
    RecordSet,
};
