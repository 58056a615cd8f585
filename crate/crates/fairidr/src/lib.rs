//! Fairness-constrained individualized decision rules.
//!
//! The library learns binary treatment rules of the form
//! `D(z) = 2·I{score(z) > 0} − 1` from observational data `(X, S, L, A, R)`,
//! where `S` is a binary sensitive attribute and `L` a categorical
//! "legitimate" grouping variable. The unconstrained rule thresholds an
//! estimated conditional average treatment effect (CATE); demographic-parity
//! (DP) and conditional demographic-parity (CDP) constraints are enforced by
//! perturbing that score with group-specific multipliers found by
//! one-dimensional root finding on a smoothed constraint function.
//!
//! Modules:
//! - [`dataset`]: sample records, CSV ingestion, seeded splitting.
//! - [`cate`]: two-arm outcome regression (ReLU network or ridge on a
//!   polynomial basis) exposing the CATE `δ̂(z) = m̂₁(z) − m̂₀(z)`.
//! - [`fairness`]: group statistics, the smoothed constraint `Ĝ_l(ω)`, the
//!   three-case multiplier solver, and the deployable [`fairness::FairRule`].
//! - [`policy`]: decision application and the UF / CUF / PV evaluation
//!   metrics.
//! - [`simgen`]: synthetic data-generating processes and the replication
//!   harness that aggregates metrics across seeded Monte Carlo runs.

pub mod cate;
pub mod dataset;
pub mod fairness;
pub mod policy;
pub mod simgen;

#[cfg(test)]
pub(crate) mod testutil;

pub use cate::{CateModel, FeatureLayout, FittedRegressor, RegressorKind, RegressorSpec};
pub use dataset::{CsvSchema, Dataset, Sample, SplitSpec};
pub use fairness::{FairRule, FairnessMode, GroupStats, SolverConfig};
pub use policy::{Decisions, MetricsReport};
pub use simgen::{ReplicationSummary, ScenarioSpec};
