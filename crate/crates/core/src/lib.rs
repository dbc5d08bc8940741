//! Benchmark harness and methods library for testing whether a forecaster's
//! input/output projections recover lagged causal structure.
//!
//! The crate is organised around the pipeline it runs:
//!
//! * [`synthgen`] generates seeded series with exact ground-truth adjacency.
//! * [`intervene`] applies clamp / soft-noise / random-forcing interventions
//!   and builds the size-matched observational control arm.
//! * [`bottleneck`] trains the linear bottleneck predictor and extracts
//!   `S = |W_out W_in|`.
//! * [`baselines`] holds the classical scorers (OLS, Ridge, Lasso, RRR,
//!   bivariate Granger, a light PCMCI variant).
//! * [`evalstats`] computes flat-lag AUROC, win-rate tables and paired tests.
//! * [`provenance`] ingests real-data CSVs with edge-provenance cards and
//!   audits ranking sensitivity to the ground-truth choice.
//! * [`harness`] runs the stage plans, keeps the ledger and writes reports.

pub mod baselines;
pub mod bottleneck;
mod error;
pub mod evalstats;
pub mod harness;
pub mod intervene;
pub(crate) mod linalg;
pub mod provenance;
pub mod synthgen;

pub use bottleneck::{BottleneckModel, ScoreMatrix, TrainConfig};
pub use error::{Error, Result};
pub use evalstats::{auroc_flat_lag, LagConvention, PairedTestResult, RunRecord};
pub use intervene::{ArmSet, InterventionKind, InterventionLog, InterventionScheme};
pub use synthgen::{Family, GeneratorSpec, LaggedAdjacency, Series};
