//! Stage plans, seed derivation, the method registry, stage execution and
//! report emission.
//!
//! A stage run is a pure function of its plan: every random stream is
//! derived from `(base seed, stage, cell, replicate, role)`, cells run in
//! parallel, and the ledger is sorted before anything is written.

mod defaults;
mod plan;
mod registry;
mod report;
mod run;
mod seeds;

pub use defaults::default_plan;
pub use plan::{CellSpec, DatasetRef, ExperimentPlan, MethodEntry, MethodSpec, Stage};
pub use registry::{MethodOutput, MethodRegistry, ScoreRequest, Scorer};
pub use report::{
    emit_reports, method_summary, missing_combinations, render_table, size_match_gaps, survive_summary,
    win_rate_markdown, GapRow, MethodSummary, SurviveRow, SurviveSummary,
};
pub use run::{run_and_write, run_stage, stage_dir, StageOutcome};
pub use seeds::{CollisionReport, Role, SeedDerivation};

/// Environment variable naming the output root.
pub const OUTPUT_ENV: &str = "BNBENCH_OUT";
