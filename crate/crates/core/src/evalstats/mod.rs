//! Evaluation: mid-rank AUROC over lagged edge grids, paired-seed tests,
//! run records and per-cell win-rate tables.
//!
//! Win rates use a strict-win convention (ties are not wins). P-values are
//! reported raw; no multiple-comparison correction is applied anywhere.

mod auroc;
mod paired;
mod records;

pub use auroc::{aligned_cells, auroc, auroc_flat_lag, auroc_with, LagConvention};
pub use paired::{paired_test, sign_test, PairedTestResult};
pub use records::{
    canonical_sort, cell_means, cell_param, read_ledger, win_rate_table, write_ledger, CellComparison, CellMean,
    MetricSummary, RunRecord, WinRateTable,
};
