//! Classical scorers. Each standardizes the series internally (full-series
//! column statistics), so coefficient magnitudes are comparable across
//! variables, and reports prediction MSE in the units of the input series.
//!
//! Tuned methods pick their hyperparameter on a time-ordered split (last 20%
//! of design rows held out), report the held-out MSE at the chosen value,
//! and take their scores from a refit on all rows at that value.

mod design;
mod granger;
mod lasso;
mod linear;
mod pcmci;

use nalgebra::DMatrix;

use crate::bottleneck::ScoreMatrix;
use crate::error::Result;
use crate::linalg::{logspace, ColumnStats};
use crate::synthgen::{LaggedAdjacency, Series};

pub use design::LaggedDesign;
pub use granger::{granger_bivariate, granger_pair_test, GrangerResult, GrangerTest};
pub use lasso::{fit_lasso, fit_lasso_with, kkt_violation, lasso_cd, LassoConfig, LassoSolution};
pub use linear::{fit_ols, fit_ridge, fit_ridge_with, fit_rrr, fit_rrr_with, rrr_project};
pub use pcmci::{partial_correlation, pcmci_lite, pcmci_stage1, PcmciResult};

/// How a tuned method picks its hyperparameter.
#[derive(Debug, Clone)]
pub enum SelectionRule {
    HoldoutMse,
    /// Diagnostics only: pick the grid point with the best AUROC against a
    /// known truth.
    OracleAuroc(LaggedAdjacency),
}

impl SelectionRule {
    pub fn tag(&self) -> &'static str {
        match self {
            SelectionRule::HoldoutMse => "holdout-mse",
            SelectionRule::OracleAuroc(_) => "oracle-auroc",
        }
    }
}

/// Hyperparameter selection trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    pub grid: Vec<f64>,
    /// Criterion at each grid point (held-out MSE averaged over equations,
    /// or AUROC under the oracle rule).
    pub criterion: Vec<f64>,
    /// Grid index chosen for the fit as a whole.
    pub chosen: usize,
    /// Per-equation choices, when the method tunes each equation separately.
    pub per_equation: Option<Vec<usize>>,
    pub rule: &'static str,
}

impl TuningReport {
    pub fn chosen_value(&self) -> f64 {
        self.grid[self.chosen]
    }

    /// Rows `(grid_index, value, criterion, chosen)`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["grid_index", "value", "criterion", "chosen", "rule"])?;
        for (n, (g, c)) in self.grid.iter().zip(&self.criterion).enumerate() {
            wtr.write_record([
                n.to_string(),
                format!("{g}"),
                format!("{c}"),
                (n == self.chosen).to_string(),
                self.rule.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Output of a linear VAR-style fit.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub scores: ScoreMatrix,
    /// Held-out next-step MSE (input units).
    pub mse: f64,
    /// `K x (K L)` coefficients from the full-data refit (row = equation),
    /// in standardized units.
    pub coefficients: DMatrix<f64>,
    pub tuning: Option<TuningReport>,
    pub flags: Vec<String>,
}

/// Default relative regularisation grid: 20 points from `1e-4` to `1e1`.
pub fn default_lambda_grid() -> Vec<f64> {
    logspace(-4.0, 1.0, 20)
}

/// Default rank grid `{1, ..., min(K, 8)}`.
pub fn default_rank_grid(k: usize) -> Vec<usize> {
    (1..=k.min(8)).collect()
}

pub(crate) struct Prepared {
    pub stats: ColumnStats,
    pub full: LaggedDesign,
    pub train: LaggedDesign,
    pub holdout: LaggedDesign,
}

pub(crate) fn prepare(series: &Series, max_lag: usize) -> Result<Prepared> {
    let stats = ColumnStats::of(series.values());
    let full = LaggedDesign::new(&stats.apply(series.values()), max_lag)?;
    if full.n_rows() < 5 {
        return crate::error::param("series too short to hold out rows");
    }
    let (train, holdout) = full.split();
    Ok(Prepared {
        stats,
        full,
        train,
        holdout,
    })
}

/// Held-out MSE of `coef` (`(K L) x K`, column = equation), in input units.
pub(crate) fn holdout_mse(coef: &DMatrix<f64>, holdout: &LaggedDesign, stats: &ColumnStats) -> f64 {
    per_equation_mse(coef, holdout, stats).iter().sum::<f64>() / holdout.n_vars() as f64
}

pub(crate) fn per_equation_mse(coef: &DMatrix<f64>, holdout: &LaggedDesign, stats: &ColumnStats) -> Vec<f64> {
    let pred = &holdout.regressors * coef;
    let n = holdout.n_rows() as f64;
    (0..holdout.n_vars())
        .map(|j| {
            let diff = pred.column(j) - holdout.targets.column(j);
            diff.norm_squared() / n * stats.sds[j] * stats.sds[j]
        })
        .collect()
}

/// `score(i, j, tau) = |coef[(tau - 1) K + j, i]|` for a `(K L) x K` matrix.
pub(crate) fn scores_from_coef(coef: &DMatrix<f64>, k: usize, max_lag: usize) -> Result<ScoreMatrix> {
    ScoreMatrix::from_fn(k, max_lag, |i, j, tau| coef[((tau - 1) * k + j, i)].abs())
}
