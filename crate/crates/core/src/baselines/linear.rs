use nalgebra::DMatrix;

use super::{
    holdout_mse, prepare, scores_from_coef, LinearFit, SelectionRule, TuningReport,
};
use crate::error::{param, Result};
use crate::evalstats::auroc_with;
use crate::evalstats::LagConvention;
use crate::linalg::{lstsq, solve_spd};
use crate::synthgen::Series;

/// Condition number above which an OLS design is flagged near-singular.
const COND_FLAG: f64 = 1e8;

/// Ordinary least squares on the stacked-lag design. Rank-deficient or
/// underdetermined designs get the minimum-norm solution and a flag.
pub fn fit_ols(series: &Series, max_lag: usize) -> Result<LinearFit> {
    let p = prepare(series, max_lag)?;
    let k = series.n_vars();
    let mut flags = Vec::new();
    if p.full.n_rows() <= k * max_lag {
        flags.push("underdetermined".to_string());
    }
    let train = lstsq(&p.train.regressors, &p.train.targets);
    let mse = holdout_mse(&train.coef, &p.holdout, &p.stats);
    let full = lstsq(&p.full.regressors, &p.full.targets);
    if full.rank_deficient {
        flags.push("rank_deficient".into());
    }
    if full.condition > COND_FLAG {
        flags.push(format!("near_singular(cond={:.3e})", full.condition));
    }
    Ok(LinearFit {
        scores: scores_from_coef(&full.coef, k, max_lag)?,
        mse,
        coefficients: full.coef.transpose(),
        tuning: None,
        flags,
    })
}

fn ridge_coef(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let n = x.nrows() as f64;
    let mut gram = x.transpose() * x / n;
    for d in 0..gram.nrows() {
        gram[(d, d)] += lambda;
    }
    let rhs = x.transpose() * y / n;
    match solve_spd(&gram, &rhs) {
        Some(c) => Ok(c),
        None => Ok(lstsq(&gram, &rhs).coef),
    }
}

/// Ridge regression with one penalty shared by all equations, chosen on the
/// held-out rows. The objective is `||y - X b||^2 / n + lambda ||b||^2` on
/// standardized data.
pub fn fit_ridge(series: &Series, max_lag: usize, grid: &[f64]) -> Result<LinearFit> {
    fit_ridge_with(series, max_lag, grid, &SelectionRule::HoldoutMse)
}

pub fn fit_ridge_with(series: &Series, max_lag: usize, grid: &[f64], rule: &SelectionRule) -> Result<LinearFit> {
    if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return param("ridge grid must be nonempty, finite and nonnegative");
    }
    let p = prepare(series, max_lag)?;
    let k = series.n_vars();
    let mut mses = Vec::with_capacity(grid.len());
    let mut criterion = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let c = ridge_coef(&p.train.regressors, &p.train.targets, lambda)?;
        let mse = holdout_mse(&c, &p.holdout, &p.stats);
        mses.push(mse);
        criterion.push(match rule {
            SelectionRule::HoldoutMse => mse,
            SelectionRule::OracleAuroc(truth) => {
                let full = ridge_coef(&p.full.regressors, &p.full.targets, lambda)?;
                auroc_with(&scores_from_coef(&full, k, max_lag)?, truth, LagConvention::Auto)?
            }
        });
    }
    let chosen = pick(&criterion, matches!(rule, SelectionRule::HoldoutMse));
    let coef = ridge_coef(&p.full.regressors, &p.full.targets, grid[chosen])?;
    let mut flags = Vec::new();
    if chosen == 0 || chosen == grid.len() - 1 {
        flags.push("ridge_lambda_at_grid_edge".into());
    }
    Ok(LinearFit {
        scores: scores_from_coef(&coef, k, max_lag)?,
        mse: mses[chosen],
        coefficients: coef.transpose(),
        tuning: Some(TuningReport {
            grid: grid.to_vec(),
            criterion,
            chosen,
            per_equation: None,
            rule: rule.tag(),
        }),
        flags,
    })
}

/// Index of the smallest (or largest) criterion; first wins on ties.
pub(crate) fn pick(criterion: &[f64], minimize: bool) -> usize {
    let mut best = 0;
    for (n, &c) in criterion.iter().enumerate() {
        let better = if minimize { c < criterion[best] } else { c > criterion[best] };
        if better || criterion[best].is_nan() {
            best = n;
        }
    }
    best
}

/// Projects OLS coefficients `(K L) x K` onto rank `r`: with `V_r` the top
/// right singular vectors of the fitted values `X B`, returns `B V_r V_r^T`.
pub fn rrr_project(x: &DMatrix<f64>, b_ols: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let fitted = x * b_ols;
    let svd = fitted.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let k = b_ols.ncols();
    let mut proj = DMatrix::zeros(k, k);
    for &s in order.iter().take(rank.min(order.len())) {
        let v = vt.row(s).transpose();
        proj += &v * v.transpose();
    }
    b_ols * proj
}

/// Reduced-rank regression, rank chosen on the held-out rows.
pub fn fit_rrr(series: &Series, max_lag: usize, ranks: &[usize]) -> Result<LinearFit> {
    fit_rrr_with(series, max_lag, ranks, &SelectionRule::HoldoutMse)
}

pub fn fit_rrr_with(series: &Series, max_lag: usize, ranks: &[usize], rule: &SelectionRule) -> Result<LinearFit> {
    let k = series.n_vars();
    if ranks.is_empty() || ranks.iter().any(|&r| r == 0 || r > k) {
        return param(format!("ranks must lie in 1..={k}"));
    }
    let p = prepare(series, max_lag)?;
    let b_train = lstsq(&p.train.regressors, &p.train.targets).coef;
    let ls_full = lstsq(&p.full.regressors, &p.full.targets);
    let mut mses = Vec::with_capacity(ranks.len());
    let mut criterion = Vec::with_capacity(ranks.len());
    for &r in ranks {
        let c = rrr_project(&p.train.regressors, &b_train, r);
        let mse = holdout_mse(&c, &p.holdout, &p.stats);
        mses.push(mse);
        criterion.push(match rule {
            SelectionRule::HoldoutMse => mse,
            SelectionRule::OracleAuroc(truth) => {
                let full = rrr_project(&p.full.regressors, &ls_full.coef, r);
                auroc_with(&scores_from_coef(&full, k, max_lag)?, truth, LagConvention::Auto)?
            }
        });
    }
    let chosen = pick(&criterion, matches!(rule, SelectionRule::HoldoutMse));
    let coef = rrr_project(&p.full.regressors, &ls_full.coef, ranks[chosen]);
    let mut flags = Vec::new();
    if ls_full.rank_deficient {
        flags.push("rank_deficient".into());
    }
    Ok(LinearFit {
        scores: scores_from_coef(&coef, k, max_lag)?,
        mse: mses[chosen],
        coefficients: coef.transpose(),
        tuning: Some(TuningReport {
            grid: ranks.iter().map(|&r| r as f64).collect(),
            criterion,
            chosen,
            per_equation: None,
            rule: rule.tag(),
        }),
        flags,
    })
}
