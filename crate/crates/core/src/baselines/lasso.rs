use nalgebra::{DMatrix, DVector};

use super::{per_equation_mse, prepare, scores_from_coef, LinearFit, SelectionRule, TuningReport};
use crate::error::{param, Error, Result};
use crate::evalstats::{auroc_with, LagConvention};

/// Coordinate-descent settings. Convergence requires both the duality gap
/// and the largest KKT violation to fall under their tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    /// Multipliers of each equation's `lambda_max`.
    pub grid: Vec<f64>,
    pub max_sweeps: usize,
    pub gap_tol: f64,
    pub kkt_tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            grid: super::default_lambda_grid(),
            max_sweeps: 10_000,
            gap_tol: 1e-7,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub beta: DVector<f64>,
    pub sweeps: usize,
    pub gap: f64,
    pub kkt: f64,
}

/// Largest KKT violation of `beta` for
/// `0.5 b'Gb - c'b + lambda |b|_1` (the Gram form of
/// `||y - X b||^2 / (2n) + lambda |b|_1`).
pub fn kkt_violation(gram: &DMatrix<f64>, xty: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let grad = gram * beta - xty;
    (0..beta.len())
        .map(|j| {
            if beta[j] != 0.0 {
                (grad[j] + lambda * beta[j].signum()).abs()
            } else {
                (grad[j].abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn soft(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on Gram statistics `G = X'X/n`, `c = X'y/n`,
/// `yy = y'y/n`.
pub fn lasso_cd(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    yy: f64,
    lambda: f64,
    warm: Option<&DVector<f64>>,
    cfg: &LassoConfig,
) -> Result<LassoSolution> {
    let p = xty.len();
    if gram.shape() != (p, p) || !(lambda >= 0.0 && lambda.is_finite()) {
        return param("lasso: Gram shape mismatch or invalid lambda");
    }
    let mut beta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
    let mut q = gram * &beta;
    let mut gap = f64::INFINITY;
    for sweep in 1..=cfg.max_sweeps {
        for j in 0..p {
            let gjj = gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let old = beta[j];
            let new = soft(xty[j] - q[j] + gjj * old, lambda) / gjj;
            if new != old {
                let delta = new - old;
                q.axpy(delta, &gram.column(j), 1.0);
                beta[j] = new;
            }
        }
        let kkt = kkt_violation_q(&q, xty, &beta, lambda);
        gap = duality_gap(&q, xty, yy, &beta, lambda);
        if kkt <= cfg.kkt_tol && (lambda == 0.0 || gap <= cfg.gap_tol) {
            return Ok(LassoSolution {
                beta,
                sweeps: sweep,
                gap,
                kkt,
            });
        }
    }
    Err(Error::Convergence {
        sweeps: cfg.max_sweeps,
        gap,
    })
}

fn kkt_violation_q(q: &DVector<f64>, xty: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    (0..beta.len())
        .map(|j| {
            let g = q[j] - xty[j];
            if beta[j] != 0.0 {
                (g + lambda * beta[j].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Primal minus the dual value at the rescaled residual.
fn duality_gap(q: &DVector<f64>, xty: &DVector<f64>, yy: f64, beta: &DVector<f64>, lambda: f64) -> f64 {
    let cb = xty.dot(beta);
    let rr = (yy - 2.0 * cb + beta.dot(q)).max(0.0);
    let primal = 0.5 * rr + lambda * beta.lp_norm(1);
    let rho_max = (xty - q).amax();
    let s = if rho_max > lambda { lambda / rho_max } else { 1.0 };
    let dual = s * (yy - cb) - 0.5 * s * s * rr;
    (primal - dual).max(0.0)
}

struct EquationPath {
    /// Coefficients at each grid point (training rows).
    betas: Vec<Option<DVector<f64>>>,
    lambda_max: f64,
}

fn path(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &LassoConfig, flags: &mut Vec<String>, eq: usize) -> Result<EquationPath> {
    let n = x.nrows() as f64;
    let gram = x.transpose() * x / n;
    let xty = x.transpose() * y / n;
    let yy = y.norm_squared() / n;
    let lambda_max = xty.amax();
    // solve from the strongest penalty down, warm-starting each point
    let mut order: Vec<usize> = (0..cfg.grid.len()).collect();
    order.sort_by(|&a, &b| cfg.grid[b].total_cmp(&cfg.grid[a]));
    let mut betas = vec![None; cfg.grid.len()];
    let mut warm: Option<DVector<f64>> = None;
    for g in order {
        match lasso_cd(&gram, &xty, yy, cfg.grid[g] * lambda_max, warm.as_ref(), cfg) {
            Ok(sol) => {
                warm = Some(sol.beta.clone());
                betas[g] = Some(sol.beta);
            }
            Err(Error::Convergence { gap, .. }) => {
                flags.push(format!("lasso_nonconverged(eq={eq},grid={g},gap={gap:.2e})"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EquationPath { betas, lambda_max })
}

/// Lasso VAR with the penalty chosen per equation on the held-out rows.
/// Grid values are multipliers of each equation's `lambda_max` on the
/// training rows.
pub fn fit_lasso(series: &crate::synthgen::Series, max_lag: usize, cfg: &LassoConfig) -> Result<LinearFit> {
    fit_lasso_with(series, max_lag, cfg, &SelectionRule::HoldoutMse)
}

pub fn fit_lasso_with(
    series: &crate::synthgen::Series,
    max_lag: usize,
    cfg: &LassoConfig,
    rule: &SelectionRule,
) -> Result<LinearFit> {
    if cfg.grid.is_empty() || cfg.grid.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return param("lasso grid must be nonempty, finite and nonnegative");
    }
    let prep = prepare(series, max_lag)?;
    let k = series.n_vars();
    let p = k * max_lag;
    let ng = cfg.grid.len();
    let mut flags = Vec::new();
    let paths: Vec<EquationPath> = (0..k)
        .map(|i| {
            let y = prep.train.targets.column(i).into_owned();
            path(&prep.train.regressors, &y, cfg, &mut flags, i)
        })
        .collect::<Result<_>>()?;

    // held-out MSE per (equation, grid point)
    let mut eq_mse = vec![vec![f64::INFINITY; ng]; k];
    for g in 0..ng {
        let mut coef = DMatrix::zeros(p, k);
        for (i, pth) in paths.iter().enumerate() {
            if let Some(b) = &pth.betas[g] {
                coef.set_column(i, b);
            }
        }
        let m = per_equation_mse(&coef, &prep.holdout, &prep.stats);
        for i in 0..k {
            if paths[i].betas[g].is_some() {
                eq_mse[i][g] = m[i];
            }
        }
    }
    let criterion: Vec<f64> = (0..ng)
        .map(|g| eq_mse.iter().map(|m| m[g]).sum::<f64>() / k as f64)
        .collect();

    let per_equation: Vec<usize> = match rule {
        SelectionRule::HoldoutMse => eq_mse.iter().map(|m| super::linear::pick(m, true)).collect(),
        SelectionRule::OracleAuroc(_) => Vec::new(),
    };
    let (choice, criterion, chosen) = match rule {
        SelectionRule::HoldoutMse => {
            if per_equation.iter().zip(&eq_mse).any(|(&g, m)| !m[g].is_finite()) {
                return Err(Error::Convergence {
                    sweeps: cfg.max_sweeps,
                    gap: f64::NAN,
                });
            }
            let chosen = super::linear::pick(&criterion, true);
            (per_equation.clone(), criterion, chosen)
        }
        SelectionRule::OracleAuroc(truth) => {
            let mut aurocs = Vec::with_capacity(ng);
            for g in 0..ng {
                let coef = refit(&prep, &paths, &vec![g; k], cfg, &mut Vec::new())?;
                aurocs.push(auroc_with(&scores_from_coef(&coef, k, max_lag)?, truth, LagConvention::Auto)?);
            }
            let chosen = super::linear::pick(&aurocs, false);
            (vec![chosen; k], aurocs, chosen)
        }
    };

    let mse = choice.iter().enumerate().map(|(i, &g)| eq_mse[i][g]).sum::<f64>() / k as f64;
    let coef = refit(&prep, &paths, &choice, cfg, &mut flags)?;
    if choice.iter().any(|&g| g == argmin_grid(&cfg.grid)) {
        flags.push("lasso_lambda_at_grid_floor".into());
    }
    Ok(LinearFit {
        scores: scores_from_coef(&coef, k, max_lag)?,
        mse,
        coefficients: coef.transpose(),
        tuning: Some(TuningReport {
            grid: cfg.grid.clone(),
            criterion,
            chosen,
            per_equation: Some(choice),
            rule: rule.tag(),
        }),
        flags,
    })
}

fn argmin_grid(grid: &[f64]) -> usize {
    super::linear::pick(grid, true)
}

/// Full-data refit at the chosen absolute penalties, warm-started from the
/// training solution.
fn refit(
    prep: &super::Prepared,
    paths: &[EquationPath],
    choice: &[usize],
    cfg: &LassoConfig,
    flags: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    let x = &prep.full.regressors;
    let n = x.nrows() as f64;
    let gram = x.transpose() * x / n;
    let k = choice.len();
    let mut coef = DMatrix::zeros(x.ncols(), k);
    for i in 0..k {
        let y = prep.full.targets.column(i).into_owned();
        let xty = x.transpose() * &y / n;
        let yy = y.norm_squared() / n;
        let lambda = cfg.grid[choice[i]] * paths[i].lambda_max;
        let warm = paths[i].betas[choice[i]].as_ref();
        match lasso_cd(&gram, &xty, yy, lambda, warm, cfg) {
            Ok(sol) => coef.set_column(i, &sol.beta),
            Err(Error::Convergence { gap, .. }) => {
                // keep the training solution rather than fail the whole fit
                flags.push(format!("lasso_refit_nonconverged(eq={i},gap={gap:.2e})"));
                if let Some(b) = warm {
                    coef.set_column(i, b);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(coef)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lstsq;
    use crate::synthgen::{gen_var_chain, gen_var_random};

    fn gram_stats(x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
        let n = x.nrows() as f64;
        (x.transpose() * x / n, x.transpose() * y / n, y.norm_squared() / n)
    }

    fn design(seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let (s, _) = gen_var_random(6, 300, 2, 0.2, seed).unwrap();
        let d = super::super::LaggedDesign::new(s.values(), 2).unwrap();
        (d.regressors.clone(), d.targets.column(0).into_owned())
    }

    #[test]
    fn zero_lambda_is_ols() {
        let (x, y) = design(1);
        let (g, c, yy) = gram_stats(&x, &y);
        let cfg = LassoConfig {
            kkt_tol: 1e-12,
            ..LassoConfig::default()
        };
        let sol = lasso_cd(&g, &c, yy, 0.0, None, &cfg).unwrap();
        let ols = lstsq(&x, &DMatrix::from_column_slice(y.len(), 1, y.as_slice())).coef;
        for j in 0..x.ncols() {
            assert!((sol.beta[j] - ols[(j, 0)]).abs() < 1e-6);
        }
    }

    #[test]
    fn lambda_max_gives_zero() {
        let (x, y) = design(2);
        let (g, c, yy) = gram_stats(&x, &y);
        let sol = lasso_cd(&g, &c, yy, c.amax() * 1.0001, None, &LassoConfig::default()).unwrap();
        assert!(sol.beta.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn solutions_satisfy_kkt() {
        let (x, y) = design(3);
        let (g, c, yy) = gram_stats(&x, &y);
        for frac in [0.5, 0.1, 0.01, 0.001] {
            let lambda = frac * c.amax();
            let sol = lasso_cd(&g, &c, yy, lambda, None, &LassoConfig::default()).unwrap();
            assert!(kkt_violation(&g, &c, &sol.beta, lambda) < 1e-4);
            assert!(sol.gap <= 1e-7);
        }
    }

    #[test]
    fn nonconvergence_reports_gap() {
        let (x, y) = design(4);
        let (g, c, yy) = gram_stats(&x, &y);
        let cfg = LassoConfig {
            max_sweeps: 1,
            kkt_tol: 0.0,
            gap_tol: 0.0,
            ..LassoConfig::default()
        };
        match lasso_cd(&g, &c, yy, 1e-3, None, &cfg) {
            Err(Error::Convergence { sweeps: 1, gap }) => assert!(gap.is_finite()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fit_recovers_chain() {
        let (s, truth) = gen_var_chain(5, 1000, 9).unwrap();
        let fit = fit_lasso(&s, 1, &LassoConfig::default()).unwrap();
        let auc = crate::evalstats::auroc_flat_lag(&fit.scores, &truth).unwrap();
        assert!(auc > 0.99, "auroc {auc}");
        let tuning = fit.tuning.unwrap();
        assert_eq!(tuning.per_equation.unwrap().len(), 5);
    }

    #[test]
    fn wide_design_runs() {
        let (s, _) = gen_var_random(20, 150, 1, 0.1, 5).unwrap();
        let fit = fit_lasso(&s, 8, &LassoConfig::default()).unwrap();
        assert!(fit.mse.is_finite());
    }
}
