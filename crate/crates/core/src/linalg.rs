//! Small dense linear-algebra helpers shared by the generators, the
//! bottleneck trainer and the baselines.

use nalgebra::{DMatrix, DVector};

/// Standard deviations below this are treated as a constant column.
const SD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ColumnStats {
    pub fn of(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() as f64;
        let mut means = Vec::with_capacity(m.ncols());
        let mut sds = Vec::with_capacity(m.ncols());
        for col in m.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            let sd = var.sqrt();
            sds.push(if sd < SD_FLOOR { 1.0 } else { sd });
        }
        Self { means, sds }
    }

    pub fn identity(k: usize) -> Self {
        Self {
            means: vec![0.0; k],
            sds: vec![1.0; k],
        }
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mu, sd) = (self.means[j], self.sds[j]);
            col.apply(|v| *v = (*v - mu) / sd);
        }
        out
    }
}

/// Spectral radius of the companion matrix of `x_t = sum_tau A_tau x_{t-tau}`.
pub fn companion_spectral_radius(coefs: &[DMatrix<f64>]) -> f64 {
    let lags = coefs.len();
    if lags == 0 {
        return 0.0;
    }
    let k = coefs[0].nrows();
    let n = k * lags;
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for (tau, a) in coefs.iter().enumerate() {
        comp.view_mut((0, tau * k), (k, k)).copy_from(a);
    }
    for r in k..n {
        comp[(r, r - k)] = 1.0;
    }
    match nalgebra::Schur::try_new(comp.clone(), f64::EPSILON, 20_000) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => gelfand_radius(comp),
    }
}

/// `|C^m|^(1/m)` for `m = 2^40` by normalised repeated squaring. Used when
/// the Schur iteration does not converge (very sparse, nearly nilpotent
/// companions).
fn gelfand_radius(mut m: DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..=40 {
        let norm = m.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return 0.0;
        }
        m /= norm;
        log_scale += norm.ln() / power;
        m = &m * &m;
        power *= 2.0;
    }
    log_scale.exp()
}

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    /// `ncols(a) x ncols(b)` coefficient matrix.
    pub coef: DMatrix<f64>,
    pub condition: f64,
    pub rank_deficient: bool,
}

/// Minimum-norm least squares through the SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> LstsqSolution {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let full_rank = a.nrows() >= a.ncols();
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let rank_deficient = !full_rank || smin <= tol;
    let condition = if smin > 0.0 && full_rank {
        smax / smin
    } else {
        f64::INFINITY
    };
    let coef = svd
        .solve(b, tol)
        .unwrap_or_else(|_| DMatrix::zeros(a.ncols(), b.ncols()));
    LstsqSolution {
        coef,
        condition,
        rank_deficient,
    }
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Residual sum of squares of regressing `y` on `x` (columns), via Cholesky
/// on the normal equations. `None` when the Gram matrix is singular.
pub fn rss(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<f64> {
    let gram = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = gram.cholesky()?;
    let beta = chol.solve(&xty);
    let resid = y - x * beta;
    Some(resid.norm_squared())
}

/// `n` points `10^lo ..= 10^hi`, log-spaced.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![10f64.powf(lo)],
        _ => (0..n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelfand_estimate_matches_eigenvalues() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.3, 0.4, 0.1, 0.0, 0.2, -0.6]);
        let exact = companion_spectral_radius(&[a.clone()]);
        assert!((gelfand_radius(a) - exact).abs() < 1e-6);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(gelfand_radius(nil) < 1e-9);
    }

    #[test]
    fn spectral_radius_of_diagonal_var() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.7, 0.2]));
        assert!((companion_spectral_radius(&[a]) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_of_ar2() {
        // x_t = 0.5 x_{t-1} + 0.3 x_{t-2}: roots of z^2 - 0.5 z - 0.3
        let a1 = DMatrix::from_element(1, 1, 0.5);
        let a2 = DMatrix::from_element(1, 1, 0.3);
        let expected = (0.5 + (0.25f64 + 1.2).sqrt()) / 2.0;
        assert!((companion_spectral_radius(&[a1, a2]) - expected).abs() < 1e-12);
    }

    #[test]
    fn lstsq_min_norm_when_underdetermined() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DMatrix::from_element(1, 1, 2.0);
        let sol = lstsq(&a, &b);
        assert!(sol.rank_deficient);
        assert!((sol.coef[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.coef[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_keeps_unit_sd() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 4.0, 2.0, 4.0, 3.0, 4.0]);
        let st = ColumnStats::of(&m);
        assert_eq!(st.sds[1], 1.0);
        let z = st.apply(&m);
        assert!(z.column(1).iter().all(|v| *v == 0.0));
    }
}
