use nalgebra::DMatrix;

use crate::error::{param, Result};

/// Stacked-lag regression design shared by every linear method.
///
/// Row `r` targets time `t = max_lag + r`; regressor column
/// `(tau - 1) * K + j` holds `x_{t - tau, j}`.
#[derive(Debug, Clone)]
pub struct LaggedDesign {
    pub targets: DMatrix<f64>,
    pub regressors: DMatrix<f64>,
    /// `(variable, lag)` per regressor column.
    pub columns: Vec<(usize, usize)>,
    pub max_lag: usize,
}

impl LaggedDesign {
    pub fn new(values: &DMatrix<f64>, max_lag: usize) -> Result<Self> {
        let (t, k) = values.shape();
        if max_lag < 1 {
            return param("max_lag must be >= 1");
        }
        if t <= max_lag {
            return param(format!("series of length {t} too short for max_lag {max_lag}"));
        }
        let n = t - max_lag;
        let targets = values.rows(max_lag, n).into_owned();
        let mut regressors = DMatrix::zeros(n, k * max_lag);
        let mut columns = Vec::with_capacity(k * max_lag);
        for tau in 1..=max_lag {
            for j in 0..k {
                let col = (tau - 1) * k + j;
                columns.push((j, tau));
                for r in 0..n {
                    regressors[(r, col)] = values[(max_lag + r - tau, j)];
                }
            }
        }
        Ok(Self {
            targets,
            regressors,
            columns,
            max_lag,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.targets.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.targets.ncols()
    }

    /// Time index of design row `r`.
    pub fn time_of_row(&self, r: usize) -> usize {
        self.max_lag + r
    }

    /// Number of trailing rows held out: 20% of the rows, at least one.
    pub fn holdout_rows(&self) -> usize {
        ((self.n_rows() as f64 * 0.2).round() as usize).clamp(1, self.n_rows() - 1)
    }

    /// `(train, holdout)` split on time order.
    pub fn split(&self) -> (LaggedDesign, LaggedDesign) {
        let n = self.n_rows();
        let h = self.holdout_rows();
        let part = |start: usize, len: usize| LaggedDesign {
            targets: self.targets.rows(start, len).into_owned(),
            regressors: self.regressors.rows(start, len).into_owned(),
            columns: self.columns.clone(),
            max_lag: self.max_lag,
        };
        (part(0, n - h), part(n - h, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_align_without_look_ahead() {
        // value encodes (t, j) so alignment can be read back
        let vals = DMatrix::from_fn(10, 3, |t, j| (t * 10 + j) as f64);
        let d = LaggedDesign::new(&vals, 2).unwrap();
        assert_eq!(d.n_rows(), 8);
        for r in 0..d.n_rows() {
            let t = d.time_of_row(r);
            for (c, &(j, tau)) in d.columns.iter().enumerate() {
                assert_eq!(d.regressors[(r, c)], ((t - tau) * 10 + j) as f64);
                assert!(t - tau < t);
            }
            for j in 0..3 {
                assert_eq!(d.targets[(r, j)], (t * 10 + j) as f64);
            }
        }
    }

    #[test]
    fn future_rows_do_not_leak() {
        let mut vals = DMatrix::from_fn(12, 2, |t, j| ((t + 1) * (j + 2)) as f64);
        let before = LaggedDesign::new(&vals, 3).unwrap();
        // scramble everything after t = 6; rows whose target time is <= 6
        // must be unchanged
        for t in 7..12 {
            for j in 0..2 {
                vals[(t, j)] = -99.0 - (t * j) as f64;
            }
        }
        let after = LaggedDesign::new(&vals, 3).unwrap();
        for r in 0..after.n_rows() {
            if after.time_of_row(r) <= 6 {
                assert_eq!(before.regressors.row(r), after.regressors.row(r));
                assert_eq!(before.targets.row(r), after.targets.row(r));
            }
        }
    }

    #[test]
    fn split_is_time_ordered() {
        let vals = DMatrix::from_fn(51, 2, |t, _| t as f64);
        let d = LaggedDesign::new(&vals, 1).unwrap();
        let (tr, ho) = d.split();
        assert_eq!(tr.n_rows() + ho.n_rows(), 50);
        assert_eq!(ho.n_rows(), 10);
        assert!(tr.targets[(tr.n_rows() - 1, 0)] < ho.targets[(0, 0)]);
    }

    #[test]
    fn too_short() {
        assert!(LaggedDesign::new(&DMatrix::zeros(3, 2), 3).is_err());
    }
}
