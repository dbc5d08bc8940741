use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::bottleneck::ScoreMatrix;
use crate::error::{param, Result};
use crate::linalg::{rss, ColumnStats};
use crate::synthgen::Series;

/// Smallest p-value kept before taking `-log10`.
const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct GrangerTest {
    pub f_stat: f64,
    pub p_value: f64,
    pub df1: usize,
    pub df2: usize,
    /// Singular design or a perfect fit; the p-value is set to 1.
    pub degenerate: bool,
}

impl GrangerTest {
    pub fn score(&self) -> f64 {
        -self.p_value.max(P_FLOOR).log10()
    }
}

/// F-test of "`cause` Granger-causes `target`" with an intercept and `max_lag`
/// lags of each.
pub fn granger_pair_test(target: &[f64], cause: &[f64], max_lag: usize) -> Result<GrangerTest> {
    let t = target.len();
    if cause.len() != t {
        return param("granger: series lengths differ");
    }
    if max_lag < 1 {
        return param("granger: max_lag must be >= 1");
    }
    let n = t.saturating_sub(max_lag);
    let df1 = max_lag;
    if n <= 2 * max_lag + 1 {
        return param(format!("granger: series of length {t} too short for max_lag {max_lag}"));
    }
    let df2 = n - 2 * max_lag - 1;
    let y = DVector::from_fn(n, |r, _| target[r + max_lag]);
    let full = DMatrix::from_fn(n, 2 * max_lag + 1, |r, c| {
        let time = r + max_lag;
        match c {
            0 => 1.0,
            c if c <= max_lag => target[time - c],
            c => cause[time - (c - max_lag)],
        }
    });
    let restricted = full.columns(0, max_lag + 1).into_owned();
    let degenerate = |f_stat| GrangerTest {
        f_stat,
        p_value: 1.0,
        df1,
        df2,
        degenerate: true,
    };
    let (Some(rss_r), Some(rss_f)) = (rss(&restricted, &y), rss(&full, &y)) else {
        return Ok(degenerate(0.0));
    };
    if rss_f <= 1e-12 * rss_r.max(1e-300) {
        return Ok(degenerate(f64::INFINITY));
    }
    let f_stat = ((rss_r - rss_f).max(0.0) / df1 as f64) / (rss_f / df2 as f64);
    let dist = FisherSnedecor::new(df1 as f64, df2 as f64).expect("positive degrees of freedom");
    let p_value = dist.sf(f_stat).clamp(0.0, 1.0);
    Ok(GrangerTest {
        f_stat,
        p_value,
        df1,
        df2,
        degenerate: false,
    })
}

#[derive(Debug, Clone)]
pub struct GrangerResult {
    /// Pair-level scores (one lag slot), `-log10 p`, max-normalised.
    pub scores: ScoreMatrix,
    /// `p[(effect, cause)]`; diagonal is 1.
    pub p_values: DMatrix<f64>,
    pub flags: Vec<String>,
}

/// Pairwise bivariate Granger tests over all ordered pairs.
pub fn granger_bivariate(series: &Series, max_lag: usize) -> Result<GrangerResult> {
    let k = series.n_vars();
    let z = ColumnStats::of(series.values()).apply(series.values());
    let cols: Vec<Vec<f64>> = (0..k).map(|j| z.column(j).iter().copied().collect()).collect();
    let mut p_values = DMatrix::from_element(k, k, 1.0);
    let mut raw = vec![0.0; k * k];
    let mut flags = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let test = granger_pair_test(&cols[i], &cols[j], max_lag)?;
            if test.degenerate {
                flags.push(format!("granger_degenerate({i}<-{j})"));
            }
            p_values[(i, j)] = test.p_value;
            raw[i * k + j] = test.score();
        }
    }
    Ok(GrangerResult {
        scores: ScoreMatrix::from_raw(k, 1, raw)?,
        p_values,
        flags,
    })
}
