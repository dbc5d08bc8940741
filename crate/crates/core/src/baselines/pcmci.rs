use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bottleneck::ScoreMatrix;
use crate::error::{param, Result};
use crate::linalg::ColumnStats;
use crate::synthgen::Series;

/// Largest conditioning set tried in the parent-discovery stage.
const MAX_COND: usize = 3;
/// Parents of the cause added to each momentary conditional test.
const CAUSE_PARENTS: usize = 3;

/// `(variable, lag)`.
type Node = (usize, usize);

/// Partial correlation of `x` and `y` given `conds` (plus an intercept) and
/// its two-sided t-test p-value. `None` when the conditioning design is
/// singular.
pub fn partial_correlation(y: &DVector<f64>, x: &DVector<f64>, conds: &[&DVector<f64>]) -> Option<(f64, f64)> {
    let n = y.len();
    let m = conds.len() + 1;
    if n < m + 3 {
        return None;
    }
    let z = DMatrix::from_fn(n, m, |r, c| if c == 0 { 1.0 } else { conds[c - 1][r] });
    let gram = z.transpose() * &z;
    let chol = gram.clone().cholesky()?;
    let l = chol.l();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for d in 0..m {
        lo = lo.min(l[(d, d)]);
        hi = hi.max(l[(d, d)]);
    }
    if lo <= 1e-7 * hi {
        return None;
    }
    let ry = y - &z * chol.solve(&(z.transpose() * y));
    let rx = x - &z * chol.solve(&(z.transpose() * x));
    let (ny, nx) = (ry.norm(), rx.norm());
    if ny <= 1e-12 * y.norm().max(1.0) || nx <= 1e-12 * x.norm().max(1.0) {
        return Some((0.0, 1.0));
    }
    let r = (ry.dot(&rx) / (ny * nx)).clamp(-1.0, 1.0);
    let df = (n - m - 1) as f64;
    if r.abs() >= 1.0 {
        return Some((r, 0.0));
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Some((r, p))
}

/// Lagged copies of every variable on the common sample `t0..T`.
struct Lagged {
    cols: Vec<DVector<f64>>,
    max_shift: usize,
}

impl Lagged {
    fn new(z: &DMatrix<f64>, max_shift: usize) -> Self {
        let (t, k) = z.shape();
        let n = t - max_shift;
        let mut cols = Vec::with_capacity(k * (max_shift + 1));
        for j in 0..k {
            for lag in 0..=max_shift {
                cols.push(DVector::from_fn(n, |r, _| z[(r + max_shift - lag, j)]));
            }
        }
        Self { cols, max_shift }
    }

    fn get(&self, (var, lag): Node) -> &DVector<f64> {
        &self.cols[var * (self.max_shift + 1) + lag]
    }
}

/// Partial correlation test that drops the weakest conditions (last in
/// `conds`) until the design is nonsingular.
fn robust_test(data: &Lagged, target: Node, cand: Node, conds: &[Node], events: &mut Vec<String>) -> (f64, f64) {
    let mut used = conds.len();
    loop {
        let cs: Vec<&DVector<f64>> = conds[..used].iter().map(|c| data.get(*c)).collect();
        if let Some(res) = partial_correlation(data.get(target), data.get(cand), &cs) {
            return res;
        }
        if used == 0 {
            events.push(format!("singular_unconditional({:?}<-{:?})", target, cand));
            return (0.0, 1.0);
        }
        used -= 1;
        events.push(format!("dropped_condition({:?}<-{:?},{:?})", target, cand, conds[used]));
    }
}

fn stage1_target(data: &Lagged, k: usize, max_lag: usize, i: usize, alpha: f64, events: &mut Vec<String>) -> Vec<(Node, f64)> {
    let mut parents: Vec<(Node, f64)> = (0..k)
        .flat_map(|j| (1..=max_lag).map(move |tau| ((j, tau), f64::INFINITY)))
        .collect();
    let own: Vec<Node> = (1..=max_lag).map(|tau| (i, tau)).collect();
    for p in 0..=MAX_COND {
        if p > 0 && parents.len() <= p {
            break;
        }
        let snapshot: Vec<Node> = parents.iter().map(|(n, _)| *n).collect();
        let mut removed = BTreeSet::new();
        for (idx, (cand, strength)) in parents.iter_mut().enumerate() {
            // Cross-variable candidates are always tested against the
            // target's own past, as in a Granger test; strong autocorrelation
            // otherwise masks parents whose marginal correlation is near zero.
            let mut conds: Vec<Node> = if cand.0 == i {
                Vec::new()
            } else {
                own.iter().copied().filter(|n| snapshot.contains(n)).collect()
            };
            let extra: Vec<Node> = snapshot
                .iter()
                .enumerate()
                .filter(|(n, c)| *n != idx && !conds.contains(c))
                .map(|(_, c)| *c)
                .take(p)
                .collect();
            conds.extend(extra);
            let (r, pv) = robust_test(data, (i, 0), *cand, &conds, events);
            if pv > alpha {
                removed.insert(*cand);
            } else {
                *strength = strength.min(r.abs());
            }
        }
        parents.retain(|(n, _)| !removed.contains(n));
        parents.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    }
    parents
}

/// Parent-discovery stage: for each target, candidate lagged parents are
/// pruned by conditional independence tests with growing conditioning sets
/// (up to three of the strongest remaining parents). Parents are returned
/// strongest first.
pub fn pcmci_stage1(series: &Series, max_lag: usize, alpha: f64) -> Result<Vec<Vec<Node>>> {
    let (data, k) = lagged_data(series, max_lag, alpha)?;
    let mut events = Vec::new();
    Ok((0..k)
        .map(|i| stage1_target(&data, k, max_lag, i, alpha, &mut events).into_iter().map(|(n, _)| n).collect())
        .collect())
}

fn lagged_data(series: &Series, max_lag: usize, alpha: f64) -> Result<(Lagged, usize)> {
    if max_lag < 1 {
        return param("pcmci: max_lag must be >= 1");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return param(format!("pcmci: alpha must be in (0, 1), got {alpha}"));
    }
    let k = series.n_vars();
    let t0 = 2 * max_lag;
    let needed = t0 + k * max_lag + 2 * MAX_COND + 10;
    if series.len() < needed.min(t0 + 20) {
        return param(format!("pcmci: series of length {} too short", series.len()));
    }
    let z = ColumnStats::of(series.values()).apply(series.values());
    Ok((Lagged::new(&z, t0), k))
}

#[derive(Debug, Clone)]
pub struct PcmciResult {
    /// `1 - p` of the momentary conditional test for every surviving lagged
    /// link, zero for pruned links.
    pub scores: ScoreMatrix,
    pub parents: Vec<Vec<Node>>,
    pub p_values: Vec<f64>,
    /// Dropped-condition and singularity events.
    pub events: Vec<String>,
}

/// Two-stage lagged conditional-independence scorer (parent discovery, then
/// momentary conditional tests conditioning on the target's other parents
/// and the cause's strongest parents, shifted by the link lag).
pub fn pcmci_lite(series: &Series, max_lag: usize, alpha: f64) -> Result<PcmciResult> {
    let (data, k) = lagged_data(series, max_lag, alpha)?;
    let mut events = Vec::new();
    let parents: Vec<Vec<Node>> = (0..k)
        .map(|i| stage1_target(&data, k, max_lag, i, alpha, &mut events).into_iter().map(|(n, _)| n).collect())
        .collect();
    let mut p_values = vec![1.0; k * k * max_lag];
    let mut raw = vec![0.0; k * k * max_lag];
    for i in 0..k {
        for &(j, tau) in &parents[i] {
            let mut conds: Vec<Node> = parents[i].iter().copied().filter(|&n| n != (j, tau)).collect();
            for &(v, lag) in parents[j].iter().take(CAUSE_PARENTS) {
                let shifted = (v, lag + tau);
                if shifted.1 <= data.max_shift && !conds.contains(&shifted) && shifted != (j, tau) {
                    conds.push(shifted);
                }
            }
            let (_, p) = robust_test(&data, (i, 0), (j, tau), &conds, &mut events);
            let idx = (i * k + j) * max_lag + tau - 1;
            p_values[idx] = p;
            raw[idx] = 1.0 - p;
        }
    }
    Ok(PcmciResult {
        scores: ScoreMatrix::from_raw(k, max_lag, raw)?,
        parents,
        p_values,
        events,
    })
}
