use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{param, Error, Result};
use crate::intervene::InterventionLog;

/// A `T x K` multivariate series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    values: DMatrix<f64>,
    var_names: Vec<String>,
    dt: f64,
    intervention_log: Option<InterventionLog>,
}

impl Series {
    pub fn new(values: DMatrix<f64>, var_names: Vec<String>, dt: f64) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() < 2 {
            return param(format!(
                "series must be at least 2x2, got {}x{}",
                values.nrows(),
                values.ncols()
            ));
        }
        if var_names.len() != values.ncols() {
            return param(format!(
                "{} names for {} columns",
                var_names.len(),
                values.ncols()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (t, k) = (pos % values.nrows(), pos / values.nrows());
            return param(format!("non-finite value at row {t}, column {k}"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return param(format!("sampling interval must be positive, got {dt}"));
        }
        Ok(Self {
            values,
            var_names,
            dt,
            intervention_log: None,
        })
    }

    /// Series with default names `x0, x1, ...` and unit sampling interval.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let names = default_names(values.ncols());
        Self::new(values, names, 1.0)
    }

    /// Row-major construction; `names` defaults to `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>], names: Option<Vec<String>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return crate::error::param("rows have different lengths");
        }
        let values = DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]);
        Self::new(values, names.unwrap_or_else(|| default_names(k)), 1.0)
    }

    pub fn with_log(mut self, log: InterventionLog) -> Self {
        self.intervention_log = Some(log);
        self
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn intervention_log(&self) -> Option<&InterventionLog> {
        self.intervention_log.as_ref()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `start..end`. The intervention log is dropped.
    pub fn rows(&self, start: usize, end: usize) -> Result<Series> {
        if end > self.len() || start >= end {
            return param(format!("row range {start}..{end} out of 0..{}", self.len()));
        }
        Series::new(
            self.values.rows(start, end - start).into_owned(),
            self.var_names.clone(),
            self.dt,
        )
    }

    /// Columns reordered so that new column `c` is old column `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Series> {
        check_perm(perm, self.n_vars())?;
        let values = self.values.select_columns(perm);
        let names = perm.iter().map(|&p| self.var_names[p].clone()).collect();
        Series::new(values, names, self.dt)
    }

    /// Same series with every column z-scored over the full length.
    pub fn standardized(&self) -> Series {
        let stats = crate::linalg::ColumnStats::of(&self.values);
        Series {
            values: stats.apply(&self.values),
            var_names: self.var_names.clone(),
            dt: self.dt,
            intervention_log: self.intervention_log.clone(),
        }
    }

    /// Header of variable names, then one row per step. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.var_names)?;
        for row in self.values.row_iter() {
            wtr.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Series> {
        let mut rdr = csv::Reader::from_reader(r);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut data = Vec::new();
        let mut n_rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::Ingestion(format!(
                    "row {} has {} fields, expected {}",
                    n_rows + 1,
                    rec.len(),
                    names.len()
                )));
            }
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Ingestion(format!("row {}: cannot parse {field:?}", n_rows + 1))
                })?;
                data.push(v);
            }
            n_rows += 1;
        }
        let values = DMatrix::from_row_slice(n_rows, names.len(), &data);
        Series::new(values, names, 1.0)
    }
}

pub(crate) fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("x{i}")).collect()
}

pub(crate) fn check_perm(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k {
        return param("permutation length does not match variable count");
    }
    for &p in perm {
        if p >= k || seen[p] {
            return param("not a permutation");
        }
        seen[p] = true;
    }
    Ok(())
}

/// Ground-truth lagged graph. `edge(i, j, tau)` means "`j` at lag `tau`
/// causes `i`", with `tau` in `1..=max_lag`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaggedAdjacency {
    k: usize,
    max_lag: usize,
    edges: Vec<bool>,
}

impl LaggedAdjacency {
    pub fn empty(k: usize, max_lag: usize) -> Result<Self> {
        if k < 2 || max_lag < 1 {
            return param(format!("adjacency needs k >= 2 and max_lag >= 1, got k={k}, L={max_lag}"));
        }
        Ok(Self {
            k,
            max_lag,
            edges: vec![false; k * k * max_lag],
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    fn idx(&self, i: usize, j: usize, tau: usize) -> usize {
        assert!(i < self.k && j < self.k, "variable index out of range");
        assert!(tau >= 1 && tau <= self.max_lag, "lag {tau} outside 1..={}", self.max_lag);
        (i * self.k + j) * self.max_lag + (tau - 1)
    }

    pub fn get(&self, i: usize, j: usize, tau: usize) -> bool {
        self.edges[self.idx(i, j, tau)]
    }

    pub fn set(&mut self, i: usize, j: usize, tau: usize, on: bool) {
        let idx = self.idx(i, j, tau);
        self.edges[idx] = on;
    }

    /// `(effect, cause, lag)` of every true cell, self-edges included.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (k, l) = (self.k, self.max_lag);
        (0..k).flat_map(move |i| {
            (0..k).flat_map(move |j| (1..=l).map(move |tau| (i, j, tau)))
        })
        .filter(|&(i, j, tau)| self.get(i, j, tau))
    }

    /// (true, false) counts over off-diagonal cells.
    pub fn off_diagonal_counts(&self) -> (usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for i in 0..self.k {
            for j in 0..self.k {
                if i == j {
                    continue;
                }
                for tau in 1..=self.max_lag {
                    if self.get(i, j, tau) {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
            }
        }
        (pos, neg)
    }

    pub fn is_evaluable(&self) -> bool {
        let (p, n) = self.off_diagonal_counts();
        p > 0 && n > 0
    }

    /// Static (L = 1) graph: `i <- j` whenever any lag is an edge.
    pub fn collapse_any_lag(&self) -> LaggedAdjacency {
        let mut out = LaggedAdjacency {
            k: self.k,
            max_lag: 1,
            edges: vec![false; self.k * self.k],
        };
        for (i, j, _) in self.edges() {
            out.set(i, j, 1, true);
        }
        out
    }

    /// Same edges embedded in a deeper lag window (extra lags all false).
    pub fn padded_to(&self, max_lag: usize) -> Result<LaggedAdjacency> {
        if max_lag < self.max_lag {
            return param(format!("cannot pad L={} down to {max_lag}", self.max_lag));
        }
        let mut out = LaggedAdjacency::empty(self.k, max_lag)?;
        for (i, j, tau) in self.edges() {
            out.set(i, j, tau, true);
        }
        Ok(out)
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<LaggedAdjacency> {
        check_perm(perm, self.k)?;
        let mut inv = vec![0; self.k];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut out = LaggedAdjacency::empty(self.k, self.max_lag)?;
        for (i, j, tau) in self.edges() {
            out.set(inv[i], inv[j], tau, true);
        }
        Ok(out)
    }

    /// Flat `(effect, cause, lag, is_edge)` listing of every cell.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["effect", "cause", "lag", "is_edge"])?;
        for i in 0..self.k {
            for j in 0..self.k {
                for tau in 1..=self.max_lag {
                    let e = if self.get(i, j, tau) { "1" } else { "0" };
                    wtr.write_record([i.to_string(), j.to_string(), tau.to_string(), e.into()])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<LaggedAdjacency> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut cells = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |n: usize| -> Result<usize> {
                rec.get(n)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Ingestion(format!("bad adjacency row {rec:?}")))
            };
            cells.push((field(0)?, field(1)?, field(2)?, field(3)? != 0));
        }
        let k = cells.iter().map(|c| c.0.max(c.1)).max().unwrap_or(0) + 1;
        let l = cells.iter().map(|c| c.2).max().unwrap_or(0);
        let mut adj = LaggedAdjacency::empty(k, l)?;
        for (i, j, tau, e) in cells {
            if tau == 0 {
                return Err(Error::Ingestion("lag 0 in adjacency file".into()));
            }
            adj.set(i, j, tau, e);
        }
        Ok(adj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let mut m = DMatrix::zeros(3, 2);
        m[(1, 1)] = f64::NAN;
        assert!(matches!(Series::from_matrix(m), Err(Error::Parameter(_))));
    }

    #[test]
    fn rejects_too_small() {
        assert!(Series::from_matrix(DMatrix::zeros(1, 3)).is_err());
        assert!(Series::from_matrix(DMatrix::zeros(5, 1)).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let vals = DMatrix::from_row_slice(
            3,
            2,
            &[0.1 + 0.2, -1.0 / 3.0, 1e-300, 12345.678901234567, f64::MIN_POSITIVE, -0.0],
        );
        let s = Series::from_matrix(vals).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = Series::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), s.values());
        assert_eq!(back.var_names(), s.var_names());
    }

    #[test]
    fn adjacency_csv_round_trip() {
        let mut a = LaggedAdjacency::empty(3, 2).unwrap();
        a.set(0, 1, 2, true);
        a.set(2, 0, 1, true);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(LaggedAdjacency::read_csv(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn collapse_and_pad() {
        let mut a = LaggedAdjacency::empty(3, 2).unwrap();
        a.set(0, 1, 2, true);
        let c = a.collapse_any_lag();
        assert!(c.get(0, 1, 1));
        assert_eq!(c.off_diagonal_counts(), (1, 5));
        let p = a.padded_to(4).unwrap();
        assert!(p.get(0, 1, 2) && !p.get(0, 1, 3));
        assert_eq!(p.off_diagonal_counts(), (1, 23));
    }

    #[test]
    fn permutation_moves_edges() {
        let mut a = LaggedAdjacency::empty(3, 1).unwrap();
        a.set(1, 0, 1, true);
        // new column 0 is old 2, 1 is old 0, 2 is old 1
        let p = a.permuted(&[2, 0, 1]).unwrap();
        assert!(p.get(2, 1, 1));
        assert_eq!(p.off_diagonal_counts().0, 1);
    }
}
