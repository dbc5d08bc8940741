use std::io::{Read, Write};

use crate::error::{param, Error, Result};
use crate::synthgen::LaggedAdjacency;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Divided by the largest entry, so the max is exactly 1.
    Max,
    /// Every off-diagonal entry was zero; left as is.
    AllZero,
}

/// Nonnegative edge scores indexed `(effect, cause, lag)`, diagonal zeroed
/// at every lag and max-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    k: usize,
    max_lag: usize,
    scores: Vec<f64>,
    normalization: Normalization,
}

impl ScoreMatrix {
    /// Builds from raw nonnegative scores in `(i * k + j) * max_lag + tau - 1`
    /// order: zeroes the diagonal and divides by the maximum.
    pub fn from_raw(k: usize, max_lag: usize, mut raw: Vec<f64>) -> Result<Self> {
        if k < 2 || max_lag < 1 {
            return param(format!("score matrix needs k >= 2, L >= 1 (got {k}, {max_lag})"));
        }
        if raw.len() != k * k * max_lag {
            return param(format!("expected {} scores, got {}", k * k * max_lag, raw.len()));
        }
        if let Some(v) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return param(format!("scores must be finite and nonnegative, found {v}"));
        }
        for i in 0..k {
            for tau in 0..max_lag {
                raw[(i * k + i) * max_lag + tau] = 0.0;
            }
        }
        let max = raw.iter().copied().fold(0.0, f64::max);
        let normalization = if max > 0.0 {
            raw.iter_mut().for_each(|v| *v /= max);
            Normalization::Max
        } else {
            Normalization::AllZero
        };
        Ok(Self {
            k,
            max_lag,
            scores: raw,
            normalization,
        })
    }

    /// Builds from a closure over `(effect, cause, lag)`.
    pub fn from_fn(k: usize, max_lag: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut raw = Vec::with_capacity(k * k * max_lag);
        for i in 0..k {
            for j in 0..k {
                for tau in 1..=max_lag {
                    raw.push(f(i, j, tau));
                }
            }
        }
        Self::from_raw(k, max_lag, raw)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn get(&self, i: usize, j: usize, tau: usize) -> f64 {
        assert!(tau >= 1 && tau <= self.max_lag);
        self.scores[(i * self.k + j) * self.max_lag + (tau - 1)]
    }

    /// Flat scores in `(effect, cause, lag)` order.
    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    /// Static matrix taking the max over lags for each pair.
    pub fn collapse_max_over_lags(&self) -> ScoreMatrix {
        if self.max_lag == 1 {
            return self.clone();
        }
        let raw = (0..self.k * self.k)
            .map(|pair| {
                self.scores[pair * self.max_lag..(pair + 1) * self.max_lag]
                    .iter()
                    .copied()
                    .fold(0.0, f64::max)
            })
            .collect();
        ScoreMatrix::from_raw(self.k, 1, raw).expect("collapse preserves validity")
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<ScoreMatrix> {
        crate::synthgen::check_perm(perm, self.k)?;
        ScoreMatrix::from_fn(self.k, self.max_lag, |i, j, tau| self.get(perm[i], perm[j], tau))
    }

    /// Binary graph keeping off-diagonal cells at or above the score
    /// quantile that leaves `density` of them on.
    pub fn threshold_quantile(&self, density: f64) -> Result<LaggedAdjacency> {
        if !(density > 0.0 && density <= 1.0) {
            return param(format!("density must be in (0, 1], got {density}"));
        }
        let mut off: Vec<f64> = Vec::new();
        for i in 0..self.k {
            for j in 0..self.k {
                if i != j {
                    for tau in 1..=self.max_lag {
                        off.push(self.get(i, j, tau));
                    }
                }
            }
        }
        off.sort_by(|a, b| b.total_cmp(a));
        let keep = ((density * off.len() as f64).ceil() as usize).clamp(1, off.len());
        let cut = off[keep - 1];
        let mut adj = LaggedAdjacency::empty(self.k, self.max_lag)?;
        for i in 0..self.k {
            for j in 0..self.k {
                for tau in 1..=self.max_lag {
                    if i != j && self.get(i, j, tau) >= cut && cut > 0.0 {
                        adj.set(i, j, tau, true);
                    }
                }
            }
        }
        Ok(adj)
    }

    /// Rows `(effect, cause, lag, score)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["effect", "cause", "lag", "score"])?;
        for i in 0..self.k {
            for j in 0..self.k {
                for tau in 1..=self.max_lag {
                    wtr.write_record([
                        i.to_string(),
                        j.to_string(),
                        tau.to_string(),
                        format!("{}", self.get(i, j, tau)),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). Missing cells
    /// are zero; every field is validated.
    pub fn read_csv<R: Read>(r: R) -> Result<ScoreMatrix> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let expected = ["effect", "cause", "lag", "score"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::Ingestion(format!(
                "score CSV header must be effect,cause,lag,score; got {headers:?}"
            )));
        }
        let mut cells = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = || Error::Ingestion(format!("score CSV row {}: {rec:?}", n + 1));
            let idx = |c: usize| -> Result<usize> {
                rec.get(c).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)
            };
            let (i, j, tau) = (idx(0)?, idx(1)?, idx(2)?);
            let s: f64 = rec.get(3).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            if tau == 0 || !s.is_finite() || s < 0.0 {
                return Err(bad());
            }
            cells.push((i, j, tau, s));
        }
        if cells.is_empty() {
            return Err(Error::Ingestion("score CSV has no rows".into()));
        }
        let k = cells.iter().map(|c| c.0.max(c.1)).max().unwrap_or(0) + 1;
        let l = cells.iter().map(|c| c.2).max().unwrap_or(1);
        let mut raw = vec![0.0; k * k * l];
        for (i, j, tau, s) in cells {
            raw[(i * k + j) * l + tau - 1] = s;
        }
        ScoreMatrix::from_raw(k, l, raw)
    }
}
