use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// One `(cell, seed, method, arm)` evaluation. A failed run carries no AUROC
/// and an `error=...` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    /// Cell label: an index token followed by `key=value` tokens, e.g.
    /// `c003 K=10 T=300 gen=var_random`.
    pub cell: String,
    pub seed: usize,
    pub method: String,
    pub arm: String,
    pub auroc: Option<f64>,
    pub mse: Option<f64>,
    /// `;`-separated.
    pub flags: String,
    pub wall_time: f64,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.auroc {
            if !(0.0..=1.0).contains(&a) {
                return param(format!("auroc {a} outside [0, 1]"));
            }
        }
        if let Some(m) = self.mse {
            if !(m.is_finite() && m >= 0.0) {
                return param(format!("mse {m} must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    pub fn flag_list(&self) -> Vec<&str> {
        self.flags.split(';').filter(|f| !f.is_empty()).collect()
    }

    pub fn failed(&self) -> bool {
        self.auroc.is_none()
    }

    /// Value of `key` in the cell label.
    pub fn cell_param(&self, key: &str) -> Option<&str> {
        cell_param(&self.cell, key)
    }

    /// Same record with wall time zeroed, for determinism checks.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            wall_time: 0.0,
            ..self.clone()
        }
    }

    fn sort_key(&self) -> (&str, &str, usize, &str, &str) {
        (&self.stage, &self.cell, self.seed, &self.method, &self.arm)
    }
}

pub fn cell_param<'a>(cell: &'a str, key: &str) -> Option<&'a str> {
    cell.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

/// Sorts by `(stage, cell, seed, method, arm)`.
pub fn canonical_sort(records: &mut [RunRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn write_ledger<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wtr.write_record(["stage", "cell", "seed", "method", "arm", "auroc", "mse", "flags", "wall_time"])?;
    }
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_ledger<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: RunRecord = rec?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Seed-averaged AUROC and MSE of one method in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMean {
    pub auroc: f64,
    pub mse: Option<f64>,
    pub n: usize,
}

/// `cell -> method -> mean` over successful records of one arm.
pub fn cell_means(records: &[RunRecord], arm: &str) -> BTreeMap<String, BTreeMap<String, CellMean>> {
    let mut acc: BTreeMap<String, BTreeMap<String, (f64, f64, usize, usize)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.arm == arm) {
        let entry = acc.entry(r.cell.clone()).or_default().entry(r.method.clone()).or_default();
        if let Some(a) = r.auroc {
            entry.0 += a;
            entry.2 += 1;
            if let Some(m) = r.mse {
                entry.1 += m;
                entry.3 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(cell, methods)| {
            let m = methods
                .into_iter()
                .filter(|(_, v)| v.2 > 0)
                .map(|(name, (a, m, n, nm))| {
                    let mse = (nm == n).then(|| m / nm as f64);
                    (name, CellMean { auroc: a / n as f64, mse, n })
                })
                .collect();
            (cell, m)
        })
        .collect()
}

/// Win / loss / tie counts of the reference against the best competitor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricSummary {
    pub mean_delta: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

impl MetricSummary {
    pub fn cells(&self) -> usize {
        self.wins + self.losses + self.ties
    }

    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.cells().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellComparison {
    pub cell: String,
    pub reference_auroc: f64,
    pub best_auroc: f64,
    pub best_auroc_method: String,
    pub reference_mse: Option<f64>,
    pub best_mse: Option<f64>,
    pub best_mse_method: Option<String>,
    /// Lowest MSE among all methods including the reference.
    pub overall_best_mse_method: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinRateTable {
    pub reference: String,
    pub cells: Vec<CellComparison>,
    /// Deltas are reference minus best competitor (AUROC: higher is better).
    pub auroc: MetricSummary,
    /// Deltas are best competitor minus reference (MSE: lower is better), so
    /// positive means the reference is better, as for AUROC.
    pub mse: Option<MetricSummary>,
    pub best_auroc_tally: BTreeMap<String, usize>,
    pub best_mse_tally: BTreeMap<String, usize>,
    pub overall_best_mse_tally: BTreeMap<String, usize>,
}

fn argbest<'a>(it: impl Iterator<Item = (&'a String, f64)>, higher: bool) -> Option<(&'a String, f64)> {
    let mut best: Option<(&String, f64)> = None;
    for (name, v) in it {
        let better = match best {
            None => true,
            Some((_, b)) => {
                if higher {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((name, v));
        }
    }
    best
}

/// Per-cell comparison of `reference` against its best competitor (seed
/// means, strict wins). Uses the records of `arm`.
pub fn win_rate_table(records: &[RunRecord], reference: &str, arm: &str) -> Result<WinRateTable> {
    let means = cell_means(records, arm);
    if means.is_empty() {
        return Err(Error::IncompleteGrid(vec![format!("no records for arm {arm:?}")]));
    }
    let mut missing = Vec::new();
    for (cell, m) in &means {
        if !m.contains_key(reference) {
            missing.push(format!("{cell}: no {reference} result"));
        } else if m.len() < 2 {
            missing.push(format!("{cell}: no competitor result"));
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }
    let mut cells = Vec::new();
    let mut auroc = MetricSummary::default();
    let mut mse_sum = MetricSummary::default();
    let mut mse_complete = true;
    let mut best_auroc_tally = BTreeMap::new();
    let mut best_mse_tally = BTreeMap::new();
    let mut overall_best_mse_tally = BTreeMap::new();
    for (cell, m) in &means {
        let r = &m[reference];
        let comps = || m.iter().filter(|(n, _)| n.as_str() != reference);
        let (ba_name, ba) = argbest(comps().map(|(n, v)| (n, v.auroc)), true).expect("competitor present");
        let da = r.auroc - ba;
        auroc.mean_delta += da;
        tally(&mut auroc, r.auroc, ba, true);
        *best_auroc_tally.entry(ba_name.clone()).or_insert(0) += 1;

        let best_mse = argbest(comps().filter_map(|(n, v)| v.mse.map(|x| (n, x))), false);
        let overall = argbest(m.iter().filter_map(|(n, v)| v.mse.map(|x| (n, x))), false);
        match (r.mse, best_mse) {
            (Some(rm), Some((_, bm))) => {
                mse_sum.mean_delta += bm - rm;
                tally(&mut mse_sum, rm, bm, false);
            }
            _ => mse_complete = false,
        }
        if let Some((n, _)) = best_mse {
            *best_mse_tally.entry(n.clone()).or_insert(0) += 1;
        }
        if let Some((n, _)) = overall {
            *overall_best_mse_tally.entry(n.clone()).or_insert(0) += 1;
        }
        cells.push(CellComparison {
            cell: cell.clone(),
            reference_auroc: r.auroc,
            best_auroc: ba,
            best_auroc_method: ba_name.clone(),
            reference_mse: r.mse,
            best_mse: best_mse.map(|b| b.1),
            best_mse_method: best_mse.map(|b| b.0.clone()),
            overall_best_mse_method: overall.map(|b| b.0.clone()),
        });
    }
    let n = cells.len() as f64;
    auroc.mean_delta /= n;
    let mse = if mse_complete {
        mse_sum.mean_delta /= n;
        Some(mse_sum)
    } else {
        None
    };
    Ok(WinRateTable {
        reference: reference.to_string(),
        cells,
        auroc,
        mse,
        best_auroc_tally,
        best_mse_tally,
        overall_best_mse_tally,
    })
}

fn tally(s: &mut MetricSummary, reference: f64, best: f64, higher: bool) {
    let (r, b) = if higher { (reference, best) } else { (best, reference) };
    if r > b {
        s.wins += 1;
    } else if r < b {
        s.losses += 1;
    } else {
        s.ties += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(cell: &str, seed: usize, method: &str, auroc: f64, mse: f64) -> RunRecord {
        RunRecord {
            stage: "f2".into(),
            cell: cell.into(),
            seed,
            method: method.into(),
            arm: "obs".into(),
            auroc: Some(auroc),
            mse: Some(mse),
            flags: String::new(),
            wall_time: 0.1,
        }
    }

    #[test]
    fn reference_dominates() {
        let mut rs = Vec::new();
        for c in ["c0", "c1"] {
            for s in 0..3 {
                rs.push(rec(c, s, "ref", 0.9, 1.0));
                rs.push(rec(c, s, "a", 0.7, 2.0));
                rs.push(rec(c, s, "b", 0.8, 1.5));
            }
        }
        let t = win_rate_table(&rs, "ref", "obs").unwrap();
        assert_eq!(t.auroc.win_rate(), 1.0);
        assert!((t.auroc.mean_delta - 0.1).abs() < 1e-12);
        assert_eq!(t.best_auroc_tally["b"], 2);
        assert_eq!(t.mse.unwrap().wins, 2);
        assert_eq!(t.overall_best_mse_tally["ref"], 2);
    }

    #[test]
    fn ties_are_not_wins() {
        let rs = vec![rec("c0", 0, "ref", 0.8, 1.0), rec("c0", 0, "a", 0.8, 1.0)];
        let t = win_rate_table(&rs, "ref", "obs").unwrap();
        assert_eq!(t.auroc.win_rate(), 0.0);
        assert_eq!(t.auroc.ties, 1);
    }

    #[test]
    fn incomplete_grid_lists_cells() {
        let rs = vec![rec("c0", 0, "ref", 0.8, 1.0), rec("c1", 0, "a", 0.8, 1.0), rec("c1", 0, "b", 0.8, 1.0)];
        match win_rate_table(&rs, "ref", "obs") {
            Err(Error::IncompleteGrid(cells)) => assert_eq!(cells.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ledger_round_trip() {
        let mut rs = vec![rec("c1", 0, "b", 0.5, 1.0), rec("c0", 1, "a", 0.75, 0.25)];
        rs[0].mse = None;
        rs[0].flags = "x;y".into();
        canonical_sort(&mut rs);
        assert_eq!(rs[0].cell, "c0");
        let mut buf = Vec::new();
        write_ledger(&mut buf, &rs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("stage,cell,seed,method,arm,auroc,mse,flags,wall_time\n"));
        assert_eq!(read_ledger(buf.as_slice()).unwrap(), rs);
    }

    #[test]
    fn cell_params_parse() {
        assert_eq!(cell_param("c003 K=10 T=300 gen=var_random", "T"), Some("300"));
        assert_eq!(cell_param("c003 K=10", "T"), None);
    }
}
