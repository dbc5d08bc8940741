use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::plan::Stage;
use crate::error::{Error, Result};
use crate::evalstats::{cell_param, paired_test, win_rate_table, PairedTestResult, RunRecord, WinRateTable};

/// Markdown pipe table with padded columns.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let n = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (c, cell) in r.iter().enumerate().take(n) {
            width[c] = width[c].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::from("|");
        for c in 0..n {
            let v = cells.get(c).map(String::as_str).unwrap_or("");
            let _ = write!(s, " {v:<w$} |", w = width[c]);
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    out.push('|');
    for w in &width {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Cell label without its index token.
fn cell_desc(cell: &str) -> &str {
    cell.split_once(' ').map(|(_, rest)| rest).unwrap_or(cell)
}

fn flag_value<'a>(r: &'a RunRecord, key: &str) -> Option<&'a str> {
    r.flag_list()
        .into_iter()
        .filter_map(|f| f.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub cell: String,
    pub method: String,
    pub arm: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub failed: usize,
    pub mse_mean: Option<f64>,
    /// Mean AUROC of the scores at initialisation, when recorded.
    pub init_mean: Option<f64>,
}

/// Mean and sd of AUROC per `(cell, method, arm)` over successful seeds.
pub fn method_summary(records: &[RunRecord]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.cell, &r.method, &r.arm)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((cell, method, arm), rs)| {
            let ok: Vec<f64> = rs.iter().filter_map(|r| r.auroc).collect();
            let (mean, sd) = if ok.is_empty() { (f64::NAN, f64::NAN) } else { mean_sd(&ok) };
            let mses: Vec<f64> = rs.iter().filter_map(|r| r.mse).collect();
            let inits: Vec<f64> = rs.iter().filter_map(|r| flag_value(r, "init_auroc")?.parse().ok()).collect();
            MethodSummary {
                cell: cell.into(),
                method: method.into(),
                arm: arm.into(),
                mean,
                sd,
                n: ok.len(),
                failed: rs.len() - ok.len(),
                mse_mean: (!mses.is_empty() && mses.len() == ok.len()).then(|| mean_sd(&mses).0),
                init_mean: (!inits.is_empty()).then(|| mean_sd(&inits).0),
            }
        })
        .collect()
}

/// One `(cell, method)` row of the size-match control.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub cell: String,
    pub scheme: String,
    pub k: usize,
    pub t: usize,
    pub method: String,
    /// `AUROC(combined) - AUROC(obs_big)` per seed.
    pub size_matched: PairedTestResult,
    /// `AUROC(combined) - AUROC(obs)` per seed.
    pub confounded: PairedTestResult,
}

/// Paired gaps for every `(cell, method)` with at least three seeds that
/// succeeded on all three arms.
pub fn size_match_gaps(records: &[RunRecord]) -> Result<Vec<GapRow>> {
    let mut by: BTreeMap<(&str, &str), BTreeMap<usize, BTreeMap<&str, f64>>> = BTreeMap::new();
    for r in records {
        if let Some(a) = r.auroc {
            by.entry((&r.cell, &r.method)).or_default().entry(r.seed).or_default().insert(&r.arm, a);
        }
    }
    let mut rows = Vec::new();
    for ((cell, method), seeds) in by {
        let mut sm = Vec::new();
        let mut cf = Vec::new();
        for arms in seeds.values() {
            if let (Some(c), Some(b), Some(o)) = (arms.get("combined"), arms.get("obs_big"), arms.get("obs")) {
                sm.push(c - b);
                cf.push(c - o);
            }
        }
        if sm.len() < 3 {
            continue;
        }
        let parse = |key: &str| cell_param(cell, key).and_then(|v| v.parse().ok()).unwrap_or(0);
        rows.push(GapRow {
            cell: cell.into(),
            scheme: cell_param(cell, "scheme").unwrap_or("").into(),
            k: parse("K"),
            t: parse("T"),
            method: method.into(),
            size_matched: paired_test(format!("{method} combined-obs_big"), &sm)?,
            confounded: paired_test(format!("{method} combined-obs"), &cf)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurviveRow {
    pub cell: String,
    pub variant: String,
    pub mean_auroc: f64,
    pub best_baseline: String,
    pub best_baseline_auroc: f64,
    pub wins: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurviveSummary {
    /// Bottleneck variants on nonlinear cells against the best baseline.
    pub rows: Vec<SurviveRow>,
    /// Seeds where `lasso` beats the default `bottleneck` on linear
    /// (`alpha=0`) cells, and the number of seeds compared.
    pub linear_lasso_wins: Option<(usize, usize)>,
}

impl SurviveSummary {
    pub fn win_fraction(&self) -> f64 {
        self.rows.iter().filter(|r| r.wins).count() as f64 / self.rows.len().max(1) as f64
    }
}

fn is_bottleneck(method: &str) -> bool {
    method.starts_with("bottleneck")
}

pub fn survive_summary(records: &[RunRecord]) -> SurviveSummary {
    let summary = method_summary(records);
    let mut rows = Vec::new();
    let cells: BTreeSet<&str> = summary.iter().map(|s| s.cell.as_str()).collect();
    for cell in &cells {
        let alpha: f64 = cell_param(cell, "alpha").and_then(|a| a.parse().ok()).unwrap_or(0.0);
        if alpha == 0.0 {
            continue;
        }
        let here: Vec<&MethodSummary> = summary.iter().filter(|s| s.cell == *cell && s.n > 0).collect();
        let best = here
            .iter()
            .filter(|s| !is_bottleneck(&s.method))
            .max_by(|a, b| a.mean.total_cmp(&b.mean));
        let Some(best) = best else { continue };
        for s in here.iter().filter(|s| is_bottleneck(&s.method)) {
            rows.push(SurviveRow {
                cell: cell.to_string(),
                variant: s.method.clone(),
                mean_auroc: s.mean,
                best_baseline: best.method.clone(),
                best_baseline_auroc: best.mean,
                wins: s.mean > best.mean,
            });
        }
    }
    let mut per_seed: BTreeMap<(&str, usize), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in records {
        let alpha: f64 = r.cell_param("alpha").and_then(|a| a.parse().ok()).unwrap_or(-1.0);
        if alpha != 0.0 {
            continue;
        }
        let e = per_seed.entry((&r.cell, r.seed)).or_default();
        match r.method.as_str() {
            "lasso" => e.0 = r.auroc,
            "bottleneck" => e.1 = r.auroc,
            _ => {}
        }
    }
    let pairs: Vec<(f64, f64)> = per_seed.values().filter_map(|(l, b)| Some(((*l)?, (*b)?))).collect();
    let linear_lasso_wins = (!pairs.is_empty()).then(|| (pairs.iter().filter(|(l, b)| l > b).count(), pairs.len()));
    SurviveSummary { rows, linear_lasso_wins }
}

/// Cells missing some `(seed, method, arm)` combination that other records
/// in the same cell have.
pub fn missing_combinations(records: &[RunRecord]) -> Vec<String> {
    let mut by_cell: BTreeMap<&str, BTreeSet<(usize, &str, &str)>> = BTreeMap::new();
    for r in records {
        by_cell.entry(&r.cell).or_default().insert((r.seed, &r.method, &r.arm));
    }
    let mut missing = Vec::new();
    for (cell, have) in by_cell {
        let seeds: BTreeSet<usize> = have.iter().map(|x| x.0).collect();
        let methods: BTreeSet<&str> = have.iter().map(|x| x.1).collect();
        let arms: BTreeSet<&str> = have.iter().map(|x| x.2).collect();
        for s in &seeds {
            for m in &methods {
                for a in &arms {
                    if !have.contains(&(*s, *m, *a)) {
                        missing.push(format!("{cell}: seed {s} method {m} arm {a}"));
                    }
                }
            }
        }
    }
    missing
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "-".into())
}

fn summary_table(records: &[RunRecord]) -> (String, String) {
    let rows = method_summary(records);
    let header = strings(&["cell", "method", "arm", "auroc", "n", "failed", "mse", "init_auroc"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|s| {
            vec![
                cell_desc(&s.cell).to_string(),
                s.method.clone(),
                s.arm.clone(),
                format!("{:.3} ± {:.3}", s.mean, s.sd),
                s.n.to_string(),
                s.failed.to_string(),
                fmt_opt(s.mse_mean, 4),
                fmt_opt(s.init_mean, 3),
            ]
        })
        .collect();
    let mut csv = String::from("cell,method,arm,auroc_mean,auroc_sd,n,failed,mse_mean,init_auroc_mean\n");
    for s in &rows {
        let _ = writeln!(
            csv,
            "\"{}\",{},{},{},{},{},{},{},{}",
            s.cell,
            s.method,
            s.arm,
            s.mean,
            s.sd,
            s.n,
            s.failed,
            s.mse_mean.map(|m| m.to_string()).unwrap_or_default(),
            s.init_mean.map(|m| m.to_string()).unwrap_or_default()
        );
    }
    (render_table(&header, &body), csv)
}

/// Win-rate summary in the layout of the stress-grid table.
pub fn win_rate_markdown(t: &WinRateTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## Stress grid: {} against the best competitor per cell\n", t.reference);
    let mut rows = vec![vec![
        "AUROC".to_string(),
        format!("{:+.3}", t.auroc.mean_delta),
        format!("{:.0}% ({}/{})", 100.0 * t.auroc.win_rate(), t.auroc.wins, t.auroc.cells()),
    ]];
    if let Some(m) = &t.mse {
        rows.push(vec![
            "MSE".into(),
            format!("{:+.4}", -m.mean_delta),
            format!("{:.0}% ({}/{})", 100.0 * m.win_rate(), m.wins, m.cells()),
        ]);
    }
    out.push_str(&render_table(&strings(&["metric", "mean delta", "win rate"]), &rows));
    let tally = |name: &str, tally: &BTreeMap<String, usize>| {
        let n: usize = tally.values().sum();
        let mut v: Vec<(&String, &usize)> = tally.iter().collect();
        v.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let parts: Vec<String> = v.iter().map(|(m, c)| format!("{m} ({c}/{n})")).collect();
        format!("{name}: {}\n", parts.join(", "))
    };
    out.push('\n');
    out.push_str(&tally("Best baseline by AUROC", &t.best_auroc_tally));
    if t.mse.is_some() {
        out.push_str(&tally("Best baseline by MSE", &t.best_mse_tally));
        out.push_str(&tally("Best overall by MSE", &t.overall_best_mse_tally));
    }
    out.push_str("\nMSE delta is reference minus best competitor (negative favours the reference).\n");
    out
}

fn gaps_markdown(rows: &[GapRow]) -> String {
    let header = strings(&["scheme", "K", "T", "method", "size-matched gap", "confounded gap"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|g| {
            vec![
                g.scheme.clone(),
                g.k.to_string(),
                g.t.to_string(),
                g.method.clone(),
                g.size_matched.summary(),
                g.confounded.summary(),
            ]
        })
        .collect();
    let mut out = String::from("## Size-matched control: AUROC(combined) - AUROC(obs_big) and - AUROC(obs)\n\n");
    out.push_str(&render_table(&header, &body));
    // per scheme and method: grand mean of the size-matched gap
    let mut grand: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for g in rows {
        grand.entry((&g.scheme, &g.method)).or_default().push(g.size_matched.mean_delta);
    }
    out.push_str("\nGrand mean size-matched gap over cells:\n\n");
    let body: Vec<Vec<String>> = grand
        .iter()
        .map(|((s, m), v)| {
            let sig = rows
                .iter()
                .filter(|g| g.scheme == *s && g.method == *m && g.size_matched.p_value() < 0.05)
                .count();
            vec![
                s.to_string(),
                m.to_string(),
                format!("{:+.4}", mean_sd(v).0),
                format!("{sig}/{}", v.len()),
            ]
        })
        .collect();
    out.push_str(&render_table(&strings(&["scheme", "method", "mean gap", "p < 0.05"]), &body));
    out.push_str("\np-values are two-sided paired t-tests (sign test when the t-test is degenerate), uncorrected.\n");
    out
}

fn gaps_csv(rows: &[GapRow]) -> String {
    let mut csv = String::from(
        "cell,scheme,K,T,method,size_matched_gap,size_matched_p_t,size_matched_p_sign,confounded_gap,confounded_p_t,confounded_p_sign,n\n",
    );
    for g in rows {
        let _ = writeln!(
            csv,
            "\"{}\",{},{},{},{},{},{},{},{},{},{},{}",
            g.cell,
            g.scheme,
            g.k,
            g.t,
            g.method,
            g.size_matched.mean_delta,
            g.size_matched.p_t.map(|p| p.to_string()).unwrap_or_default(),
            g.size_matched.p_sign,
            g.confounded.mean_delta,
            g.confounded.p_t.map(|p| p.to_string()).unwrap_or_default(),
            g.confounded.p_sign,
            g.size_matched.n
        );
    }
    csv
}

/// Method rows by K columns of size-matched gains.
fn method_by_k_markdown(rows: &[GapRow]) -> String {
    let ks: BTreeSet<usize> = rows.iter().map(|g| g.k).collect();
    let methods: BTreeSet<&str> = rows.iter().map(|g| g.method.as_str()).collect();
    let mut header = vec!["method".to_string()];
    header.extend(ks.iter().map(|k| format!("K={k}")));
    let body: Vec<Vec<String>> = methods
        .iter()
        .map(|m| {
            let mut row = vec![m.to_string()];
            for k in &ks {
                let cells: Vec<&GapRow> = rows.iter().filter(|g| g.method == *m && g.k == *k).collect();
                row.push(match cells.as_slice() {
                    [g] => g.size_matched.summary(),
                    [] => "-".into(),
                    many => format!("{:+.3} (mean of {} cells)", mean_sd(&many.iter().map(|g| g.size_matched.mean_delta).collect::<Vec<_>>()).0, many.len()),
                });
            }
            row
        })
        .collect();
    let mut out = String::from("## Size-matched gain by method and K\n\n");
    out.push_str(&render_table(&header, &body));
    out
}

fn survive_markdown(s: &SurviveSummary) -> String {
    let mut out = String::from("## Bottleneck configurations against the best tuned baseline\n\n");
    let body: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|r| {
            vec![
                cell_desc(&r.cell).to_string(),
                r.variant.clone(),
                format!("{:.3}", r.mean_auroc),
                format!("{} {:.3}", r.best_baseline, r.best_baseline_auroc),
                if r.wins { "win".into() } else { "loss".into() },
            ]
        })
        .collect();
    out.push_str(&render_table(&strings(&["cell", "variant", "auroc", "best baseline", "result"]), &body));
    let _ = writeln!(out, "\nWin fraction: {:.0}%", 100.0 * s.win_fraction());
    if let Some((w, n)) = s.linear_lasso_wins {
        let _ = writeln!(out, "Linear cells: lasso beats the default bottleneck on {w}/{n} seeds");
    }
    out
}

/// Writes the stage's tables into `dir`. Fails without writing anything
/// when the ledger is empty or has holes.
pub fn emit_reports(records: &[RunRecord], stage: Stage, dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::IncompleteGrid(vec![format!("ledger for {stage} is empty")]));
    }
    let missing = missing_combinations(records);
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }
    let mut files: Vec<(String, String)> = Vec::new();
    let (md, csv) = summary_table(records);
    files.push(("summary.md".into(), format!("## {stage}: AUROC by cell and method\n\n{md}")));
    files.push(("summary.csv".into(), csv));
    match stage {
        Stage::F2 => {
            let t = win_rate_table(records, "bottleneck", "obs")?;
            files.push(("table1.md".into(), win_rate_markdown(&t)));
            let mut csv = String::from("cell,reference_auroc,best_auroc,best_auroc_method,reference_mse,best_mse,best_mse_method,overall_best_mse_method\n");
            for c in &t.cells {
                let _ = writeln!(
                    csv,
                    "\"{}\",{},{},{},{},{},{},{}",
                    c.cell,
                    c.reference_auroc,
                    c.best_auroc,
                    c.best_auroc_method,
                    c.reference_mse.map(|v| v.to_string()).unwrap_or_default(),
                    c.best_mse.map(|v| v.to_string()).unwrap_or_default(),
                    c.best_mse_method.clone().unwrap_or_default(),
                    c.overall_best_mse_method.clone().unwrap_or_default()
                );
            }
            files.push(("table1_cells.csv".into(), csv));
        }
        Stage::F3 => {
            let rows = method_summary(records);
            let mut body: Vec<Vec<String>> = rows
                .iter()
                .map(|s| vec![cell_desc(&s.cell).to_string(), s.method.clone(), format!("{:.3} ± {:.3}", s.mean, s.sd), s.n.to_string()])
                .collect();
            body.sort_by(|a, b| a[0].cmp(&b[0]).then(b[2].cmp(&a[2])));
            let md = format!(
                "## Benchmarks: AUROC by dataset and method\n\n{}",
                render_table(&strings(&["dataset", "method", "auroc", "n"]), &body)
            );
            files.push(("table2.md".into(), md));
        }
        Stage::F4 | Stage::F5 => {
            let gaps = size_match_gaps(records)?;
            files.push(("gaps.md".into(), gaps_markdown(&gaps)));
            files.push(("gaps.csv".into(), gaps_csv(&gaps)));
            files.push(("by_k.md".into(), method_by_k_markdown(&gaps)));
        }
        Stage::Survives => {
            files.push(("survives.md".into(), survive_markdown(&survive_summary(records))));
        }
        Stage::F1 => {}
    }
    let failures: Vec<String> = records
        .iter()
        .filter(|r| r.failed())
        .map(|r| format!("{} seed {} {} {}: {}", r.cell, r.seed, r.method, r.arm, r.flags))
        .collect();
    if !failures.is_empty() {
        files.push(("failures.txt".into(), failures.join("\n") + "\n"));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(cell: &str, seed: usize, method: &str, arm: &str, auroc: f64) -> RunRecord {
        RunRecord {
            stage: "f4".into(),
            cell: cell.into(),
            seed,
            method: method.into(),
            arm: arm.into(),
            auroc: Some(auroc),
            mse: None,
            flags: "init_auroc=0.5".into(),
            wall_time: 0.0,
        }
    }

    #[test]
    fn table_is_aligned() {
        let t = render_table(&strings(&["a", "bb"]), &[strings(&["xxx", "y"])]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    }

    #[test]
    fn gaps_from_records() {
        let cell = "c000 K=10 T=300 gen=var_random scheme=random_forcing";
        let mut rs = Vec::new();
        for s in 0..4 {
            rs.push(rec(cell, s, "bottleneck", "obs", 0.7));
            rs.push(rec(cell, s, "bottleneck", "combined", 0.8 + 0.01 * s as f64));
            rs.push(rec(cell, s, "bottleneck", "obs_big", 0.78));
        }
        let g = size_match_gaps(&rs).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!((g[0].k, g[0].t, g[0].scheme.as_str()), (10, 300, "random_forcing"));
        assert!((g[0].size_matched.mean_delta - 0.035).abs() < 1e-12);
        assert!((g[0].confounded.mean_delta - 0.115).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_reports(&rs, Stage::F4, dir.path()).unwrap();
        assert!(files.iter().any(|f| f.ends_with("gaps.md")));
        let summary = method_summary(&rs);
        assert_eq!(summary[0].init_mean, Some(0.5));
    }

    #[test]
    fn empty_or_incomplete_ledgers_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(emit_reports(&[], Stage::F1, &out).is_err());
        let rs = vec![
            rec("c0", 0, "a", "obs", 0.5),
            rec("c0", 1, "a", "obs", 0.5),
            rec("c0", 0, "b", "obs", 0.5),
        ];
        match emit_reports(&rs, Stage::F1, &out) {
            Err(Error::IncompleteGrid(m)) => assert_eq!(m, vec!["c0: seed 1 method b arm obs".to_string()]),
            other => panic!("{other:?}"),
        }
        assert!(!out.exists());
    }

    #[test]
    fn survive_summary_counts() {
        let nl = "c000 K=20 T=300 gen=causeme_nonlinear L=1 fit_L=1 dens=0.1 alpha=0.3";
        let lin = "c001 K=20 T=300 gen=causeme_nonlinear L=1 fit_L=1 dens=0.1 alpha=0";
        let mut rs = Vec::new();
        for s in 0..3 {
            rs.push(rec(nl, s, "bottleneck_a", "obs", 0.9));
            rs.push(rec(nl, s, "bottleneck_b", "obs", 0.7));
            rs.push(rec(nl, s, "lasso", "obs", 0.8));
            rs.push(rec(lin, s, "bottleneck", "obs", 0.8));
            rs.push(rec(lin, s, "lasso", "obs", if s < 2 { 0.9 } else { 0.7 }));
        }
        let s = survive_summary(&rs);
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.win_fraction(), 0.5);
        assert_eq!(s.linear_lasso_wins, Some((2, 3)));
    }
}
