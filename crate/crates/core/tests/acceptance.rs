//! End-to-end acceptance run. Every stage plan is executed in-process with
//! its default settings and the resulting ledger is checked against fixed
//! thresholds. One line per criterion goes to stderr (outside the test
//! harness capture), and the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bnbench::baselines::{lasso_cd, rrr_project, LaggedDesign, LassoConfig};
use bnbench::bottleneck::Objective;
use bnbench::evalstats::{auroc, win_rate_table, RunRecord};
use bnbench::harness::{default_plan, run_stage, size_match_gaps, survive_summary, MethodRegistry, Stage, StageOutcome};
use bnbench::synthgen::{gen_var_random, Lorenz96};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(checks: &[(bool, String)], elapsed: Duration, budget_secs: u64) -> Self {
        let in_budget = elapsed.as_secs_f64() <= budget_secs as f64;
        let mut parts: Vec<String> = checks
            .iter()
            .map(|(ok, s)| format!("{}{s}", if *ok { "" } else { "[x] " }))
            .collect();
        parts.push(format!(
            "{}runtime {:.1}s (budget {budget_secs}s)",
            if in_budget { "" } else { "[x] " },
            elapsed.as_secs_f64()
        ));
        Self {
            pass: in_budget && checks.iter().all(|c| c.0),
            detail: parts.join("; "),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self {
            pass: false,
            detail: format!("error: {e}"),
        }
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(stage: Stage) -> bnbench::Result<(StageOutcome, Duration)> {
    let plan = default_plan(stage, &workspace_root());
    let registry = MethodRegistry::with_builtins();
    plan.validate(&registry)?;
    let start = Instant::now();
    let out = run_stage(&plan, &registry)?;
    Ok((out, start.elapsed()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Seed-mean AUROC of `method` on the obs arm over cells whose label
/// contains `needle`.
fn method_mean(records: &[RunRecord], needle: &str, method: &str) -> Option<f64> {
    let v: Vec<f64> = records
        .iter()
        .filter(|r| r.cell.contains(needle) && r.method == method && r.arm == "obs")
        .filter_map(|r| r.auroc)
        .collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.3}"))
}

fn check_f1() -> bnbench::Result<Verdict> {
    let (out, elapsed) = run(Stage::F1)?;
    let chain = method_mean(&out.records, "gen=var_chain", "bottleneck");
    let random = method_mean(&out.records, "gen=var_random", "bottleneck");
    Ok(Verdict::new(
        &[
            (chain.is_some_and(|a| a >= 0.99), format!("chain bottleneck {} >= 0.99", fmt_opt(chain))),
            (random.is_some_and(|a| a >= 0.90), format!("random bottleneck {} >= 0.90", fmt_opt(random))),
            (out.all_succeeded(), format!("{} failed records", out.failures().len())),
        ],
        elapsed,
        300,
    ))
}

fn check_f2() -> bnbench::Result<Verdict> {
    let (out, elapsed) = run(Stage::F2)?;
    let t = win_rate_table(&out.records, "bottleneck", "obs")?;
    let cells = t.cells.len();
    let auroc_rate = t.auroc.win_rate();
    let mse_rate = t.mse.as_ref().map(|m| m.win_rate());
    let lasso_best = t.overall_best_mse_tally.get("lasso").copied().unwrap_or(0);
    let lasso_frac = lasso_best as f64 / cells.max(1) as f64;
    Ok(Verdict::new(
        &[
            (cells == 48, format!("{cells} cells")),
            (auroc_rate <= 0.25, format!("AUROC win rate {:.0}% <= 25%", 100.0 * auroc_rate)),
            (
                mse_rate.is_some_and(|r| r <= 0.05),
                format!("MSE win rate {} <= 5%", mse_rate.map_or("n/a".into(), |r| format!("{:.0}%", 100.0 * r))),
            ),
            (lasso_frac >= 0.90, format!("lasso best by MSE {lasso_best}/{cells} >= 90%")),
        ],
        elapsed,
        1800,
    ))
}

fn check_f3() -> bnbench::Result<Verdict> {
    let (out, elapsed) = run(Stage::F3)?;
    let lorenz = "gen=lorenz96";
    let m = |name: &str| method_mean(&out.records, lorenz, name);
    let bott = m("bottleneck");
    let mut checks = vec![];
    for (name, floor) in [("granger", 0.93), ("lasso", 0.93), ("ridge", 0.93), ("pcmci_lite", 0.90)] {
        let a = m(name);
        checks.push((a.is_some_and(|a| a >= floor), format!("{name} {} >= {floor}", fmt_opt(a))));
    }
    checks.push((
        bott.is_some_and(|a| (0.82..=0.97).contains(&a)),
        format!("bottleneck {} in [0.82, 0.97]", fmt_opt(bott)),
    ));
    let classical_above = ["granger", "lasso", "ridge", "pcmci_lite"]
        .iter()
        .all(|n| matches!((m(n), bott), (Some(a), Some(b)) if a > b));
    checks.push((classical_above, "every classical baseline above the bottleneck".into()));
    match out.audits.iter().find(|a| a.dataset == "climate") {
        Some(audit) => {
            let change = audit.rank_change("granger", "full", "default");
            checks.push((
                change.is_some_and(|c| c > 0),
                format!("climate: granger rank change without definitional edges {change:?} > 0"),
            ));
        }
        None => checks.push((true, "climate data not supplied, direction check skipped".into())),
    }
    Ok(Verdict::new(&checks, elapsed, 600))
}

/// `(scheme, K) -> (size-matched mean, confounded mean)` over cells, for
/// one method.
fn gaps_by(records: &[RunRecord], method: &str) -> bnbench::Result<BTreeMap<(String, usize), (Vec<f64>, Vec<f64>)>> {
    let mut by: BTreeMap<(String, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for g in size_match_gaps(records)?.into_iter().filter(|g| g.method == method) {
        let e = by.entry((g.scheme.clone(), g.k)).or_default();
        e.0.extend(&g.size_matched.deltas);
        e.1.extend(&g.confounded.deltas);
    }
    Ok(by)
}

fn check_f4() -> bnbench::Result<Verdict> {
    let (out, elapsed) = run(Stage::F4)?;
    let gaps = size_match_gaps(&out.records)?;
    let pooled = |scheme: &str| {
        let rows: Vec<_> = gaps.iter().filter(|g| g.method == "bottleneck" && g.scheme == scheme).collect();
        let sm: Vec<f64> = rows.iter().flat_map(|g| g.size_matched.deltas.iter().copied()).collect();
        let cf: Vec<f64> = rows.iter().flat_map(|g| g.confounded.deltas.iter().copied()).collect();
        (mean(&sm), mean(&cf), rows)
    };
    let (rf_sm, rf_cf, _) = pooled("random_forcing");
    let (_, _, clamp) = pooled("do_clamp");
    let worst_clamp = clamp
        .iter()
        .map(|g| g.size_matched.mean_delta.abs())
        .fold(0.0, f64::max);
    Ok(Verdict::new(
        &[
            (
                (0.0..=0.10).contains(&rf_sm),
                format!("random forcing size-matched gap {rf_sm:+.5} in [0.00, 0.10]"),
            ),
            (rf_sm < rf_cf, format!("below confounded gap {rf_cf:+.5}")),
            (
                !clamp.is_empty() && worst_clamp <= 0.02,
                format!("do-clamp max |cell gap| {worst_clamp:.4} <= 0.02 over {} cells", clamp.len()),
            ),
        ],
        elapsed,
        1800,
    ))
}

fn check_f5() -> bnbench::Result<Verdict> {
    let (out, elapsed) = run(Stage::F5)?;
    let sm = |method: &str, k: usize| -> bnbench::Result<Option<f64>> {
        Ok(gaps_by(&out.records, method)?
            .get(&("random_forcing".to_string(), k))
            .map(|(s, _)| mean(s)))
    };
    let granger30 = sm("granger", 30)?;
    let bott30 = sm("bottleneck", 30)?;
    let lasso10 = sm("lasso", 10)?;
    Ok(Verdict::new(
        &[
            (granger30.is_some_and(|g| g > 0.0), format!("granger K=30 gain {} > 0", fmt_opt(granger30))),
            (
                matches!((granger30, bott30), (Some(g), Some(b)) if g >= b),
                format!("granger K=30 gain >= bottleneck {}", fmt_opt(bott30)),
            ),
            (lasso10.is_some_and(|l| l <= 0.0), format!("lasso K=10 gain {} <= 0", fmt_opt(lasso10))),
        ],
        elapsed,
        1800,
    ))
}

fn check_survives() -> bnbench::Result<Verdict> {
    let (out, elapsed) = run(Stage::Survives)?;
    let s = survive_summary(&out.records);
    let frac = s.win_fraction();
    let (lw, ln) = s.linear_lasso_wins.unwrap_or((0, 0));
    Ok(Verdict::new(
        &[
            (
                s.rows.len() == 9 && frac >= 0.60,
                format!("{} of {} configurations beat the best baseline ({:.0}% >= 60%)", s.rows.iter().filter(|r| r.wins).count(), s.rows.len(), 100.0 * frac),
            ),
            (ln == 10 && lw >= 7, format!("alpha=0: lasso wins {lw}/{ln} seeds (>= 7/10)")),
        ],
        elapsed,
        1200,
    ))
}

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    num / pairs
}

fn auroc_oracle_error(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for n in 2..=30 {
        for _ in 0..100 {
            let levels = rng.random_range(1..=n);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            worst = worst.max((auroc(&scores, &labels).unwrap() - pairwise_auroc(&scores, &labels)).abs());
        }
    }
    worst
}

fn gradient_rel_error(rng: &mut ChaCha8Rng) -> f64 {
    let (s, _) = gen_var_random(4, 200, 2, 0.3, 11).unwrap();
    let design = LaggedDesign::new(s.values(), 2).unwrap();
    let obj = Objective::new(&design, 1e-3);
    // weights kept away from zero so the L1 term is differentiable
    let mut away = |r: usize, c: usize| {
        DMatrix::from_fn(r, c, |_, _| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    };
    let w_in = away(3, 8);
    let w_out = away(4, 3);
    let (g_in, g_out) = obj.gradient(&w_in, &w_out);
    let h = 1e-6;
    let mut fd_in = DMatrix::zeros(3, 8);
    for idx in 0..w_in.len() {
        let (mut p, mut m) = (w_in.clone(), w_in.clone());
        p[idx] += h;
        m[idx] -= h;
        fd_in[idx] = (obj.loss(&p, &w_out) - obj.loss(&m, &w_out)) / (2.0 * h);
    }
    let mut fd_out = DMatrix::zeros(4, 3);
    for idx in 0..w_out.len() {
        let (mut p, mut m) = (w_out.clone(), w_out.clone());
        p[idx] += h;
        m[idx] -= h;
        fd_out[idx] = (obj.loss(&w_in, &p) - obj.loss(&w_in, &m)) / (2.0 * h);
    }
    ((&g_in - &fd_in).norm() / fd_in.norm()).max((&g_out - &fd_out).norm() / fd_out.norm())
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let beta = DVector::from_fn(p, |j, _| if j % 3 == 0 { 1.0 + j as f64 * 0.1 } else { 0.0 });
    let y = &x * beta + DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
    (x, y)
}

/// Largest subgradient violation, computed directly from the definition.
fn own_kkt(gram: &DMatrix<f64>, c: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let g = c - gram * beta;
    (0..beta.len())
        .map(|j| {
            if beta[j] != 0.0 {
                (g[j] - lambda * beta[j].signum()).abs()
            } else {
                (g[j].abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn lasso_kkt_worst(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let (x, y) = random_problem(rng, 80, 12);
        let n = x.nrows() as f64;
        let gram = x.transpose() * &x / n;
        let c = x.transpose() * &y / n;
        let lambda = rng.random_range(0.01..0.9) * c.amax();
        let sol = lasso_cd(&gram, &c, y.norm_squared() / n, lambda, None, &LassoConfig::default()).unwrap();
        worst = worst.max(own_kkt(&gram, &c, &sol.beta, lambda));
    }
    worst
}

fn lasso_vs_ols(rng: &mut ChaCha8Rng) -> f64 {
    let cfg = LassoConfig {
        gap_tol: 1e-16,
        kkt_tol: 1e-12,
        max_sweeps: 100_000,
        ..LassoConfig::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (x, y) = random_problem(rng, 100, 10);
        let n = x.nrows() as f64;
        let gram = x.transpose() * &x / n;
        let c = x.transpose() * &y / n;
        let ols = gram.clone().cholesky().unwrap().solve(&c);
        let sol = lasso_cd(&gram, &c, y.norm_squared() / n, 0.0, None, &cfg).unwrap();
        worst = worst.max((sol.beta - ols).amax());
    }
    worst
}

fn rrr_vs_ols(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = DMatrix::from_fn(120, 8, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(120, 4, |_, _| rng.random_range(-1.0..1.0)) + &x.columns(0, 4) * 0.7;
        let b = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
        worst = worst.max((rrr_project(&x, &b, 4) - &b).amax());
    }
    worst
}

fn rk4_halving_error() -> f64 {
    let coarse = Lorenz96::default();
    let fine = Lorenz96 {
        dt: 0.005,
        substeps: 10,
        ..Lorenz96::default()
    };
    let x0: Vec<f64> = (0..10).map(|i| 10.0 + if i == 0 { 0.01 } else { 0.0 }).collect();
    let a = coarse.trajectory(&x0, 10).unwrap();
    let b = fine.trajectory(&x0, 10).unwrap();
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(&b) {
        let num: f64 = ra.iter().zip(rb).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let den: f64 = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    worst
}

fn mini_plan_deterministic() -> bnbench::Result<bool> {
    let mut plan = default_plan(Stage::F1, &workspace_root());
    plan.seeds = 2;
    plan.cells.truncate(2);
    let registry = MethodRegistry::with_builtins();
    let strip = |o: StageOutcome| o.records.iter().map(RunRecord::without_timing).collect::<Vec<_>>();
    let a = strip(run_stage(&plan, &registry)?);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = strip(pool.install(|| run_stage(&plan, &registry))?);
    Ok(!a.is_empty() && a == b)
}

fn check_properties() -> bnbench::Result<Verdict> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let oracle = auroc_oracle_error(&mut rng);
    let grad = gradient_rel_error(&mut rng);
    let kkt = lasso_kkt_worst(&mut rng);
    let l0 = lasso_vs_ols(&mut rng);
    let rrr = rrr_vs_ols(&mut rng);
    let rk4 = rk4_halving_error();
    let det = mini_plan_deterministic()?;
    Ok(Verdict::new(
        &[
            (oracle < 1e-12, format!("AUROC vs pairwise oracle {oracle:.1e}")),
            (grad < 1e-4, format!("gradient rel err {grad:.1e} < 1e-4")),
            (kkt < 1e-4, format!("lasso KKT {kkt:.1e} < 1e-4")),
            (l0 < 1e-6, format!("lambda=0 lasso vs OLS {l0:.1e} < 1e-6")),
            (rrr < 1e-8, format!("full-rank RRR vs OLS {rrr:.1e} < 1e-8")),
            (rk4 < 1e-4, format!("RK4 step halving rel err {rk4:.1e} < 1e-4")),
            (det, "mini-plan ledger reproducible across thread counts".into()),
        ],
        start.elapsed(),
        300,
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> bnbench::Result<Verdict>); 7] = [
        ("f1 linear arm", check_f1),
        ("f2 stress grid", check_f2),
        ("f3 lorenz-96", check_f3),
        ("f4 size-match control", check_f4),
        ("f5 method agnosticity", check_f5),
        ("surviving configurations", check_survives),
        ("property suites", check_properties),
    ];
    let mut failed = Vec::new();
    for (n, (name, check)) in criteria.iter().enumerate() {
        let v = check().unwrap_or_else(Verdict::error);
        let line = format!(
            "acceptance {} {name}: {} | {}\n",
            n + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        let _ = std::io::stderr().write_all(line.as_bytes());
        if !v.pass {
            failed.push(format!("{} {name}", n + 1));
        }
    }
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}

