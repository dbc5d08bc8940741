use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::plan::{CellSpec, ExperimentPlan, Stage};
use super::registry::{MethodRegistry, ScoreRequest, Scorer};
use super::report::emit_reports;
use super::seeds::{Role, SeedDerivation};
use crate::bottleneck::ScoreMatrix;
use crate::error::{Error, Result};
use crate::evalstats::{auroc_with, canonical_sort, write_ledger, LagConvention, RunRecord};
use crate::intervene::build_arms;
use crate::provenance::{effective_truth, load_csv_dataset, sensitivity_audit, AuditReport, InclusionPolicy, Manifest};
use crate::synthgen::{generate, LaggedAdjacency, Series};

/// Everything a stage run produced.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    /// Canonically sorted.
    pub records: Vec<RunRecord>,
    pub audits: Vec<AuditReport>,
    pub warnings: Vec<String>,
    pub seeds_derived: usize,
    pub seed_collisions: usize,
}

impl StageOutcome {
    pub fn failures(&self) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| r.failed()).collect()
    }

    pub fn all_succeeded(&self) -> bool {
        self.records.iter().all(|r| !r.failed())
    }
}

struct Prepared {
    label: String,
    max_lag: Option<usize>,
    scorer: Arc<dyn Scorer>,
}

fn prepare_methods(plan: &ExperimentPlan, cell: &CellSpec, registry: &MethodRegistry) -> Result<Vec<Prepared>> {
    plan.cell_methods(cell)
        .into_iter()
        .map(|spec| {
            Ok(Prepared {
                label: spec.label().to_string(),
                max_lag: spec.max_lag,
                scorer: registry.build(&spec)?,
            })
        })
        .collect()
}

fn clean(msg: &str) -> String {
    msg.replace([';', '\n', ','], " ")
}

struct Ctx<'a> {
    stage: Stage,
    cell_label: &'a str,
    replicate: usize,
    convention: LagConvention,
}

/// Runs one method on one arm and turns the outcome into a record.
fn evaluate(
    ctx: &Ctx,
    method: &Prepared,
    arm: &str,
    series: &Series,
    truth: &LaggedAdjacency,
    max_lag: usize,
    seed: u64,
    want_mse: bool,
) -> (RunRecord, Option<ScoreMatrix>) {
    let start = Instant::now();
    let req = ScoreRequest {
        series,
        max_lag,
        seed,
        want_mse,
        truth: Some(truth),
    };
    let result = method.scorer.score(&req).and_then(|out| {
        let auroc = auroc_with(&out.scores, truth, ctx.convention)?;
        let mut flags = out.flags.clone();
        flags.push(format!("lag={max_lag}"));
        flags.push(format!(
            "conv={}",
            ctx.convention.resolve(out.scores.max_lag(), truth.max_lag()).as_str()
        ));
        for (name, extra) in &out.extra {
            match auroc_with(extra, truth, ctx.convention) {
                Ok(a) => flags.push(format!("{name}_auroc={a:.6}")),
                Err(e) => flags.push(format!("{name}_auroc=undefined({})", clean(&e.to_string()))),
            }
        }
        if let Some(m) = out.mse {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::Parameter(format!("method returned invalid mse {m}")));
            }
        }
        Ok((auroc, out.mse, flags, out.scores))
    });
    let wall_time = start.elapsed().as_secs_f64();
    let base = RunRecord {
        stage: ctx.stage.as_str().into(),
        cell: ctx.cell_label.into(),
        seed: ctx.replicate,
        method: method.label.clone(),
        arm: arm.into(),
        auroc: None,
        mse: None,
        flags: String::new(),
        wall_time,
    };
    match result {
        Ok((auroc, mse, flags, scores)) => (
            RunRecord {
                auroc: Some(auroc),
                mse,
                flags: flags.iter().map(|f| clean(f)).collect::<Vec<_>>().join(";"),
                ..base
            },
            Some(scores),
        ),
        Err(e) => (
            RunRecord {
                flags: format!("error={}", clean(&e.to_string())),
                ..base
            },
            None,
        ),
    }
}

fn run_cell_replicate(
    plan: &ExperimentPlan,
    seeds: &SeedDerivation,
    index: usize,
    cell: &CellSpec,
    methods: &[Prepared],
    replicate: usize,
) -> Vec<RunRecord> {
    let label = cell.label(index);
    let ctx = Ctx {
        stage: plan.stage,
        cell_label: &label,
        replicate,
        convention: plan.convention,
    };
    let spec = cell.generator.with_seed(seeds.derive(index, replicate, &Role::Data));
    let data: Result<(Vec<(&'static str, Series)>, LaggedAdjacency)> = match &cell.scheme {
        Some(scheme) => build_arms(&spec, scheme, spec.t, seeds.derive(index, replicate, &Role::Intervention)).map(|a| {
            (
                vec![("obs", a.obs), ("combined", a.combined), ("obs_big", a.obs_big)],
                a.truth,
            )
        }),
        None => generate(&spec).map(|(s, t)| (vec![("obs", s)], t)),
    };
    let arm_names: Vec<&str> = if cell.scheme.is_some() {
        vec!["obs", "combined", "obs_big"]
    } else {
        vec!["obs"]
    };
    match data {
        Err(e) => methods
            .iter()
            .flat_map(|m| {
                arm_names.iter().map(|arm| RunRecord {
                    stage: plan.stage.as_str().into(),
                    cell: label.clone(),
                    seed: replicate,
                    method: m.label.clone(),
                    arm: arm.to_string(),
                    auroc: None,
                    mse: None,
                    flags: format!("error=generation: {}", clean(&e.to_string())),
                    wall_time: 0.0,
                })
            })
            .collect(),
        Ok((arms, truth)) => {
            let mut out = Vec::new();
            for m in methods {
                let seed = seeds.derive(index, replicate, &Role::Method(m.label.clone()));
                for (arm, series) in &arms {
                    let (rec, _) = evaluate(&ctx, m, arm, series, &truth, m.max_lag.unwrap_or(cell.fit_lag()), seed, cell.compute_mse);
                    out.push(rec);
                }
            }
            out
        }
    }
}

/// Executes every `(cell, replicate, method, arm)` of a validated plan.
/// Cell failures become error records; they never abort the stage.
pub fn run_stage(plan: &ExperimentPlan, registry: &MethodRegistry) -> Result<StageOutcome> {
    plan.validate(registry)?;
    let seeds = SeedDerivation::new(plan.base_seed, plan.stage);
    let collisions = seeds.collision_check(plan);
    let mut warnings = Vec::new();
    if !collisions.collisions.is_empty() {
        warnings.push(format!("{} derived seed collision(s)", collisions.collisions.len()));
    }
    let prepared: Vec<Vec<Prepared>> = plan
        .cells
        .iter()
        .map(|c| prepare_methods(plan, c, registry))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..plan.cells.len())
        .flat_map(|c| (0..plan.seeds).map(move |s| (c, s)))
        .collect();
    let mut records: Vec<RunRecord> = tasks
        .par_iter()
        .flat_map_iter(|&(c, s)| run_cell_replicate(plan, &seeds, c, &plan.cells[c], &prepared[c], s))
        .collect();

    let mut audits = Vec::new();
    for (d, dref) in plan.datasets.iter().enumerate() {
        let index = plan.cells.len() + d;
        match run_dataset(plan, registry, &seeds, index, dref) {
            Ok(Some((recs, audit))) => {
                records.extend(recs);
                audits.extend(audit);
            }
            Ok(None) => warnings.push(format!(
                "dataset {}: data file not found; f3 runs without it",
                dref.manifest.display()
            )),
            Err(e) => warnings.push(format!("dataset {}: {e}", dref.manifest.display())),
        }
    }
    canonical_sort(&mut records);
    Ok(StageOutcome {
        stage: plan.stage,
        records,
        audits,
        warnings,
        seeds_derived: collisions.total,
        seed_collisions: collisions.collisions.len(),
    })
}

type DatasetRun = (Vec<RunRecord>, Option<AuditReport>);

fn run_dataset(
    plan: &ExperimentPlan,
    registry: &MethodRegistry,
    seeds: &SeedDerivation,
    index: usize,
    dref: &super::plan::DatasetRef,
) -> Result<Option<DatasetRun>> {
    let manifest = Manifest::load(&plan.resolve(&dref.manifest))?;
    let data = match &dref.data {
        Some(p) => Some(plan.resolve(p)),
        None => manifest.data_path(),
    };
    let Some(data) = data.filter(|p| p.exists()) else {
        return Ok(None);
    };
    let ds = load_csv_dataset(Some(&data), &manifest)?;
    let truth = effective_truth(&ds, &InclusionPolicy::default())?;
    let label = format!("c{index:03} data={} K={} T={}", ds.id, ds.series.n_vars(), ds.series.len());
    let ctx = Ctx {
        stage: plan.stage,
        cell_label: &label,
        replicate: 0,
        convention: plan.convention,
    };
    let methods: Vec<Prepared> = plan
        .methods
        .iter()
        .map(|m| {
            let spec = m.spec();
            Ok(Prepared {
                label: spec.label().to_string(),
                max_lag: spec.max_lag,
                scorer: registry.build(&spec)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut first_scores = BTreeMap::new();
    for rep in 0..plan.seeds {
        let ctx = Ctx { replicate: rep, ..ctx };
        for m in &methods {
            let seed = seeds.derive(index, rep, &Role::Method(m.label.clone()));
            let (rec, scores) = evaluate(&ctx, m, "obs", &ds.series, &truth, m.max_lag.unwrap_or(ds.max_lag), seed, false);
            records.push(rec);
            if rep == 0 {
                if let Some(s) = scores {
                    first_scores.insert(m.label.clone(), s);
                }
            }
        }
    }
    let audit = if first_scores.len() >= 2 {
        Some(sensitivity_audit(&ds, &first_scores)?)
    } else {
        None
    };
    Ok(Some((records, audit)))
}

/// Directory for a stage's outputs under `root`.
pub fn stage_dir(root: &Path, stage: Stage) -> PathBuf {
    root.join(stage.as_str())
}

/// Validates, runs, and writes `ledger.csv`, reports and audits under
/// `root/<stage>/`. An invalid plan creates nothing.
pub fn run_and_write(plan: &ExperimentPlan, registry: &MethodRegistry, root: &Path) -> Result<StageOutcome> {
    plan.validate(registry)?;
    let outcome = run_stage(plan, registry)?;
    let dir = stage_dir(root, plan.stage);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("plan.toml"), plan.to_toml()?)?;
    write_ledger(std::fs::File::create(dir.join("ledger.csv"))?, &outcome.records)?;
    for audit in &outcome.audits {
        std::fs::write(dir.join(format!("audit_{}.md", audit.dataset)), audit.to_markdown())?;
        audit.write_csv(std::fs::File::create(dir.join(format!("audit_{}.csv", audit.dataset)))?)?;
    }
    if !outcome.warnings.is_empty() {
        std::fs::write(dir.join("warnings.txt"), outcome.warnings.join("\n") + "\n")?;
    }
    emit_reports(&outcome.records, plan.stage, &dir)?;
    Ok(outcome)
}
