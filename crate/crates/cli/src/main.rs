use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnbench::evalstats::read_ledger;
use bnbench::harness::{default_plan, emit_reports, run_and_write, stage_dir, ExperimentPlan, MethodRegistry, MethodSpec, ScoreRequest, Stage, OUTPUT_ENV};
use bnbench::provenance::{load_csv_dataset, sensitivity_audit, Manifest};
use bnbench::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bnbench", version, about = "Run the bottleneck falsification benchmark")]
struct Cli {
    /// Output root; each stage writes to <out>/<stage>/.
    #[arg(long, global = true, env = OUTPUT_ENV, default_value = "results")]
    out: PathBuf,

    /// Register a precomputed score CSV as a method, NAME=PATH. Repeatable.
    #[arg(long = "file-method", global = true, value_name = "NAME=PATH")]
    file_methods: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default plan files to <out>/plans/.
    Gen {
        /// Only this stage.
        stage: Option<Stage>,
        /// Directory f3 searches for data/*/manifest.toml.
        #[arg(long, default_value = ".")]
        data_root: PathBuf,
    },
    /// Run one stage and write its ledger and reports.
    Run {
        stage: Stage,
        /// Plan file; the built-in default plan when omitted.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        data_root: PathBuf,
    },
    /// Rebuild a stage's reports from its ledger.
    Report { stage: Stage },
    /// Score a real dataset with several methods and write the ground-truth sensitivity audit.
    Audit {
        manifest: PathBuf,
        /// Data CSV; defaults to the manifest's `data` entry.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "granger,lasso,ridge,pcmci_lite,bottleneck")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every stage with its default plan.
    All {
        #[arg(long, default_value = ".")]
        data_root: PathBuf,
    },
}

enum Failure {
    Cells,
    Plan(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidPlan(_) | Error::Registration(_) => Failure::Plan(e.to_string()),
            e => Failure::Other(e.to_string()),
        }
    }
}

fn registry(file_methods: &[String]) -> Result<MethodRegistry, Failure> {
    let mut reg = MethodRegistry::with_builtins();
    for entry in file_methods {
        let (name, path) = entry
            .split_once('=')
            .ok_or_else(|| Failure::Plan(format!("--file-method expects NAME=PATH, got {entry:?}")))?;
        reg.register_file_backed(name, Path::new(path))?;
    }
    Ok(reg)
}

fn run_one(plan: &ExperimentPlan, reg: &MethodRegistry, out: &Path) -> Result<bool, Failure> {
    let outcome = run_and_write(plan, reg, out)?;
    let failures = outcome.failures();
    eprintln!(
        "{}: {} records, {} failed, {} seeds derived ({} collisions) -> {}",
        plan.stage,
        outcome.records.len(),
        failures.len(),
        outcome.seeds_derived,
        outcome.seed_collisions,
        stage_dir(out, plan.stage).display()
    );
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(failures.is_empty())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let reg = registry(&cli.file_methods)?;
    match cli.command {
        Command::Gen { stage, data_root } => {
            let dir = cli.out.join("plans");
            std::fs::create_dir_all(&dir).map_err(|e| Failure::Other(e.to_string()))?;
            let stages = stage.map(|s| vec![s]).unwrap_or_else(|| Stage::ALL.to_vec());
            for s in stages {
                let plan = default_plan(s, &data_root);
                let mut text = plan.to_toml()?;
                if !plan.datasets.is_empty() {
                    // Manifests were found relative to data_root; make them absolute
                    // so the plan still works from <out>/plans/.
                    let mut abs = plan.clone();
                    for d in &mut abs.datasets {
                        d.manifest = std::path::absolute(data_root.join(&d.manifest)).map_err(|e| Failure::Other(e.to_string()))?;
                    }
                    text = abs.to_toml()?;
                }
                let path = dir.join(format!("{s}.toml"));
                std::fs::write(&path, text).map_err(|e| Failure::Other(e.to_string()))?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Run { stage, plan, data_root } => {
            let plan = match plan {
                Some(p) => {
                    let plan = ExperimentPlan::load(&p)?;
                    if plan.stage != stage {
                        return Err(Failure::Plan(format!("plan {} is for stage {}, not {stage}", p.display(), plan.stage)));
                    }
                    plan
                }
                None => default_plan(stage, &data_root),
            };
            if run_one(&plan, &reg, &cli.out)? {
                Ok(())
            } else {
                Err(Failure::Cells)
            }
        }
        Command::Report { stage } => {
            let dir = stage_dir(&cli.out, stage);
            let file = std::fs::File::open(dir.join("ledger.csv"))
                .map_err(|e| Failure::Other(format!("{}: {e}", dir.join("ledger.csv").display())))?;
            let records = read_ledger(file)?;
            for p in emit_reports(&records, stage, &dir)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Audit { manifest, data, methods, seed } => {
            let m = Manifest::load(&manifest)?;
            let ds = load_csv_dataset(data.as_deref(), &m)?;
            for line in &ds.log {
                eprintln!("{line}");
            }
            let mut scores = BTreeMap::new();
            for name in &methods {
                let scorer = reg.build(&MethodSpec::named(name))?;
                let req = ScoreRequest {
                    series: &ds.series,
                    max_lag: ds.max_lag,
                    seed,
                    want_mse: false,
                    truth: None,
                };
                match scorer.score(&req) {
                    Ok(out) => {
                        scores.insert(name.clone(), out.scores);
                    }
                    Err(e) => eprintln!("warning: {name}: {e}"),
                }
            }
            let report = sensitivity_audit(&ds, &scores)?;
            let dir = cli.out.join("audit");
            std::fs::create_dir_all(&dir).map_err(|e| Failure::Other(e.to_string()))?;
            let md = report.to_markdown();
            std::fs::write(dir.join(format!("{}.md", ds.id)), &md).map_err(|e| Failure::Other(e.to_string()))?;
            let csv = std::fs::File::create(dir.join(format!("{}.csv", ds.id))).map_err(|e| Failure::Other(e.to_string()))?;
            report.write_csv(csv)?;
            print!("{md}");
            Ok(())
        }
        Command::All { data_root } => {
            let plans: Vec<ExperimentPlan> = Stage::ALL.iter().map(|&s| default_plan(s, &data_root)).collect();
            for p in &plans {
                p.validate(&reg)?;
            }
            let mut ok = true;
            for p in &plans {
                ok &= run_one(p, &reg, &cli.out)?;
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Cells)
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Cells) => {
            eprintln!("some cells failed; see failures.txt in the stage directory");
            ExitCode::from(1)
        }
        Err(Failure::Plan(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
