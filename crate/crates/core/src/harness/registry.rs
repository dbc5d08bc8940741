use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::plan::MethodSpec;
use crate::baselines::{
    self, default_lambda_grid, default_rank_grid, LassoConfig, LinearFit, SelectionRule,
};
use crate::bottleneck::{self, ScoreMatrix, TrainConfig};
use crate::error::{Error, Result};
use crate::synthgen::{LaggedAdjacency, Series};

/// Inputs handed to a scorer for one run.
pub struct ScoreRequest<'a> {
    pub series: &'a Series,
    pub max_lag: usize,
    pub seed: u64,
    pub want_mse: bool,
    /// Only for diagnostic oracle tuning; ordinary methods ignore it.
    pub truth: Option<&'a LaggedAdjacency>,
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub scores: ScoreMatrix,
    pub mse: Option<f64>,
    pub flags: Vec<String>,
    /// Auxiliary score matrices evaluated alongside (e.g. `init`); their
    /// AUROCs go into the record's flags.
    pub extra: Vec<(String, ScoreMatrix)>,
}

impl MethodOutput {
    pub fn scores(scores: ScoreMatrix) -> Self {
        Self {
            scores,
            mse: None,
            flags: Vec::new(),
            extra: Vec::new(),
        }
    }
}

/// The method interface: series, lag depth and seed in, scores (and
/// optionally a held-out MSE) out.
pub trait Scorer: Send + Sync {
    fn score(&self, req: &ScoreRequest) -> Result<MethodOutput>;
}

impl<F> Scorer for F
where
    F: Fn(&ScoreRequest) -> Result<MethodOutput> + Send + Sync,
{
    fn score(&self, req: &ScoreRequest) -> Result<MethodOutput> {
        self(req)
    }
}

type Factory = Arc<dyn Fn(&toml::Table) -> Result<Arc<dyn Scorer>> + Send + Sync>;

#[derive(Clone, Default)]
pub struct MethodRegistry {
    factories: BTreeMap<String, Factory>,
}

impl std::fmt::Debug for MethodRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MethodRegistry").field("methods", &self.names()).finish()
    }
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `bottleneck`, `ols`, `ridge`, `lasso`, `rrr`, `granger`, `pcmci_lite`.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register_factory("bottleneck", bottleneck_factory).expect("fresh registry");
        r.register_factory("ols", |p| {
            no_params(p, &[])?;
            Ok(Arc::new(|req: &ScoreRequest| linear(baselines::fit_ols(req.series, req.max_lag)?, req)) as Arc<dyn Scorer>)
        })
        .expect("fresh registry");
        r.register_factory("ridge", |p| {
            no_params(p, &["grid", "tuning"])?;
            let grid = f64_list(p, "grid")?.unwrap_or_else(default_lambda_grid);
            let oracle = oracle_tuning(p)?;
            Ok(Arc::new(move |req: &ScoreRequest| {
                let rule = rule(oracle, req)?;
                linear(baselines::fit_ridge_with(req.series, req.max_lag, &grid, &rule)?, req)
            }) as Arc<dyn Scorer>)
        })
        .expect("fresh registry");
        r.register_factory("lasso", |p| {
            no_params(p, &["grid", "tuning", "max_sweeps"])?;
            let mut cfg = LassoConfig::default();
            if let Some(g) = f64_list(p, "grid")? {
                cfg.grid = g;
            }
            if let Some(m) = usize_param(p, "max_sweeps")? {
                cfg.max_sweeps = m;
            }
            let oracle = oracle_tuning(p)?;
            Ok(Arc::new(move |req: &ScoreRequest| {
                let rule = rule(oracle, req)?;
                linear(baselines::fit_lasso_with(req.series, req.max_lag, &cfg, &rule)?, req)
            }) as Arc<dyn Scorer>)
        })
        .expect("fresh registry");
        r.register_factory("rrr", |p| {
            no_params(p, &["ranks", "tuning"])?;
            let ranks = match p.get("ranks") {
                None => None,
                Some(_) => Some(
                    f64_list(p, "ranks")?
                        .unwrap_or_default()
                        .into_iter()
                        .map(|r| r as usize)
                        .collect::<Vec<_>>(),
                ),
            };
            let oracle = oracle_tuning(p)?;
            Ok(Arc::new(move |req: &ScoreRequest| {
                let rule = rule(oracle, req)?;
                let ranks = ranks.clone().unwrap_or_else(|| default_rank_grid(req.series.n_vars()));
                linear(baselines::fit_rrr_with(req.series, req.max_lag, &ranks, &rule)?, req)
            }) as Arc<dyn Scorer>)
        })
        .expect("fresh registry");
        r.register_factory("granger", |p| {
            no_params(p, &[])?;
            Ok(Arc::new(|req: &ScoreRequest| {
                let g = baselines::granger_bivariate(req.series, req.max_lag)?;
                Ok(MethodOutput {
                    flags: g.flags,
                    ..MethodOutput::scores(g.scores)
                })
            }) as Arc<dyn Scorer>)
        })
        .expect("fresh registry");
        r.register_factory("pcmci_lite", |p| {
            no_params(p, &["alpha"])?;
            let alpha = f64_param(p, "alpha")?.unwrap_or(0.05);
            Ok(Arc::new(move |req: &ScoreRequest| {
                let res = baselines::pcmci_lite(req.series, req.max_lag, alpha)?;
                let mut flags = Vec::new();
                if !res.events.is_empty() {
                    flags.push(format!("pcmci_events={}", res.events.len()));
                }
                Ok(MethodOutput {
                    flags,
                    ..MethodOutput::scores(res.scores)
                })
            }) as Arc<dyn Scorer>)
        })
        .expect("fresh registry");
        r
    }

    pub fn register_factory(
        &mut self,
        name: &str,
        factory: impl Fn(&toml::Table) -> Result<Arc<dyn Scorer>> + Send + Sync + 'static,
    ) -> Result<()> {
        if name.is_empty() || name.contains([',', ';', '"', '\n']) {
            return Err(Error::Registration(format!("invalid method name {name:?}")));
        }
        if self.factories.contains_key(name) {
            return Err(Error::Registration(format!("method {name:?} already registered")));
        }
        self.factories.insert(name.to_string(), Arc::new(factory));
        Ok(())
    }

    /// Registers a parameterless scorer.
    pub fn register(&mut self, name: &str, scorer: impl Scorer + 'static) -> Result<()> {
        let scorer: Arc<dyn Scorer> = Arc::new(scorer);
        self.register_factory(name, move |p| {
            no_params(p, &[])?;
            Ok(scorer.clone())
        })
    }

    /// Registers a precomputed score matrix read from CSV now, so malformed
    /// files fail here rather than mid-run.
    pub fn register_file_backed(&mut self, name: &str, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Registration(format!("{name}: {}: {e}", path.display())))?;
        let scores = ScoreMatrix::read_csv(file).map_err(|e| Error::Registration(format!("{name}: {e}")))?;
        self.register(name, move |req: &ScoreRequest| {
            if req.series.n_vars() != scores.k() {
                return crate::error::param(format!(
                    "file-backed scores have K={}, series has K={}",
                    scores.k(),
                    req.series.n_vars()
                ));
            }
            Ok(MethodOutput::scores(scores.clone()))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, spec: &MethodSpec) -> Result<Arc<dyn Scorer>> {
        let f = self
            .factories
            .get(&spec.name)
            .ok_or_else(|| Error::Registration(format!("unknown method {:?}", spec.name)))?;
        f(&spec.params)
    }
}

fn linear(fit: LinearFit, req: &ScoreRequest) -> Result<MethodOutput> {
    let mut flags = fit.flags;
    if let Some(t) = &fit.tuning {
        flags.push(format!("tuned={}@{}", t.chosen_value(), t.rule));
    }
    Ok(MethodOutput {
        scores: fit.scores,
        mse: req.want_mse.then_some(fit.mse),
        flags,
        extra: Vec::new(),
    })
}

fn rule(oracle: bool, req: &ScoreRequest) -> Result<SelectionRule> {
    match (oracle, req.truth) {
        (false, _) => Ok(SelectionRule::HoldoutMse),
        (true, Some(t)) => Ok(SelectionRule::OracleAuroc(t.clone())),
        (true, None) => crate::error::param("oracle tuning needs a known truth"),
    }
}

fn no_params(p: &toml::Table, allowed: &[&str]) -> Result<()> {
    match p.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => crate::error::param(format!("unknown parameter {k:?} (allowed: {allowed:?})")),
        None => Ok(()),
    }
}

fn f64_param(p: &toml::Table, key: &str) -> Result<Option<f64>> {
    match p.get(key) {
        None => Ok(None),
        Some(toml::Value::Float(f)) => Ok(Some(*f)),
        Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
        Some(v) => crate::error::param(format!("{key} must be a number, got {v}")),
    }
}

fn usize_param(p: &toml::Table, key: &str) -> Result<Option<usize>> {
    match p.get(key) {
        None => Ok(None),
        Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
        Some(v) => crate::error::param(format!("{key} must be a nonnegative integer, got {v}")),
    }
}

fn f64_list(p: &toml::Table, key: &str) -> Result<Option<Vec<f64>>> {
    match p.get(key) {
        None => Ok(None),
        Some(toml::Value::Array(a)) if !a.is_empty() => a
            .iter()
            .map(|v| match v {
                toml::Value::Float(f) => Ok(*f),
                toml::Value::Integer(i) => Ok(*i as f64),
                _ => crate::error::param(format!("{key} must hold numbers")),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(v) => crate::error::param(format!("{key} must be a nonempty array, got {v}")),
    }
}

fn oracle_tuning(p: &toml::Table) -> Result<bool> {
    match p.get("tuning").map(|v| v.as_str()) {
        None | Some(Some("holdout")) => Ok(false),
        Some(Some("oracle")) => Ok(true),
        _ => crate::error::param("tuning must be \"holdout\" or \"oracle\""),
    }
}

fn bottleneck_factory(p: &toml::Table) -> Result<Arc<dyn Scorer>> {
    no_params(p, &["d", "lambda", "learning_rate", "epochs"])?;
    let d = usize_param(p, "d")?;
    let lambda = f64_param(p, "lambda")?;
    let lr = f64_param(p, "learning_rate")?;
    let epochs = usize_param(p, "epochs")?;
    if d == Some(0) {
        return crate::error::param("d must be >= 1");
    }
    Ok(Arc::new(move |req: &ScoreRequest| {
        let defaults = TrainConfig::lagged(req.max_lag);
        let cfg = TrainConfig {
            d,
            lambda_sparse: lambda.unwrap_or(defaults.lambda_sparse),
            learning_rate: lr.unwrap_or(defaults.learning_rate),
            epochs: epochs.unwrap_or(defaults.epochs),
            ..defaults
        };
        let model = bottleneck::train(req.series, &cfg, req.seed)?;
        let scores = model.extract()?;
        let init = model.extract_init()?;
        let mse = if req.want_mse {
            Some(bottleneck_holdout_mse(req.series, &cfg, req.seed)?)
        } else {
            None
        };
        Ok(MethodOutput {
            scores,
            mse,
            flags: Vec::new(),
            extra: vec![("init".into(), init)],
        })
    }))
}

/// Held-out MSE on the same time-ordered split the baselines use.
fn bottleneck_holdout_mse(series: &Series, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let t = series.len();
    let design = baselines::LaggedDesign::new(series.values(), cfg.max_lag)?;
    let h = design.holdout_rows();
    let train = series.rows(0, t - h)?;
    let held = series.rows(t - h - cfg.max_lag, t)?;
    let model = bottleneck::train(&train, cfg, seed)?;
    bottleneck::fit_predict_mse(&model, &held)
}
