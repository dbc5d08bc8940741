//! Python bindings: generators, the bottleneck scorer, baselines, AUROC,
//! paired tests and stage runs.

use std::path::PathBuf;

use bnbench::evalstats::{auroc_with, paired_test as paired};
use bnbench::harness::{default_plan as default_stage_plan, run_and_write, ExperimentPlan, MethodRegistry, MethodSpec, ScoreRequest, Stage};
use bnbench::intervene::build_arms as build_arm_set;
use bnbench::synthgen::generate as gen;
use bnbench::{Error, Family, GeneratorSpec, InterventionKind, InterventionScheme, LagConvention, LaggedAdjacency, ScoreMatrix};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    match e {
        Error::Parameter(_) | Error::InvalidPlan(_) | Error::Registration(_) | Error::UndefinedAuroc(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// A multivariate series (rows are time steps).
#[pyclass(name = "Series", module = "bnbench_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PySeries(bnbench::Series);

#[pymethods]
impl PySeries {
    #[new]
    #[pyo3(signature = (rows, names=None))]
    fn new(rows: Vec<Vec<f64>>, names: Option<Vec<String>>) -> PyResult<Self> {
        bnbench::Series::from_rows(&rows, names).map(Self).map_err(err)
    }

    #[getter]
    fn n_vars(&self) -> usize {
        self.0.n_vars()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.0.var_names().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        let v = self.0.values();
        (0..v.nrows()).map(|r| v.row(r).iter().copied().collect()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Series(T={}, K={})", self.0.len(), self.0.n_vars())
    }
}

/// Ground-truth adjacency; `get(i, j, tau)` means `x_j(t - tau) -> x_i(t)`.
#[pyclass(name = "Adjacency", module = "bnbench_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyAdjacency(LaggedAdjacency);

#[pymethods]
impl PyAdjacency {
    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn max_lag(&self) -> usize {
        self.0.max_lag()
    }

    fn get(&self, i: usize, j: usize, tau: usize) -> PyResult<bool> {
        check_index(self.0.k(), self.0.max_lag(), i, j, tau)?;
        Ok(self.0.get(i, j, tau))
    }

    /// `(effect, cause, lag)` triples.
    fn edges(&self) -> Vec<(usize, usize, usize)> {
        self.0.edges().collect()
    }

    fn __repr__(&self) -> String {
        format!("Adjacency(K={}, L={}, edges={})", self.0.k(), self.0.max_lag(), self.0.edges().count())
    }
}

fn check_index(k: usize, l: usize, i: usize, j: usize, tau: usize) -> PyResult<()> {
    if i >= k || j >= k || tau == 0 || tau > l {
        return Err(PyValueError::new_err(format!("index ({i}, {j}, {tau}) outside K={k}, L={l}")));
    }
    Ok(())
}

/// Edge scores, nonnegative with zero diagonal.
#[pyclass(name = "Scores", module = "bnbench_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyScores(ScoreMatrix);

#[pymethods]
impl PyScores {
    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn max_lag(&self) -> usize {
        self.0.max_lag()
    }

    fn get(&self, i: usize, j: usize, tau: usize) -> PyResult<f64> {
        check_index(self.0.k(), self.0.max_lag(), i, j, tau)?;
        Ok(self.0.get(i, j, tau))
    }

    /// Nested `[tau - 1][i][j]` lists.
    fn to_list(&self) -> Vec<Vec<Vec<f64>>> {
        let k = self.0.k();
        (1..=self.0.max_lag())
            .map(|tau| (0..k).map(|i| (0..k).map(|j| self.0.get(i, j, tau)).collect()).collect())
            .collect()
    }

    fn collapse(&self) -> PyScores {
        PyScores(self.0.collapse_max_over_lags())
    }

    fn __repr__(&self) -> String {
        format!("Scores(K={}, L={})", self.0.k(), self.0.max_lag())
    }
}

/// Draws a series and its true graph.
#[pyfunction]
#[pyo3(signature = (family, k, t, seed, max_lag=1, density=0.1, nonlinearity=0.0, forcing_f=None))]
#[allow(clippy::too_many_arguments)]
fn generate(
    family: &str,
    k: usize,
    t: usize,
    seed: u64,
    max_lag: usize,
    density: f64,
    nonlinearity: f64,
    forcing_f: Option<f64>,
) -> PyResult<(PySeries, PyAdjacency)> {
    let spec = GeneratorSpec {
        max_lag,
        density,
        nonlinearity,
        forcing_f,
        ..GeneratorSpec::new(parse::<Family>(family)?, k, t, seed)
    };
    let (s, a) = gen(&spec).map_err(err)?;
    Ok((PySeries(s), PyAdjacency(a)))
}

/// Observational, combined and size-matched arms as a dict, plus the truth.
#[pyfunction]
#[pyo3(signature = (family, k, t, seed, kind, density=0.1, episode_len=50, scale=2.0))]
#[allow(clippy::too_many_arguments)]
fn build_arms<'py>(
    py: Python<'py>,
    family: &str,
    k: usize,
    t: usize,
    seed: u64,
    kind: &str,
    density: f64,
    episode_len: usize,
    scale: f64,
) -> PyResult<(Bound<'py, PyDict>, PyAdjacency)> {
    let spec = GeneratorSpec {
        density,
        ..GeneratorSpec::new(parse::<Family>(family)?, k, t, seed)
    };
    let scheme = InterventionScheme {
        episode_len,
        scale,
        ..InterventionScheme::new(parse::<InterventionKind>(kind)?)
    };
    let arms = build_arm_set(&spec, &scheme, t, seed ^ 0x5eed).map_err(err)?;
    let d = PyDict::new(py);
    for (name, s) in arms.arms() {
        d.set_item(name, PySeries(s.clone()))?;
    }
    Ok((d, PyAdjacency(arms.truth)))
}

/// Scores a series with a registered method (`bottleneck`, `lasso`,
/// `granger`, ...). Keyword `params` go to the method factory.
#[pyfunction]
#[pyo3(signature = (method, series, max_lag=1, seed=0, **params))]
fn score(method: &str, series: &PySeries, max_lag: usize, seed: u64, params: Option<&Bound<'_, PyDict>>) -> PyResult<PyScores> {
    let mut spec = MethodSpec::named(method);
    if let Some(p) = params {
        for (key, value) in p.iter() {
            let key: String = key.extract()?;
            let value = if let Ok(v) = value.extract::<i64>() {
                toml::Value::Integer(v)
            } else if let Ok(v) = value.extract::<f64>() {
                toml::Value::Float(v)
            } else if let Ok(v) = value.extract::<String>() {
                toml::Value::String(v)
            } else if let Ok(v) = value.extract::<Vec<f64>>() {
                toml::Value::Array(v.into_iter().map(toml::Value::Float).collect())
            } else {
                return Err(PyValueError::new_err(format!("unsupported value for parameter {key:?}")));
            };
            spec.params.insert(key, value);
        }
    }
    let scorer = MethodRegistry::with_builtins().build(&spec).map_err(err)?;
    let req = ScoreRequest {
        series: &series.0,
        max_lag,
        seed,
        want_mse: false,
        truth: None,
    };
    scorer.score(&req).map(|o| PyScores(o.scores)).map_err(err)
}

/// AUROC of `scores` against `truth` (`convention`: auto, flat, pairwise).
#[pyfunction]
#[pyo3(signature = (scores, truth, convention="auto"))]
fn auroc(scores: &PyScores, truth: &PyAdjacency, convention: &str) -> PyResult<f64> {
    auroc_with(&scores.0, &truth.0, parse::<LagConvention>(convention)?).map_err(err)
}

/// Paired t-test and sign test over per-seed deltas.
#[pyfunction]
fn paired_test<'py>(py: Python<'py>, label: &str, deltas: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let r = paired(label, &deltas).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mean_delta", r.mean_delta)?;
    d.set_item("p_t", r.p_t)?;
    d.set_item("p_sign", r.p_sign)?;
    d.set_item("n", r.n)?;
    d.set_item("summary", r.summary())?;
    Ok(d)
}

/// The default plan for a stage, as TOML.
#[pyfunction]
#[pyo3(signature = (stage, data_root="."))]
fn default_plan(stage: &str, data_root: &str) -> PyResult<String> {
    default_stage_plan(parse::<Stage>(stage)?, &PathBuf::from(data_root))
        .to_toml()
        .map_err(err)
}

/// Runs a TOML plan, writing outputs under `out_dir/<stage>/`. Returns the
/// number of failed records.
#[pyfunction]
#[pyo3(signature = (plan_toml, out_dir, base_dir="."))]
fn run_plan(py: Python<'_>, plan_toml: &str, out_dir: &str, base_dir: &str) -> PyResult<usize> {
    let plan = ExperimentPlan::from_toml(plan_toml, &PathBuf::from(base_dir)).map_err(err)?;
    let out = PathBuf::from(out_dir);
    let outcome = py
        .detach(|| run_and_write(&plan, &MethodRegistry::with_builtins(), &out))
        .map_err(err)?;
    Ok(outcome.failures().len())
}

#[pymodule]
fn bnbench_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeries>()?;
    m.add_class::<PyAdjacency>()?;
    m.add_class::<PyScores>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(build_arms, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(paired_test, m)?)?;
    m.add_function(wrap_pyfunction!(default_plan, m)?)?;
    m.add_function(wrap_pyfunction!(run_plan, m)?)?;
    Ok(())
}
