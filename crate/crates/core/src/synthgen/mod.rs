//! Seeded synthetic generators with exact ground-truth adjacency.
//!
//! Every generator goes through [`StructuralProcess`]: coefficients (or the
//! Lorenz-96 initial state) are drawn first from a ChaCha stream seeded by
//! `GeneratorSpec::seed`, and the same stream then supplies the innovations.
//! Identical specs therefore give bit-identical series.

mod lorenz;
mod process;
mod series;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

pub use lorenz::Lorenz96;
pub use process::{phi, Override, Runner, StructuralProcess};
pub use series::{LaggedAdjacency, Series};
pub(crate) use series::{check_perm, default_names};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    VarChain,
    VarRandom,
    RegimeSwitch,
    Lorenz96,
    CausemeNonlinear,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::VarChain => "var_chain",
            Family::VarRandom => "var_random",
            Family::RegimeSwitch => "regime_switch",
            Family::Lorenz96 => "lorenz96",
            Family::CausemeNonlinear => "causeme_nonlinear",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "var_chain" => Family::VarChain,
            "var_random" => Family::VarRandom,
            "regime_switch" => Family::RegimeSwitch,
            "lorenz96" => Family::Lorenz96,
            "causeme_nonlinear" => Family::CausemeNonlinear,
            other => return param(format!("unknown generator family {other:?}")),
        })
    }
}

fn default_max_lag() -> usize {
    1
}

fn default_density() -> f64 {
    0.1
}

fn default_switch_prob() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub k: usize,
    pub t: usize,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub nonlinearity: f64,
    /// Lorenz-96 forcing; rejected for every other family.
    #[serde(default)]
    pub forcing_f: Option<f64>,
    /// Per-step regime flip probability (regime switching only).
    #[serde(default = "default_switch_prob")]
    pub switch_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(family: Family, k: usize, t: usize, seed: u64) -> Self {
        Self {
            family,
            k,
            t,
            max_lag: 1,
            density: default_density(),
            nonlinearity: 0.0,
            forcing_f: match family {
                Family::Lorenz96 => Some(10.0),
                _ => None,
            },
            switch_prob: default_switch_prob(),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min_k = if self.family == Family::Lorenz96 { 4 } else { 2 };
        if self.k < min_k {
            return param(format!("{} needs k >= {min_k}, got {}", self.family, self.k));
        }
        let min_t = if self.family == Family::VarChain { 20 } else { 2 };
        if self.t < min_t {
            return param(format!("{} needs t >= {min_t}, got {}", self.family, self.t));
        }
        if self.max_lag < 1 {
            return param("max_lag must be >= 1");
        }
        let lagged = matches!(self.family, Family::VarRandom | Family::CausemeNonlinear);
        if !lagged && self.max_lag != 1 {
            return param(format!("{} is a lag-1 process; max_lag must be 1", self.family));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return param(format!("density must be in (0, 1], got {}", self.density));
        }
        if !(0.0..=1.0).contains(&self.nonlinearity) {
            return param(format!("nonlinearity must be in [0, 1], got {}", self.nonlinearity));
        }
        if self.nonlinearity != 0.0 && self.family != Family::CausemeNonlinear {
            return param("nonlinearity only applies to causeme_nonlinear");
        }
        match (self.family, self.forcing_f) {
            (Family::Lorenz96, Some(f)) if !f.is_finite() => {
                return param("forcing_f must be finite");
            }
            (Family::Lorenz96, _) => {}
            (_, Some(_)) => return param("forcing_f only applies to lorenz96"),
            (_, None) => {}
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return param("switch_prob must be a probability");
        }
        Ok(())
    }
}

/// Generate `(series, truth)` for any spec.
pub fn generate(spec: &GeneratorSpec) -> Result<(Series, LaggedAdjacency)> {
    let process = StructuralProcess::from_spec(spec)?;
    let values = process.simulate(spec.t)?;
    let series = Series::new(values, default_names(spec.k), process.dt())?;
    Ok((series, process.adjacency().clone()))
}

pub fn gen_var_chain(k: usize, t: usize, seed: u64) -> Result<(Series, LaggedAdjacency)> {
    generate(&GeneratorSpec::new(Family::VarChain, k, t, seed))
}

pub fn gen_var_random(
    k: usize,
    t: usize,
    max_lag: usize,
    density: f64,
    seed: u64,
) -> Result<(Series, LaggedAdjacency)> {
    generate(&GeneratorSpec {
        max_lag,
        density,
        ..GeneratorSpec::new(Family::VarRandom, k, t, seed)
    })
}

/// Two lag-1 regimes on one shared support (density 0.3), switching with
/// probability 0.02 per step.
pub fn gen_regime_switch(k: usize, t: usize, seed: u64) -> Result<(Series, LaggedAdjacency)> {
    generate(&GeneratorSpec {
        density: 0.3,
        ..GeneratorSpec::new(Family::RegimeSwitch, k, t, seed)
    })
}

pub fn gen_lorenz96(
    k: usize,
    t: usize,
    forcing_f: f64,
    seed: u64,
) -> Result<(Series, LaggedAdjacency)> {
    generate(&GeneratorSpec {
        forcing_f: Some(forcing_f),
        ..GeneratorSpec::new(Family::Lorenz96, k, t, seed)
    })
}

pub fn gen_causeme_nonlinear(
    k: usize,
    t: usize,
    max_lag: usize,
    density: f64,
    alpha: f64,
    seed: u64,
) -> Result<(Series, LaggedAdjacency)> {
    generate(&GeneratorSpec {
        max_lag,
        density,
        nonlinearity: alpha,
        ..GeneratorSpec::new(Family::CausemeNonlinear, k, t, seed)
    })
}
