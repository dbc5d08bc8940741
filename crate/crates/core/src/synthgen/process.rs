use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::lorenz::Lorenz96;
use super::series::LaggedAdjacency;
use super::{Family, GeneratorSpec};
use crate::error::{Error, Result};
use crate::intervene::CellAnnotation;
use crate::linalg::companion_spectral_radius;

pub(crate) const MAX_ATTEMPTS: usize = 100;
pub(crate) const TARGET_RADIUS: f64 = 0.9;
const OVERFLOW_GUARD: f64 = 1e6;
const VAR_BURN_IN: usize = 200;
const LORENZ_BURN_IN: usize = 1000;
const LORENZ_INIT_SD: f64 = 0.5;
const COEF_MIN: f64 = 0.2;
const COEF_MAX: f64 = 0.8;

/// `phi_alpha(u) = (1 - alpha) u + alpha tanh(2u)`.
pub fn phi(alpha: f64, u: f64) -> f64 {
    if alpha == 0.0 {
        u
    } else {
        (1.0 - alpha) * u + alpha * (2.0 * u).tanh()
    }
}

/// What an intervention does to one variable at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Override {
    /// Replace the structural value with this constant.
    Clamp(f64),
    /// Add `N(0, sd^2)` on top of the structural value.
    Soft(f64),
    /// Replace the structural value with `scale * eps`, `eps ~ N(0, 1)`.
    Force(f64),
}

#[derive(Debug, Clone)]
pub(crate) enum Dynamics {
    /// `x_t = sum_tau A_tau phi(x_{t-tau}) + eps_t`.
    Lagged { coefs: Vec<DMatrix<f64>>, alpha: f64 },
    RegimeSwitch {
        regimes: [DMatrix<f64>; 2],
        switch_prob: f64,
    },
    Lorenz { system: Lorenz96, init: Vec<f64> },
}

/// A fully drawn generating process: coefficients, ground truth and the
/// innovation stream position. Everything downstream of the draw is a pure
/// function of this value.
#[derive(Debug, Clone)]
pub struct StructuralProcess {
    k: usize,
    family: Family,
    dynamics: Dynamics,
    adjacency: LaggedAdjacency,
    rng: ChaCha8Rng,
    dt: f64,
}

impl StructuralProcess {
    /// Draw coefficients (and initial state) for `spec`. Linear and
    /// nonlinear lagged families are trial-simulated for `spec.t` steps and
    /// redrawn if the trajectory leaves the overflow guard.
    pub fn from_spec(spec: &GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let k = spec.k;
        match spec.family {
            Family::VarChain => {
                let mut a = DMatrix::zeros(k, k);
                let mut adj = LaggedAdjacency::empty(k, 1)?;
                for i in 0..k {
                    a[(i, i)] = 0.5;
                    if i + 1 < k {
                        a[(i + 1, i)] = 0.5;
                        adj.set(i + 1, i, 1, true);
                    }
                }
                Ok(Self::lagged(spec, vec![a], 0.0, adj, rng))
            }
            Family::VarRandom | Family::CausemeNonlinear => {
                let alpha = match spec.family {
                    Family::CausemeNonlinear => spec.nonlinearity,
                    _ => 0.0,
                };
                for _ in 0..MAX_ATTEMPTS {
                    let (coefs, adj) =
                        draw_sparse_coefs(&mut rng, k, spec.max_lag, spec.density, None)?;
                    let candidate = Self::lagged(spec, coefs, alpha, adj, rng.clone());
                    if candidate.simulate(spec.t).is_ok() {
                        return Ok(candidate);
                    }
                }
                Err(Error::UnstableTrajectory {
                    attempts: MAX_ATTEMPTS,
                })
            }
            Family::RegimeSwitch => {
                let (first, adj) = draw_sparse_coefs(&mut rng, k, 1, spec.density, None)?;
                // Second regime: same support and signs, fresh magnitudes.
                let (second, _) =
                    draw_sparse_coefs(&mut rng, k, 1, spec.density, Some(&first[0]))?;
                let dynamics = Dynamics::RegimeSwitch {
                    regimes: [first[0].clone(), second[0].clone()],
                    switch_prob: spec.switch_prob,
                };
                Ok(Self {
                    k,
                    family: spec.family,
                    dynamics,
                    adjacency: adj,
                    rng,
                    dt: 1.0,
                })
            }
            Family::Lorenz96 => {
                let forcing = spec.forcing_f.unwrap_or(10.0);
                let system = Lorenz96::new(forcing);
                let noise = Normal::new(0.0, LORENZ_INIT_SD).expect("valid sd");
                let init: Vec<f64> = (0..k).map(|_| forcing + noise.sample(&mut rng)).collect();
                let mut adj = LaggedAdjacency::empty(k, 1)?;
                for i in 0..k {
                    for off in [k - 2, k - 1, 1] {
                        adj.set(i, (i + off) % k, 1, true);
                    }
                }
                let dt = system.sample_interval();
                Ok(Self {
                    k,
                    family: spec.family,
                    dynamics: Dynamics::Lorenz { system, init },
                    adjacency: adj,
                    rng,
                    dt,
                })
            }
        }
    }

    fn lagged(
        spec: &GeneratorSpec,
        coefs: Vec<DMatrix<f64>>,
        alpha: f64,
        adjacency: LaggedAdjacency,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            k: spec.k,
            family: spec.family,
            dynamics: Dynamics::Lagged { coefs, alpha },
            adjacency,
            rng,
            dt: 1.0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn adjacency(&self) -> &LaggedAdjacency {
        &self.adjacency
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Per-lag coefficient matrices for lagged families (`A_tau[i, j]` is
    /// the effect of `j` at lag `tau` on `i`); regime 0 for regime switching;
    /// `None` for Lorenz-96.
    pub fn coefficients(&self) -> Option<Vec<DMatrix<f64>>> {
        match &self.dynamics {
            Dynamics::Lagged { coefs, .. } => Some(coefs.clone()),
            Dynamics::RegimeSwitch { regimes, .. } => Some(vec![regimes[0].clone()]),
            Dynamics::Lorenz { .. } => None,
        }
    }

    pub fn regime_coefficients(&self) -> Option<&[DMatrix<f64>; 2]> {
        match &self.dynamics {
            Dynamics::RegimeSwitch { regimes, .. } => Some(regimes),
            _ => None,
        }
    }

    pub fn nonlinearity(&self) -> f64 {
        match &self.dynamics {
            Dynamics::Lagged { alpha, .. } => *alpha,
            _ => 0.0,
        }
    }

    pub fn runner(&self) -> Result<Runner<'_>> {
        Runner::new(self)
    }

    /// `t` observational rows.
    pub fn simulate(&self, t: usize) -> Result<DMatrix<f64>> {
        let mut runner = self.runner()?;
        // No overrides, so the intervention stream is never touched.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let mut data = Vec::with_capacity(t * self.k);
        for _ in 0..t {
            let (row, _) = runner.step(None, &mut unused)?;
            data.extend_from_slice(&row);
        }
        Ok(DMatrix::from_row_slice(t, self.k, &data))
    }
}

/// Steps a [`StructuralProcess`] forward one recorded sample at a time,
/// optionally overriding one variable per step.
pub struct Runner<'a> {
    process: &'a StructuralProcess,
    rng: ChaCha8Rng,
    /// Most recent row first.
    history: VecDeque<Vec<f64>>,
    state: Vec<f64>,
    regime: usize,
    steps: usize,
}

impl<'a> Runner<'a> {
    fn new(process: &'a StructuralProcess) -> Result<Self> {
        let k = process.k;
        let depth = match &process.dynamics {
            Dynamics::Lagged { coefs, .. } => coefs.len(),
            _ => 1,
        };
        let mut runner = Runner {
            process,
            rng: process.rng.clone(),
            history: (0..depth).map(|_| vec![0.0; k]).collect(),
            state: vec![0.0; k],
            regime: 0,
            steps: 0,
        };
        match &process.dynamics {
            Dynamics::Lorenz { system, init } => {
                runner.state = init.clone();
                system.advance(&mut runner.state, LORENZ_BURN_IN, None, 0)?;
            }
            _ => {
                let mut unused = ChaCha8Rng::seed_from_u64(0);
                for _ in 0..VAR_BURN_IN {
                    runner.step(None, &mut unused)?;
                }
                runner.steps = 0;
            }
        }
        Ok(runner)
    }

    /// Active regime (always 0 outside the regime-switch family).
    pub fn regime(&self) -> usize {
        self.regime
    }

    /// Produce the next recorded row. Generator innovations are always
    /// drawn, so the innovation stream stays aligned with an un-intervened
    /// run; intervention noise comes from `int_rng`.
    pub fn step(
        &mut self,
        ov: Option<(usize, Override)>,
        int_rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, Option<CellAnnotation>)> {
        let k = self.process.k;
        let (row, note) = match &self.process.dynamics {
            Dynamics::Lagged { coefs, alpha } => {
                let eps: Vec<f64> = (0..k).map(|_| self.rng.sample(StandardNormal)).collect();
                let mut x = eps;
                for (tau, a) in coefs.iter().enumerate() {
                    let past: Vec<f64> = self.history[tau].iter().map(|&u| phi(*alpha, u)).collect();
                    for i in 0..k {
                        let mut acc = 0.0;
                        for j in 0..k {
                            acc += a[(i, j)] * past[j];
                        }
                        x[i] += acc;
                    }
                }
                let note = apply_override(&mut x, ov, int_rng);
                (x, note)
            }
            Dynamics::RegimeSwitch {
                regimes,
                switch_prob,
            } => {
                let eps: Vec<f64> = (0..k).map(|_| self.rng.sample(StandardNormal)).collect();
                let a = &regimes[self.regime];
                let prev = &self.history[0];
                let mut x = eps;
                for i in 0..k {
                    for j in 0..k {
                        x[i] += a[(i, j)] * prev[j];
                    }
                }
                let u: f64 = self.rng.random();
                if u < *switch_prob {
                    self.regime = 1 - self.regime;
                }
                let note = apply_override(&mut x, ov, int_rng);
                (x, note)
            }
            Dynamics::Lorenz { system, .. } => {
                let mut frozen = None;
                let mut note = None;
                if let Some((var, o)) = ov {
                    match o {
                        Override::Clamp(c) => {
                            self.state[var] = c;
                            frozen = Some(var);
                            note = Some(CellAnnotation::Clamped(c));
                        }
                        Override::Force(s) => {
                            let e: f64 = int_rng.sample(StandardNormal);
                            self.state[var] = s * e;
                            frozen = Some(var);
                            note = Some(CellAnnotation::Forced(s * e));
                        }
                        Override::Soft(sd) => {
                            let e: f64 = int_rng.sample(StandardNormal);
                            self.state[var] += sd * e;
                            note = Some(CellAnnotation::Softened(sd));
                        }
                    }
                }
                let offset = LORENZ_BURN_IN + self.steps * system.substeps;
                system.advance(&mut self.state, system.substeps, frozen, offset)?;
                (self.state.clone(), note)
            }
        };
        if row.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD) {
            return Err(Error::IntegrationBlowup { step: self.steps });
        }
        self.history.pop_back();
        self.history.push_front(row.clone());
        self.steps += 1;
        Ok((row, note))
    }
}

fn apply_override(
    x: &mut [f64],
    ov: Option<(usize, Override)>,
    int_rng: &mut ChaCha8Rng,
) -> Option<CellAnnotation> {
    let (var, o) = ov?;
    Some(match o {
        Override::Clamp(c) => {
            x[var] = c;
            CellAnnotation::Clamped(c)
        }
        Override::Soft(sd) => {
            let e: f64 = int_rng.sample(StandardNormal);
            x[var] += sd * e;
            CellAnnotation::Softened(sd)
        }
        Override::Force(s) => {
            let e: f64 = int_rng.sample(StandardNormal);
            x[var] = s * e;
            CellAnnotation::Forced(x[var])
        }
    })
}

/// Independent Bernoulli(`density`) support over off-diagonal `(i, j, tau)`
/// cells with `Uniform(+-[0.2, 0.8])` coefficients, capped at companion
/// spectral radius 0.9. With `template`, the support and signs are copied
/// from it and only magnitudes are redrawn.
fn draw_sparse_coefs(
    rng: &mut ChaCha8Rng,
    k: usize,
    max_lag: usize,
    density: f64,
    template: Option<&DMatrix<f64>>,
) -> Result<(Vec<DMatrix<f64>>, LaggedAdjacency)> {
    let mut coefs;
    let mut adj;
    if let Some(tpl) = template {
        let mut a = DMatrix::zeros(k, k);
        adj = LaggedAdjacency::empty(k, 1)?;
        for i in 0..k {
            for j in 0..k {
                if tpl[(i, j)] != 0.0 {
                    let m = COEF_MIN + (COEF_MAX - COEF_MIN) * rng.random::<f64>();
                    a[(i, j)] = tpl[(i, j)].signum() * m;
                    adj.set(i, j, 1, true);
                }
            }
        }
        coefs = vec![a];
    } else {
        let mut attempt = 0;
        loop {
            attempt += 1;
            coefs = vec![DMatrix::zeros(k, k); max_lag];
            adj = LaggedAdjacency::empty(k, max_lag)?;
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    for tau in 1..=max_lag {
                        if rng.random::<f64>() < density {
                            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                            let m = COEF_MIN + (COEF_MAX - COEF_MIN) * rng.random::<f64>();
                            coefs[tau - 1][(i, j)] = sign * m;
                            adj.set(i, j, tau, true);
                        }
                    }
                }
            }
            let (pos, neg) = adj.off_diagonal_counts();
            let full_ok = density >= 1.0 || neg > 0;
            if pos > 0 && full_ok {
                break;
            }
            if attempt >= MAX_ATTEMPTS {
                return Err(Error::DegenerateDraw { attempts: attempt });
            }
        }
    }
    let radius = companion_spectral_radius(&coefs);
    if radius > TARGET_RADIUS {
        // A_tau -> s^tau A_tau scales every companion eigenvalue by s
        let scale = TARGET_RADIUS / radius;
        for (tau, a) in coefs.iter_mut().enumerate() {
            *a *= scale.powi(tau as i32 + 1);
        }
    }
    Ok((coefs, adj))
}
