//! Intervention semantics and the size-matched experimental arms.
//!
//! An intervened run is the observational run for the first `t` steps,
//! followed by one episode per variable (in index order unless the scheme
//! says otherwise). During variable `i`'s episode only `x_i` is touched:
//!
//! * `do_clamp`: `x_{i,t} = c_i`, one constant per episode.
//! * `soft_noise`: `x_{i,t}` = structural value `+ N(0, s^2)`.
//! * `random_forcing`: `x_{i,t} = s * eps_{i,t}`, fresh `eps` each step.
//!
//! Generator innovations are drawn identically whether or not a step is
//! intervened, so the intervened run, the observational prefix and the
//! size-matched observational continuation all share one innovation stream.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::synthgen::{GeneratorSpec, LaggedAdjacency, Override, Series, StructuralProcess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    DoClamp,
    SoftNoise,
    RandomForcing,
}

impl InterventionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InterventionKind::DoClamp => "do_clamp",
            InterventionKind::SoftNoise => "soft_noise",
            InterventionKind::RandomForcing => "random_forcing",
        }
    }
}

impl std::str::FromStr for InterventionKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        [InterventionKind::DoClamp, InterventionKind::SoftNoise, InterventionKind::RandomForcing]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| crate::Error::Parameter(format!("unknown intervention kind {s:?}")))
    }
}

impl std::fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How `scale` is turned into a clamp value or noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Multiples of the variable's standard deviation over the observational
    /// prefix; clamp sign drawn per episode.
    #[default]
    ObsSd,
    /// `scale` used as-is; clamps are `+scale`.
    Absolute,
}

fn default_scale() -> f64 {
    2.0
}

fn default_episode_len() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionScheme {
    pub kind: InterventionKind,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    /// Episode order; `None` means `0, 1, ..., K-1`.
    #[serde(default)]
    pub order: Option<Vec<usize>>,
}

impl InterventionScheme {
    pub fn new(kind: InterventionKind) -> Self {
        Self {
            kind,
            scale: default_scale(),
            episode_len: default_episode_len(),
            scale_mode: ScaleMode::ObsSd,
            order: None,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return param(format!("intervention scale must be > 0, got {}", self.scale));
        }
        if self.episode_len == 0 {
            return param("episode_len must be >= 1");
        }
        if let Some(order) = &self.order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..k).collect::<Vec<_>>() {
                return param("episode order must be a permutation of the variables");
            }
        }
        Ok(())
    }

    fn order(&self, k: usize) -> Vec<usize> {
        self.order.clone().unwrap_or_else(|| (0..k).collect())
    }
}

/// Annotation of one intervened cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellAnnotation {
    Clamped(f64),
    /// Standard deviation of the added noise.
    Softened(f64),
    Forced(f64),
}

impl CellAnnotation {
    pub fn kind(&self) -> &'static str {
        match self {
            CellAnnotation::Clamped(_) => "clamped",
            CellAnnotation::Softened(_) => "softened",
            CellAnnotation::Forced(_) => "forced",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            CellAnnotation::Clamped(v) | CellAnnotation::Softened(v) | CellAnnotation::Forced(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub var: usize,
    pub start: usize,
    pub len: usize,
}

impl Episode {
    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.start + self.len
    }
}

/// Per-cell intervention annotations plus the declared episodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterventionLog {
    entries: BTreeMap<(usize, usize), CellAnnotation>,
    episodes: Vec<Episode>,
}

impl InterventionLog {
    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn get(&self, t: usize, var: usize) -> Option<CellAnnotation> {
        self.entries.get(&(t, var)).copied()
    }

    /// `((t, var), annotation)` in time order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), CellAnnotation)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that every annotation sits inside a declared episode for its
    /// variable and that clamped / forced values match the stored series.
    pub fn check_against(&self, series: &Series) -> Result<()> {
        for (&(t, var), note) in &self.entries {
            if !self.episodes.iter().any(|e| e.var == var && e.contains(t)) {
                return param(format!("annotation at ({t}, {var}) outside every episode"));
            }
            match note {
                CellAnnotation::Clamped(v) | CellAnnotation::Forced(v) => {
                    if series.values()[(t, var)] != *v {
                        return param(format!("logged value at ({t}, {var}) does not match series"));
                    }
                }
                CellAnnotation::Softened(_) => {}
            }
        }
        Ok(())
    }

    /// Rows `(t, var, kind, value)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "var", "kind", "value"])?;
        for (&(t, var), note) in &self.entries {
            wtr.write_record([
                t.to_string(),
                var.to_string(),
                note.kind().to_string(),
                format!("{}", note.value()),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Simulate `spec.t` observational steps followed by one intervention
/// episode per variable. Returns a series of length
/// `spec.t + K * episode_len`. `seed` drives clamp signs and intervention
/// noise only; the generator itself is driven by `spec.seed`.
pub fn simulate_with_interventions(
    spec: &GeneratorSpec,
    scheme: &InterventionScheme,
    seed: u64,
) -> Result<(Series, LaggedAdjacency, InterventionLog)> {
    let process = StructuralProcess::from_spec(spec)?;
    let (series, log) = run_intervened(&process, spec.t, scheme, seed)?;
    Ok((series, process.adjacency().clone(), log))
}

fn run_intervened(
    process: &StructuralProcess,
    t_obs: usize,
    scheme: &InterventionScheme,
    seed: u64,
) -> Result<(Series, InterventionLog)> {
    let k = process.k();
    scheme.validate(k)?;
    if t_obs < 2 {
        return param("need at least 2 observational steps before the episodes");
    }
    let mut int_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runner = process.runner()?;
    let total = t_obs + k * scheme.episode_len;
    let mut data = Vec::with_capacity(total * k);
    for _ in 0..t_obs {
        let (row, _) = runner.step(None, &mut int_rng)?;
        data.extend_from_slice(&row);
    }
    let sds = column_sds(&data, t_obs, k);
    let mut log = InterventionLog::default();
    let mut t = t_obs;
    for var in scheme.order(k) {
        let base = match scheme.scale_mode {
            ScaleMode::ObsSd => scheme.scale * sds[var],
            ScaleMode::Absolute => scheme.scale,
        };
        let ov = match scheme.kind {
            InterventionKind::DoClamp => {
                let sign = match scheme.scale_mode {
                    ScaleMode::ObsSd if int_rng.random::<bool>() => -1.0,
                    _ => 1.0,
                };
                Override::Clamp(sign * base)
            }
            InterventionKind::SoftNoise => Override::Soft(base),
            InterventionKind::RandomForcing => Override::Force(base),
        };
        log.episodes.push(Episode {
            var,
            start: t,
            len: scheme.episode_len,
        });
        for _ in 0..scheme.episode_len {
            let (row, note) = runner.step(Some((var, ov)), &mut int_rng)?;
            if let Some(note) = note {
                log.entries.insert((t, var), note);
            }
            data.extend_from_slice(&row);
            t += 1;
        }
    }
    let values = nalgebra::DMatrix::from_row_slice(total, k, &data);
    let names = (0..k).map(|i| format!("x{i}")).collect();
    let series = Series::new(values, names, process.dt())?.with_log(log.clone());
    Ok((series, log))
}

fn column_sds(row_major: &[f64], t: usize, k: usize) -> Vec<f64> {
    (0..k)
        .map(|j| {
            let col = (0..t).map(|r| row_major[r * k + j]);
            let mean = col.clone().sum::<f64>() / t as f64;
            let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            let sd = var.sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect()
}

/// The three arms of the size-match control.
#[derive(Debug, Clone)]
pub struct ArmSet {
    /// First `t_obs` observational rows.
    pub obs: Series,
    /// `obs` followed by one intervention episode per variable.
    pub combined: Series,
    /// `t_obs + K * episode_len` observational rows of the same process.
    pub obs_big: Series,
    pub truth: LaggedAdjacency,
    pub log: InterventionLog,
}

impl ArmSet {
    pub fn arms(&self) -> [(&'static str, &Series); 3] {
        [
            ("obs", &self.obs),
            ("combined", &self.combined),
            ("obs_big", &self.obs_big),
        ]
    }

    /// Writes `obs.csv`, `combined.csv`, `obs_big.csv`, `truth.csv`,
    /// `interventions.csv` and a `manifest.toml` naming roles and sizes.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::from("# arm role -> file and row count\n");
        for (role, s) in self.arms() {
            let file = format!("{role}.csv");
            s.write_csv(std::fs::File::create(dir.join(&file))?)?;
            manifest.push_str(&format!(
                "[{role}]\nfile = \"{file}\"\nrows = {}\nvars = {}\n\n",
                s.len(),
                s.n_vars()
            ));
        }
        self.truth.write_csv(std::fs::File::create(dir.join("truth.csv"))?)?;
        self.log.write_csv(std::fs::File::create(dir.join("interventions.csv"))?)?;
        std::fs::write(dir.join("manifest.toml"), manifest)?;
        Ok(())
    }
}

pub fn build_arms(
    spec: &GeneratorSpec,
    scheme: &InterventionScheme,
    t_obs: usize,
    seed: u64,
) -> Result<ArmSet> {
    if t_obs < 50 {
        return param(format!("t_obs must be >= 50, got {t_obs}"));
    }
    let spec = GeneratorSpec {
        t: t_obs,
        ..spec.clone()
    };
    let process = StructuralProcess::from_spec(&spec)?;
    scheme.validate(process.k())?;
    let total = t_obs + process.k() * scheme.episode_len;
    let (combined, log) = run_intervened(&process, t_obs, scheme, seed)?;
    let obs_big = Series::from_matrix(process.simulate(total)?)?;
    let obs_big = Series::new(obs_big.values().clone(), combined.var_names().to_vec(), process.dt())?;
    let obs = obs_big.rows(0, t_obs)?;
    Ok(ArmSet {
        obs,
        combined,
        obs_big,
        truth: process.adjacency().clone(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::Family;

    fn spec(k: usize, t: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            density: 0.2,
            ..GeneratorSpec::new(Family::VarRandom, k, t, seed)
        }
    }

    #[test]
    fn arm_sizes() {
        let arms = build_arms(
            &spec(10, 300, 1),
            &InterventionScheme::new(InterventionKind::RandomForcing),
            300,
            7,
        )
        .unwrap();
        assert_eq!(arms.obs.len(), 300);
        assert_eq!(arms.combined.len(), 800);
        assert_eq!(arms.obs_big.len(), 800);
    }

    #[test]
    fn prefix_identity() {
        for kind in [
            InterventionKind::DoClamp,
            InterventionKind::SoftNoise,
            InterventionKind::RandomForcing,
        ] {
            let arms = build_arms(&spec(5, 100, 3), &InterventionScheme::new(kind), 100, 4).unwrap();
            let prefix = arms.obs_big.values().rows(0, 100);
            assert_eq!(arms.obs.values(), &prefix.into_owned());
            let cprefix = arms.combined.values().rows(0, 100);
            assert_eq!(arms.obs.values(), &cprefix.into_owned());
        }
    }

    #[test]
    fn clamp_with_absolute_scale_stores_exact_value() {
        let scheme = InterventionScheme {
            scale: 2.0,
            scale_mode: ScaleMode::Absolute,
            ..InterventionScheme::new(InterventionKind::DoClamp)
        };
        let (s, _, log) = simulate_with_interventions(&spec(5, 100, 2), &scheme, 9).unwrap();
        let ep = log.episodes().iter().find(|e| e.var == 3).unwrap();
        for t in ep.start..ep.start + ep.len {
            assert_eq!(log.get(t, 3), Some(CellAnnotation::Clamped(2.0)));
            assert_eq!(s.values()[(t, 3)], 2.0);
        }
        log.check_against(&s).unwrap();
    }

    #[test]
    fn clamped_cells_have_zero_variance() {
        let scheme = InterventionScheme::new(InterventionKind::DoClamp);
        let (s, _, log) = simulate_with_interventions(&spec(6, 120, 5), &scheme, 1).unwrap();
        for ep in log.episodes() {
            let vals: Vec<f64> = (ep.start..ep.start + ep.len).map(|t| s.values()[(t, ep.var)]).collect();
            assert!(vals.iter().all(|v| *v == vals[0]));
            assert!(vals[0] != 0.0);
        }
    }

    #[test]
    fn tiny_forcing_scale_zeroes_the_variable() {
        let scheme = InterventionScheme {
            scale: 1e-9,
            ..InterventionScheme::new(InterventionKind::RandomForcing)
        };
        let (s, _, log) = simulate_with_interventions(&spec(4, 80, 8), &scheme, 2).unwrap();
        for ep in log.episodes() {
            for t in ep.start..ep.start + ep.len {
                assert!(s.values()[(t, ep.var)].abs() < 1e-7);
            }
        }
    }

    #[test]
    fn log_covers_exactly_the_episode_cells() {
        for kind in [
            InterventionKind::DoClamp,
            InterventionKind::SoftNoise,
            InterventionKind::RandomForcing,
        ] {
            let scheme = InterventionScheme {
                episode_len: 7,
                ..InterventionScheme::new(kind)
            };
            let (s, _, log) = simulate_with_interventions(&spec(5, 60, 1), &scheme, 3).unwrap();
            assert_eq!(log.len(), 5 * 7);
            for t in 0..s.len() {
                for v in 0..5 {
                    let inside = log.episodes().iter().any(|e| e.var == v && e.contains(t));
                    assert_eq!(inside, log.get(t, v).is_some());
                }
            }
            log.check_against(&s).unwrap();
        }
    }

    #[test]
    fn non_intervened_cells_follow_structural_equation() {
        // Residuals of un-intervened cells equal the shared innovations,
        // which we recover from the purely observational continuation.
        let sp = spec(6, 100, 12);
        for kind in [
            InterventionKind::DoClamp,
            InterventionKind::SoftNoise,
            InterventionKind::RandomForcing,
        ] {
            let arms = build_arms(&sp, &InterventionScheme::new(kind), 100, 5).unwrap();
            let process = StructuralProcess::from_spec(&GeneratorSpec { t: 100, ..sp.clone() }).unwrap();
            let a = &process.coefficients().unwrap()[0];
            let resid = |m: &nalgebra::DMatrix<f64>, t: usize, i: usize| {
                let mut r = m[(t, i)];
                for j in 0..6 {
                    r -= a[(i, j)] * m[(t - 1, j)];
                }
                r
            };
            for t in 101..arms.combined.len() {
                for i in 0..6 {
                    if arms.log.get(t, i).is_some() {
                        continue;
                    }
                    let rc = resid(arms.combined.values(), t, i);
                    let ro = resid(arms.obs_big.values(), t, i);
                    assert!((rc - ro).abs() < 1e-9, "t={t} i={i}: {rc} vs {ro}");
                }
            }
        }
    }

    #[test]
    fn rejects_short_observational_arm() {
        let r = build_arms(&spec(5, 40, 1), &InterventionScheme::new(InterventionKind::DoClamp), 40, 1);
        assert!(r.is_err());
    }

    #[test]
    fn scheme_validation() {
        let mut s = InterventionScheme::new(InterventionKind::SoftNoise);
        s.scale = 0.0;
        assert!(s.validate(3).is_err());
        let mut s = InterventionScheme::new(InterventionKind::SoftNoise);
        s.order = Some(vec![0, 0, 1]);
        assert!(s.validate(3).is_err());
    }

    #[test]
    fn lorenz_clamp_is_held_through_the_macro_step() {
        let sp = GeneratorSpec::new(Family::Lorenz96, 6, 100, 3);
        let (s, _, log) =
            simulate_with_interventions(&sp, &InterventionScheme::new(InterventionKind::DoClamp), 2).unwrap();
        log.check_against(&s).unwrap();
        let forced = InterventionScheme::new(InterventionKind::RandomForcing);
        let (s, _, log) = simulate_with_interventions(&sp, &forced, 2).unwrap();
        log.check_against(&s).unwrap();
    }
}
