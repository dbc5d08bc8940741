use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::registry::MethodRegistry;
use crate::error::{Error, Result};
use crate::evalstats::LagConvention;
use crate::intervene::InterventionScheme;
use crate::provenance::Manifest;
use crate::synthgen::GeneratorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    F1,
    F2,
    F3,
    F4,
    F5,
    Survives,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::F1, Stage::F2, Stage::F3, Stage::F4, Stage::F5, Stage::Survives];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::F1 => "f1",
            Stage::F2 => "f2",
            Stage::F3 => "f3",
            Stage::F4 => "f4",
            Stage::F5 => "f5",
            Stage::Survives => "survives",
        }
    }

    /// Stages that run the three intervention arms.
    pub fn uses_arms(&self) -> bool {
        matches!(self, Stage::F4 | Stage::F5)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidPlan(format!("unknown stage {s:?}")))
    }
}

/// A method with optional parameters and a distinct ledger label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Lag depth for this method, overriding the cell's `fit_max_lag`
    /// (and a dataset's manifest lag).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<usize>,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub params: toml::Table,
}

impl MethodSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            label: None,
            max_lag: None,
            params: toml::Table::new(),
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(String),
    Spec(MethodSpec),
}

impl MethodEntry {
    pub fn spec(&self) -> MethodSpec {
        match self {
            MethodEntry::Name(n) => MethodSpec::named(n),
            MethodEntry::Spec(s) => s.clone(),
        }
    }
}

impl From<&str> for MethodEntry {
    fn from(s: &str) -> Self {
        MethodEntry::Name(s.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    /// The seed field is ignored; data seeds are derived per replicate.
    pub generator: GeneratorSpec,
    /// Lag depth given to the methods; defaults to the generator's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_max_lag: Option<usize>,
    #[serde(default)]
    pub compute_mse: bool,
    /// Intervention scheme (required for f4/f5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<InterventionScheme>,
    /// Per-cell method list replacing the plan's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<MethodEntry>>,
}

impl CellSpec {
    pub fn new(generator: GeneratorSpec) -> Self {
        Self {
            generator,
            fit_max_lag: None,
            compute_mse: false,
            scheme: None,
            methods: None,
        }
    }

    pub fn fit_lag(&self) -> usize {
        self.fit_max_lag.unwrap_or(self.generator.max_lag)
    }

    /// `c003 K=10 T=300 gen=var_random L=2 dens=0.1 ...`.
    pub fn label(&self, index: usize) -> String {
        let g = &self.generator;
        let mut s = format!("c{index:03} K={} T={} gen={} L={} fit_L={}", g.k, g.t, g.family, g.max_lag, self.fit_lag());
        match g.family {
            crate::synthgen::Family::VarRandom | crate::synthgen::Family::CausemeNonlinear => {
                s.push_str(&format!(" dens={}", g.density));
            }
            _ => {}
        }
        if g.family == crate::synthgen::Family::CausemeNonlinear {
            s.push_str(&format!(" alpha={}", g.nonlinearity));
        }
        if let Some(f) = g.forcing_f {
            s.push_str(&format!(" F={f}"));
        }
        if let Some(sc) = &self.scheme {
            s.push_str(&format!(" scheme={}", sc.kind));
        }
        s
    }
}

/// A real-data dataset for f3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub manifest: PathBuf,
    /// Overrides the manifest's data path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

fn default_reference() -> String {
    "bottleneck".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub stage: Stage,
    pub base_seed: u64,
    pub seeds: usize,
    pub methods: Vec<MethodEntry>,
    #[serde(default = "default_reference")]
    pub reference: String,
    #[serde(default)]
    pub convention: LagConvention,
    #[serde(default)]
    pub cells: Vec<CellSpec>,
    #[serde(default)]
    pub datasets: Vec<DatasetRef>,
    /// Directory plan-relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut plan: ExperimentPlan = toml::from_str(text).map_err(|e| Error::InvalidPlan(e.to_string()))?;
        plan.base_dir = base_dir.to_path_buf();
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidPlan(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidPlan(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn cell_methods(&self, cell: &CellSpec) -> Vec<MethodSpec> {
        cell.methods
            .as_ref()
            .unwrap_or(&self.methods)
            .iter()
            .map(MethodEntry::spec)
            .collect()
    }

    pub fn all_method_labels(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.methods.iter().map(|m| m.spec().label().to_string()).collect();
        for c in &self.cells {
            for m in self.cell_methods(c) {
                out.insert(m.label().to_string());
            }
        }
        out
    }

    /// Checks everything that can be checked without running: generator
    /// specs, schemes, method names and parameters, dataset manifests.
    pub fn validate(&self, registry: &MethodRegistry) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if self.seeds == 0 {
            return bad("seeds must be >= 1".into());
        }
        if self.stage.uses_arms() && self.seeds < 3 {
            return bad(format!("{} needs >= 3 seeds for paired tests", self.stage));
        }
        if self.cells.is_empty() && self.datasets.is_empty() {
            return bad("plan has no cells".into());
        }
        if !self.datasets.is_empty() && self.stage != Stage::F3 {
            return bad("datasets are only used by f3".into());
        }
        let check_methods = |methods: &[MethodSpec], ctx: &str| -> Result<()> {
            if methods.is_empty() {
                return bad(format!("{ctx}: no methods"));
            }
            let mut seen = BTreeSet::new();
            for m in methods {
                if !seen.insert(m.label().to_string()) {
                    return bad(format!("{ctx}: duplicate method label {:?}", m.label()));
                }
                registry
                    .build(m)
                    .map_err(|e| Error::InvalidPlan(format!("{ctx}: method {:?}: {e}", m.label())))?;
            }
            Ok(())
        };
        check_methods(&self.methods.iter().map(MethodEntry::spec).collect::<Vec<_>>(), "plan")?;
        for (i, cell) in self.cells.iter().enumerate() {
            let ctx = format!("cell {i}");
            cell.generator
                .validate()
                .map_err(|e| Error::InvalidPlan(format!("{ctx}: {e}")))?;
            if cell.fit_lag() == 0 {
                return bad(format!("{ctx}: fit_max_lag must be >= 1"));
            }
            for lag in std::iter::once(cell.fit_lag()).chain(self.cell_methods(cell).iter().filter_map(|m| m.max_lag)) {
                if lag == 0 {
                    return bad(format!("{ctx}: lag depth must be >= 1"));
                }
                if cell.generator.t <= 2 * lag + 20 {
                    return bad(format!("{ctx}: T={} too short for lag {lag}", cell.generator.t));
                }
            }
            match (&cell.scheme, self.stage.uses_arms()) {
                (None, true) => return bad(format!("{ctx}: {} cells need an intervention scheme", self.stage)),
                (Some(_), false) => return bad(format!("{ctx}: schemes are only used by f4/f5")),
                (Some(s), true) => {
                    s.validate(cell.generator.k).map_err(|e| Error::InvalidPlan(format!("{ctx}: {e}")))?;
                    if cell.generator.t < 50 {
                        return bad(format!("{ctx}: arms need T >= 50"));
                    }
                }
                (None, false) => {}
            }
            check_methods(&self.cell_methods(cell), &ctx)?;
            if !self.cell_methods(cell).iter().any(|m| m.label() == self.reference) && self.stage == Stage::F2 {
                return bad(format!("{ctx}: reference method {:?} not run", self.reference));
            }
        }
        for d in &self.datasets {
            Manifest::load(&self.resolve(&d.manifest))
                .map_err(|e| Error::InvalidPlan(format!("dataset {}: {e}", d.manifest.display())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAN: &str = r#"
stage = "f1"
base_seed = 7
seeds = 2
methods = ["bottleneck", { name = "lasso", label = "lasso_fast", params = { grid = [0.1, 0.01] } }]

[[cells]]
generator = { family = "var_chain", k = 5, t = 200 }
"#;

    #[test]
    fn parses_and_round_trips() {
        let plan = ExperimentPlan::from_toml(PLAN, Path::new(".")).unwrap();
        assert_eq!(plan.stage, Stage::F1);
        assert_eq!(plan.methods[1].spec().label(), "lasso_fast");
        plan.validate(&MethodRegistry::with_builtins()).unwrap();
        let again = ExperimentPlan::from_toml(&plan.to_toml().unwrap(), Path::new(".")).unwrap();
        assert_eq!(again, plan);
    }

    #[test]
    fn rejects_bad_plans() {
        let reg = MethodRegistry::with_builtins();
        let bad_method = PLAN.replace("\"bottleneck\"", "\"nope\"");
        assert!(ExperimentPlan::from_toml(&bad_method, Path::new(".")).unwrap().validate(&reg).is_err());
        let bad_param = PLAN.replace("grid = [0.1, 0.01]", "gird = 3");
        assert!(ExperimentPlan::from_toml(&bad_param, Path::new(".")).unwrap().validate(&reg).is_err());
        let no_scheme = PLAN.replace("stage = \"f1\"", "stage = \"f4\"").replace("seeds = 2", "seeds = 3");
        assert!(ExperimentPlan::from_toml(&no_scheme, Path::new(".")).unwrap().validate(&reg).is_err());
        let bad_gen = PLAN.replace("k = 5", "k = 1");
        assert!(ExperimentPlan::from_toml(&bad_gen, Path::new(".")).unwrap().validate(&reg).is_err());
        assert!(ExperimentPlan::from_toml("stage = \"f9\"", Path::new(".")).is_err());
    }

    #[test]
    fn cell_labels_sort_by_index() {
        let plan = ExperimentPlan::from_toml(PLAN, Path::new(".")).unwrap();
        let l = plan.cells[0].label(3);
        assert!(l.starts_with("c003 K=5 T=200 gen=var_chain"));
    }
}
