//! Real-data ingestion with edge-provenance cards, and audits of how method
//! rankings move when the ground-truth inclusion policy changes.
//!
//! Cards carry no lag, so every effective truth is static (`L = 1`) and
//! lagged scores are compared after a max-over-lags collapse. Rows with any
//! missing or non-numeric value are dropped, not imputed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bottleneck::ScoreMatrix;
use crate::error::{Error, Result};
use crate::evalstats::auroc_flat_lag;
use crate::synthgen::{LaggedAdjacency, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeClass {
    Causal,
    Definitional,
    Proxy,
    Soft,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 4] = [EdgeClass::Causal, EdgeClass::Definitional, EdgeClass::Proxy, EdgeClass::Soft];

    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeClass::Causal => "causal",
            EdgeClass::Definitional => "definitional",
            EdgeClass::Proxy => "proxy",
            EdgeClass::Soft => "soft",
        }
    }
}

impl std::str::FromStr for EdgeClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EdgeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| Error::Ingestion(format!("unknown edge class {s:?}")))
    }
}

/// Why a positive label exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceCard {
    pub source: String,
    pub target: String,
    pub class: EdgeClass,
    pub group: String,
    pub citation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Levels,
    LogReturns,
}

/// Dataset manifest (TOML). Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub date_column: String,
    pub variables: Vec<String>,
    #[serde(default)]
    pub transform: Transform,
    pub cards: PathBuf,
    /// Default location of the data CSV.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub expected_k: Option<usize>,
    #[serde(default)]
    pub expected_t: Option<usize>,
    #[serde(default = "default_real_lag")]
    pub max_lag: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_real_lag() -> usize {
    5
}

impl Manifest {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Manifest> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| Error::Ingestion(format!("manifest: {e}")))?;
        m.base_dir = base_dir.to_path_buf();
        if m.variables.len() < 2 {
            return Err(Error::Ingestion("manifest needs at least 2 variables".into()));
        }
        let unique: BTreeSet<&String> = m.variables.iter().collect();
        if unique.len() != m.variables.len() {
            return Err(Error::Ingestion("manifest variables must be unique".into()));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        Manifest::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_path(&self) -> Option<PathBuf> {
        self.data.as_ref().map(|d| self.resolve(d))
    }
}

pub fn read_cards<R: std::io::Read>(r: R) -> Result<Vec<ProvenanceCard>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let headers = rdr.headers()?.clone();
    let expected = ["source", "target", "class", "group", "citation"];
    if headers.len() != 5 || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::Ingestion(format!(
            "card file header must be source,target,class,group,citation; got {headers:?}"
        )));
    }
    let mut cards = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        cards.push(ProvenanceCard {
            source: f(0),
            target: f(1),
            class: f(2).parse()?,
            group: f(3),
            citation: f(4),
        });
    }
    Ok(cards)
}

#[derive(Debug, Clone)]
pub struct RealDataset {
    pub id: String,
    pub series: Series,
    pub cards: Vec<ProvenanceCard>,
    pub max_lag: usize,
    /// Ingestion notes (dropped rows, dimension mismatches).
    pub log: Vec<String>,
}

impl RealDataset {
    pub fn new(id: impl Into<String>, series: Series, cards: Vec<ProvenanceCard>, max_lag: usize) -> Result<Self> {
        let names = series.var_names();
        for c in &cards {
            for v in [&c.source, &c.target] {
                if !names.contains(v) {
                    return Err(Error::Ingestion(format!("card {}->{} references unknown variable {v}", c.source, c.target)));
                }
            }
            if c.source == c.target {
                return Err(Error::Ingestion(format!("card {}->{} is a self-loop", c.source, c.target)));
            }
        }
        Ok(Self {
            id: id.into(),
            series,
            cards,
            max_lag,
            log: Vec::new(),
        })
    }

    fn index(&self, name: &str) -> usize {
        self.series.var_names().iter().position(|v| v == name).expect("validated at construction")
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.cards.iter().map(|c| c.group.clone()).filter(|g| !g.is_empty()).collect()
    }
}

/// Reads the data CSV named by the manifest (or `path` when given).
pub fn load_csv_dataset(path: Option<&Path>, manifest: &Manifest) -> Result<RealDataset> {
    let data = match path {
        Some(p) => p.to_path_buf(),
        None => manifest
            .data_path()
            .ok_or_else(|| Error::Ingestion(format!("{}: no data path given", manifest.id)))?,
    };
    let file = std::fs::File::open(&data).map_err(|e| Error::Ingestion(format!("{}: {e}", data.display())))?;
    let cards_path = manifest.resolve(&manifest.cards);
    let cards_file =
        std::fs::File::open(&cards_path).map_err(|e| Error::Ingestion(format!("{}: {e}", cards_path.display())))?;
    let cards = read_cards(cards_file)?;
    load_from_readers(file, &cards, manifest)
}

/// Ingestion from an already-open CSV reader and parsed cards.
pub fn load_from_readers<R: std::io::Read>(data: R, cards: &[ProvenanceCard], manifest: &Manifest) -> Result<RealDataset> {
    let mut rdr = csv::Reader::from_reader(data);
    let headers = rdr.headers().map_err(|e| Error::Ingestion(format!("data CSV header: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Ingestion(format!("data CSV has no column {name:?}")))
    };
    col(&manifest.date_column)?;
    let idx: Vec<usize> = manifest.variables.iter().map(|v| col(v)).collect::<Result<_>>()?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingestion(format!("data CSV row {}: {e}", n + 1)))?;
        let parsed: Option<Vec<f64>> = idx
            .iter()
            .map(|&c| rec.get(c).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(r) => rows.push(r),
            None => dropped.push(n + 1),
        }
    }
    let mut log = Vec::new();
    if !dropped.is_empty() {
        log.push(format!("dropped {} incomplete row(s): {:?}", dropped.len(), dropped));
    }
    if manifest.transform == Transform::LogReturns {
        if rows.iter().flatten().any(|v| *v <= 0.0) {
            return Err(Error::Ingestion("log returns need strictly positive prices".into()));
        }
        rows = rows
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b.ln() - a.ln()).collect())
            .collect();
    }
    let k = manifest.variables.len();
    if rows.len() < 2 {
        return Err(Error::Ingestion(format!("{}: {} usable rows after alignment", manifest.id, rows.len())));
    }
    let values = DMatrix::from_fn(rows.len(), k, |t, j| rows[t][j]);
    if let Some(ek) = manifest.expected_k {
        if ek != k {
            log.push(format!("warning: expected K={ek}, found {k}"));
        }
    }
    if let Some(et) = manifest.expected_t {
        if et != rows.len() {
            log.push(format!("warning: expected T={et}, found {}", rows.len()));
        }
    }
    let series = Series::new(values, manifest.variables.clone(), 1.0)?;
    let mut ds = RealDataset::new(manifest.id.clone(), series, cards.to_vec(), manifest.max_lag)?;
    ds.log = log;
    Ok(ds)
}

/// Which cards count as positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionPolicy {
    pub classes: BTreeSet<EdgeClass>,
    pub excluded_groups: BTreeSet<String>,
}

impl Default for InclusionPolicy {
    /// Every class except definitional.
    fn default() -> Self {
        Self {
            classes: EdgeClass::ALL.into_iter().filter(|c| *c != EdgeClass::Definitional).collect(),
            excluded_groups: BTreeSet::new(),
        }
    }
}

impl InclusionPolicy {
    pub fn all() -> Self {
        Self {
            classes: EdgeClass::ALL.into_iter().collect(),
            excluded_groups: BTreeSet::new(),
        }
    }

    pub fn none() -> Self {
        Self {
            classes: BTreeSet::new(),
            excluded_groups: BTreeSet::new(),
        }
    }

    pub fn without_group(mut self, group: &str) -> Self {
        self.excluded_groups.insert(group.to_string());
        self
    }

    pub fn includes(&self, card: &ProvenanceCard) -> bool {
        self.classes.contains(&card.class) && !self.excluded_groups.contains(&card.group)
    }
}

/// Static adjacency whose positives are the included cards
/// (`effect = target`, `cause = source`).
pub fn effective_truth(ds: &RealDataset, policy: &InclusionPolicy) -> Result<LaggedAdjacency> {
    let k = ds.series.n_vars();
    let mut adj = LaggedAdjacency::empty(k, 1)?;
    for c in ds.cards.iter().filter(|c| policy.includes(c)) {
        adj.set(ds.index(&c.target), ds.index(&c.source), 1, true);
    }
    let (pos, neg) = adj.off_diagonal_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedTruth(format!(
            "{}: policy leaves {pos} positive and {neg} negative pairs",
            ds.id
        )));
    }
    Ok(adj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditVariant {
    pub name: String,
    pub positives: usize,
    /// Empty when skipped.
    pub aurocs: BTreeMap<String, f64>,
    /// Competition ranks, 1 = highest AUROC.
    pub ranks: BTreeMap<String, usize>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub dataset: String,
    pub cards: Vec<ProvenanceCard>,
    pub variants: Vec<AuditVariant>,
}

impl AuditReport {
    pub fn variant(&self, name: &str) -> Option<&AuditVariant> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Rank under `to` minus rank under `from`; positive means the method
    /// fell.
    pub fn rank_change(&self, method: &str, from: &str, to: &str) -> Option<i64> {
        let a = *self.variant(from)?.ranks.get(method)?;
        let b = *self.variant(to)?.ranks.get(method)?;
        Some(b as i64 - a as i64)
    }

    pub fn methods(&self) -> Vec<String> {
        let mut m: BTreeSet<String> = BTreeSet::new();
        for v in &self.variants {
            m.extend(v.aurocs.keys().cloned());
        }
        m.into_iter().collect()
    }

    /// Aligned-text tables: AUROC and rank per variant, then the card list.
    pub fn to_markdown(&self) -> String {
        let methods = self.methods();
        let mut out = String::new();
        let _ = writeln!(out, "## Ground-truth sensitivity: {}\n", self.dataset);
        let mut header = vec!["method".to_string()];
        for v in &self.variants {
            header.push(format!("{} ({} edges)", v.name, v.positives));
        }
        let mut rows = Vec::new();
        for m in &methods {
            let mut row = vec![m.clone()];
            for v in &self.variants {
                row.push(match (v.aurocs.get(m), v.ranks.get(m)) {
                    (Some(a), Some(r)) => format!("{a:.3} (#{r})"),
                    _ => "skipped".into(),
                });
            }
            rows.push(row);
        }
        out.push_str(&crate::harness::render_table(&header, &rows));
        let _ = writeln!(out, "\n### Cards\n");
        let header: Vec<String> = ["source", "target", "class", "group", "citation"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = self
            .cards
            .iter()
            .map(|c| vec![c.source.clone(), c.target.clone(), c.class.as_str().into(), c.group.clone(), c.citation.clone()])
            .collect();
        out.push_str(&crate::harness::render_table(&header, &rows));
        for v in self.variants.iter().filter(|v| v.skipped.is_some()) {
            let _ = writeln!(out, "\nvariant {} skipped: {}", v.name, v.skipped.as_deref().unwrap_or(""));
        }
        out
    }

    /// Rows `(variant, positives, method, auroc, rank)`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["variant", "positives", "method", "auroc", "rank"])?;
        for v in &self.variants {
            for (m, a) in &v.aurocs {
                wtr.write_record([
                    v.name.clone(),
                    v.positives.to_string(),
                    m.clone(),
                    format!("{a}"),
                    v.ranks[m].to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Competition ranking (1, 2, 2, 4), highest value first.
pub fn competition_ranks(values: &BTreeMap<String, f64>) -> BTreeMap<String, usize> {
    values
        .iter()
        .map(|(m, v)| (m.clone(), 1 + values.values().filter(|o| *o > v).count()))
        .collect()
}

/// Re-evaluates every method under the full card set, the default policy,
/// the default policy minus each group, and the full set minus each group.
pub fn sensitivity_audit(ds: &RealDataset, scores: &BTreeMap<String, ScoreMatrix>) -> Result<AuditReport> {
    if scores.len() < 2 {
        return crate::error::param("sensitivity audit needs at least two methods");
    }
    let mut policies = vec![
        ("full".to_string(), InclusionPolicy::all()),
        ("default".to_string(), InclusionPolicy::default()),
    ];
    for g in ds.groups() {
        policies.push((format!("default-minus-{g}"), InclusionPolicy::default().without_group(&g)));
        policies.push((format!("full-minus-{g}"), InclusionPolicy::all().without_group(&g)));
    }
    let mut variants = Vec::new();
    for (name, policy) in policies {
        let truth = match effective_truth(ds, &policy) {
            Ok(t) => t,
            Err(e) => {
                variants.push(AuditVariant {
                    name,
                    positives: 0,
                    aurocs: BTreeMap::new(),
                    ranks: BTreeMap::new(),
                    skipped: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut aurocs = BTreeMap::new();
        for (m, s) in scores {
            aurocs.insert(m.clone(), auroc_flat_lag(s, &truth)?);
        }
        variants.push(AuditVariant {
            name,
            positives: truth.off_diagonal_counts().0,
            ranks: competition_ranks(&aurocs),
            aurocs,
            skipped: None,
        });
    }
    Ok(AuditReport {
        dataset: ds.id.clone(),
        cards: ds.cards.clone(),
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(transform: Transform) -> Manifest {
        Manifest {
            id: "toy".into(),
            date_column: "date".into(),
            variables: vec!["a".into(), "b".into(), "c".into()],
            transform,
            cards: "cards.csv".into(),
            data: None,
            expected_k: Some(3),
            expected_t: None,
            max_lag: 2,
            base_dir: PathBuf::new(),
        }
    }

    fn cards() -> Vec<ProvenanceCard> {
        read_cards(
            "source,target,class,group,citation\n\
             a,b,causal,g1,first\n\
             b,c,definitional,g2,second\n\
             c,a,soft,g3,\"third, with comma\"\n"
                .as_bytes(),
        )
        .unwrap()
    }

    #[test]
    fn drops_incomplete_rows() {
        let mut csv = String::from("date,a,b,c\n");
        for t in 0..10 {
            if t == 6 {
                csv.push_str("d6,1.0,,3.0\n");
            } else {
                csv.push_str(&format!("d{t},{},{},{}\n", t, t * 2, t * 3));
            }
        }
        let ds = load_from_readers(csv.as_bytes(), &cards(), &manifest(Transform::Levels)).unwrap();
        assert_eq!(ds.series.len(), 9);
        assert!(ds.log[0].contains("dropped 1"));
        assert!(ds.log[0].contains("[7]"));
    }

    #[test]
    fn log_returns() {
        let csv = "date,a,b,c\nx,1,2,4\ny,2,2,8\nz,4,1,8\n";
        let ds = load_from_readers(csv.as_bytes(), &cards(), &manifest(Transform::LogReturns)).unwrap();
        assert_eq!(ds.series.len(), 2);
        let v = ds.series.values();
        assert!((v[(0, 0)] - 2f64.ln()).abs() < 1e-15);
        assert!((v[(1, 1)] - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(v[(1, 2)], 0.0);
    }

    #[test]
    fn ingestion_errors() {
        let m = manifest(Transform::Levels);
        assert!(load_from_readers("date,a,b\n1,2,3\n".as_bytes(), &cards(), &m).is_err());
        assert!(load_from_readers("date,a,b,c\n1,x,3,4\n".as_bytes(), &cards(), &m).is_err());
        assert!(read_cards("source,target,class,group,citation\na,b,weird,g,c\n".as_bytes()).is_err());
        let bad = vec![ProvenanceCard {
            source: "a".into(),
            target: "zz".into(),
            class: EdgeClass::Causal,
            group: "g".into(),
            citation: String::new(),
        }];
        let csv = "date,a,b,c\n1,1,2,3\n2,2,3,4\n3,5,1,2\n";
        assert!(load_from_readers(csv.as_bytes(), &bad, &m).is_err());
    }

    fn toy_dataset() -> RealDataset {
        let s = Series::from_matrix(DMatrix::from_fn(20, 3, |t, j| ((t * (j + 3)) % 7) as f64)).unwrap();
        let s = Series::new(s.values().clone(), vec!["a".into(), "b".into(), "c".into()], 1.0).unwrap();
        RealDataset::new("toy", s, cards(), 1).unwrap()
    }

    #[test]
    fn default_policy_excludes_definitional() {
        let ds = toy_dataset();
        let t = effective_truth(&ds, &InclusionPolicy::default()).unwrap();
        assert!(t.get(1, 0, 1));
        assert!(!t.get(2, 1, 1));
        assert!(t.get(0, 2, 1));
        assert_eq!(effective_truth(&ds, &InclusionPolicy::all()).unwrap().off_diagonal_counts().0, 3);
        assert!(matches!(effective_truth(&ds, &InclusionPolicy::none()), Err(Error::UndefinedTruth(_))));
    }

    #[test]
    fn audit_of_perfect_scores() {
        let ds = toy_dataset();
        let full = effective_truth(&ds, &InclusionPolicy::all()).unwrap();
        let mut scores = BTreeMap::new();
        scores.insert("perfect".to_string(), ScoreMatrix::from_fn(3, 1, |i, j, _| full.get(i, j, 1) as u8 as f64).unwrap());
        scores.insert("flat".to_string(), ScoreMatrix::from_fn(3, 1, |_, _, _| 1.0).unwrap());
        let r = sensitivity_audit(&ds, &scores).unwrap();
        for v in &r.variants {
            if v.skipped.is_none() {
                assert_eq!(v.aurocs["flat"], 0.5);
                assert_eq!(v.ranks["perfect"], 1);
            }
        }
        assert_eq!(r.variant("full").unwrap().aurocs["perfect"], 1.0);
        assert!(r.variant("default").unwrap().aurocs["perfect"] < 1.0);
        assert!(r.variant("full-minus-g1").unwrap().skipped.is_none());
        assert!(r.to_markdown().contains("third, with comma"));
    }

    #[test]
    fn ranks_share_ties() {
        let mut v = BTreeMap::new();
        v.insert("a".to_string(), 0.9);
        v.insert("b".to_string(), 0.8);
        v.insert("c".to_string(), 0.8);
        v.insert("d".to_string(), 0.1);
        let r = competition_ranks(&v);
        assert_eq!((r["a"], r["b"], r["c"], r["d"]), (1, 2, 2, 4));
    }
}
