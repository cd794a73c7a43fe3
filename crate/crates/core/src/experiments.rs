//! Configuration-driven experiments: a JSON config names one experiment tag
//! and its parameters; a run produces named checks plus a measurement table,
//! written out as a JSON report and CSV files.
//!
//! A check is *assertive* unless marked report-only; a run passes when every
//! assertive check passes. Floats in every output file carry 17 significant
//! digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fock::{
    self, band_deviation, coherent, h_a_operator, number_ops, quantize_integral, resolution_check,
    strong_limit_run, vacuum_expectation, z_ops, CutoffQuadrature, FockSpace,
};
use crate::loops::{self, estimate, gaussian_oracle, MeasureSpec, Potential, VarianceRule};
use crate::magnetic::{grid_strong_limit, landau_levels, Grid2D};
use crate::numerics::{
    c, expm, from_real_diag, max_abs, norm_fro, op_norm, subspace_gap, CMat, Tolerances, C64, I,
    ONE, ZERO,
};
use crate::relation::{
    compose, graph_limit_gaps, graph_of, ker_indef, make_nb, potapov_deviation, potapov_matrix,
    potapov_product, potapov_relation, projection_derivative, LinearRelation,
};
use crate::symplectic::{
    classify, lift_hat, make_structural, po_decompose, sample, sample_po_pair, HamiltonianSymbol,
    SetKind,
};

pub const TAGS: [&str; 8] = [
    "membership",
    "decompose",
    "potapov",
    "graph-limit",
    "fock-limit",
    "landau",
    "pathint",
    "calibrate",
];

// ---------------------------------------------------------------------------
// Parameters.

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedMatrix {
    pub label: String,
    pub n: usize,
    /// One of `J`, `Ical`, `W`, `identity`, `minus_nb`.
    #[serde(default)]
    pub builtin: Option<String>,
    /// Row-major `[re, im]` pairs.
    #[serde(default)]
    pub entries: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    pub members: Vec<String>,
    #[serde(default)]
    pub non_members: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledMembership {
    pub n: Vec<usize>,
    pub count: usize,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipativityParams {
    pub n: usize,
    pub count: usize,
    pub ts: Vec<f64>,
    pub scale: f64,
    /// Every other sample gets `push * Ical e_last e_last^T` added.
    pub push: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipParams {
    pub seed: u64,
    #[serde(default)]
    pub structural_n: Vec<usize>,
    #[serde(default)]
    pub matrices: Vec<NamedMatrix>,
    #[serde(default)]
    pub sampled: Option<SampledMembership>,
    #[serde(default)]
    pub dissipativity: Option<DissipativityParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeParams {
    pub seed: u64,
    pub n: Vec<usize>,
    pub samples: usize,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleParams {
    pub t_small: f64,
    pub t_large: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductParams {
    pub n: usize,
    pub pairs: usize,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionParams {
    pub n: Vec<usize>,
    pub samples: usize,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotapovParams {
    pub seed: u64,
    #[serde(default)]
    pub example: Option<ExampleParams>,
    #[serde(default)]
    pub product: Option<ProductParams>,
    #[serde(default)]
    pub contraction: Option<ContractionParams>,
}

fn default_gap_threshold() -> f64 {
    1e-6
}

fn default_burn_in() -> f64 {
    4.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeParams {
    pub samples: usize,
    pub eps: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitParams {
    pub samples: usize,
    pub nus: Vec<f64>,
    #[serde(default = "default_gap_threshold")]
    pub threshold: f64,
    #[serde(default = "default_burn_in")]
    pub monotone_from: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphLimitParams {
    pub seed: u64,
    pub m: usize,
    pub norm: f64,
    #[serde(default)]
    pub limit: Option<LimitParams>,
    #[serde(default)]
    pub derivative: Option<DerivativeParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HatParams {
    pub cutoff: usize,
    pub samples: usize,
    pub band: usize,
    pub norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrongParams {
    pub cutoff: usize,
    pub samples: usize,
    pub norm: f64,
    pub nus: Vec<f64>,
    pub coherent: f64,
    pub threshold: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntinormalParams {
    pub cutoff: usize,
    pub max_degree: usize,
    pub quadrature_cutoff: usize,
    pub quadrature_degree: usize,
    pub radius: f64,
    pub grid: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionParams {
    pub cutoff: usize,
    pub radius: f64,
    pub grid: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffParams {
    pub cutoff: usize,
    pub samples: usize,
    pub norm: f64,
    pub taus: Vec<f64>,
    pub radius: f64,
    pub grid: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FockLimitParams {
    pub seed: u64,
    #[serde(default)]
    pub hat: Option<HatParams>,
    #[serde(default)]
    pub strong: Option<StrongParams>,
    #[serde(default)]
    pub antinormal: Option<AntinormalParams>,
    #[serde(default)]
    pub resolution: Option<ResolutionParams>,
    #[serde(default)]
    pub cutoff: Option<CutoffParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridLimitParams {
    pub half_width: f64,
    pub spacing: f64,
    pub nus: Vec<f64>,
    pub t: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandauParams {
    pub seed: u64,
    pub half_width: f64,
    pub spacing: f64,
    pub lanczos_steps: usize,
    #[serde(default)]
    pub strong_limit: Option<GridLimitParams>,
}

fn default_refine_threshold() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathintParams {
    pub seed: u64,
    pub nus: Vec<f64>,
    pub steps: usize,
    pub refine_steps: usize,
    pub samples: usize,
    /// Random quadratic symbols with this norm; none when zero.
    pub quadratic_samples: usize,
    pub norm: f64,
    #[serde(default = "default_refine_threshold")]
    pub refine_threshold: f64,
    /// Report-only sweep over cutoff Hamiltonians.
    #[serde(default)]
    pub taus: Vec<f64>,
}

fn all_rules() -> Vec<VarianceRule> {
    VarianceRule::ALL.to_vec()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateParams {
    pub seed: u64,
    pub nus: Vec<f64>,
    #[serde(default = "all_rules")]
    pub rules: Vec<VarianceRule>,
    pub steps: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "experiment", content = "parameters", rename_all = "kebab-case")]
pub enum Experiment {
    Membership(MembershipParams),
    Decompose(DecomposeParams),
    Potapov(PotapovParams),
    GraphLimit(GraphLimitParams),
    FockLimit(FockLimitParams),
    Landau(LandauParams),
    Pathint(PathintParams),
    Calibrate(CalibrateParams),
}

impl Experiment {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Membership(_) => "membership",
            Self::Decompose(_) => "decompose",
            Self::Potapov(_) => "potapov",
            Self::GraphLimit(_) => "graph-limit",
            Self::FockLimit(_) => "fock-limit",
            Self::Landau(_) => "landau",
            Self::Pathint(_) => "pathint",
            Self::Calibrate(_) => "calibrate",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::Membership(p) => p.seed,
            Self::Decompose(p) => p.seed,
            Self::Potapov(p) => p.seed,
            Self::GraphLimit(p) => p.seed,
            Self::FockLimit(p) => p.seed,
            Self::Landau(p) => p.seed,
            Self::Pathint(p) => p.seed,
            Self::Calibrate(p) => p.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Self::Membership(p) => p.seed = seed,
            Self::Decompose(p) => p.seed = seed,
            Self::Potapov(p) => p.seed = seed,
            Self::GraphLimit(p) => p.seed = seed,
            Self::FockLimit(p) => p.seed = seed,
            Self::Landau(p) => p.seed = seed,
            Self::Pathint(p) => p.seed = seed,
            Self::Calibrate(p) => p.seed = seed,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Membership(p) => {
                for n in &p.structural_n {
                    positive_usize("structural_n", *n)?;
                }
                for mat in &p.matrices {
                    positive_usize("matrices.n", mat.n)?;
                    match (&mat.builtin, &mat.entries) {
                        (Some(b), None) => {
                            if !["J", "Ical", "W", "identity", "minus_nb"].contains(&b.as_str()) {
                                return schema(format!("matrices.builtin: unknown matrix {b:?}"));
                            }
                            if b == "minus_nb" && mat.n % 2 != 0 {
                                return schema("matrices: minus_nb needs an even n".into());
                            }
                        }
                        (None, Some(rows)) => {
                            if rows.len() != 2 * mat.n || rows.iter().any(|r| r.len() != 2 * mat.n)
                            {
                                return schema(format!(
                                    "matrices.entries for {:?} must be 2n x 2n",
                                    mat.label
                                ));
                            }
                        }
                        _ => {
                            return schema("matrices: give exactly one of builtin, entries".into())
                        }
                    }
                    for name in mat.members.iter().chain(&mat.non_members) {
                        SetKind::parse(name).map_err(|e| Error::Schema(e.to_string()))?;
                    }
                }
                if let Some(s) = &p.sampled {
                    nonempty("sampled.n", &s.n)?;
                    s.n.iter()
                        .try_for_each(|&n| positive_usize("sampled.n", n))?;
                    positive_usize("sampled.count", s.count)?;
                    positive_f64("sampled.scale", s.scale)?;
                }
                if let Some(d) = &p.dissipativity {
                    positive_usize("dissipativity.n", d.n)?;
                    positive_usize("dissipativity.count", d.count)?;
                    nonempty("dissipativity.ts", &d.ts)?;
                    d.ts.iter()
                        .try_for_each(|&t| positive_f64("dissipativity.ts", t))?;
                    positive_f64("dissipativity.scale", d.scale)?;
                    finite("dissipativity.push", d.push)?;
                }
                Ok(())
            }
            Self::Decompose(p) => {
                nonempty("n", &p.n)?;
                p.n.iter().try_for_each(|&n| positive_usize("n", n))?;
                positive_usize("samples", p.samples)?;
                positive_f64("scale", p.scale)
            }
            Self::Potapov(p) => {
                if let Some(e) = &p.example {
                    positive_f64("example.t_small", e.t_small)?;
                    positive_f64("example.t_large", e.t_large)?;
                }
                if let Some(q) = &p.product {
                    positive_usize("product.n", q.n)?;
                    positive_usize("product.pairs", q.pairs)?;
                    positive_f64("product.scale", q.scale)?;
                }
                if let Some(q) = &p.contraction {
                    nonempty("contraction.n", &q.n)?;
                    q.n.iter()
                        .try_for_each(|&n| positive_usize("contraction.n", n))?;
                    positive_usize("contraction.samples", q.samples)?;
                    positive_f64("contraction.scale", q.scale)?;
                }
                Ok(())
            }
            Self::GraphLimit(p) => {
                positive_usize("m", p.m)?;
                positive_f64("norm", p.norm)?;
                if let Some(l) = &p.limit {
                    positive_usize("limit.samples", l.samples)?;
                    nus_ok("limit.nus", &l.nus)?;
                    positive_f64("limit.threshold", l.threshold)?;
                }
                if let Some(d) = &p.derivative {
                    positive_usize("derivative.samples", d.samples)?;
                    positive_f64("derivative.eps", d.eps)?;
                    positive_f64("derivative.threshold", d.threshold)?;
                }
                Ok(())
            }
            Self::FockLimit(p) => {
                if let Some(h) = &p.hat {
                    cutoff_ok("hat.cutoff", h.cutoff)?;
                    positive_usize("hat.samples", h.samples)?;
                    positive_f64("hat.norm", h.norm)?;
                }
                if let Some(s) = &p.strong {
                    cutoff_ok("strong.cutoff", s.cutoff)?;
                    positive_usize("strong.samples", s.samples)?;
                    positive_f64("strong.norm", s.norm)?;
                    nus_ok("strong.nus", &s.nus)?;
                    positive_f64("strong.threshold", s.threshold)?;
                    finite("strong.coherent", s.coherent)?;
                }
                if let Some(a) = &p.antinormal {
                    cutoff_ok("antinormal.cutoff", a.cutoff)?;
                    cutoff_ok("antinormal.quadrature_cutoff", a.quadrature_cutoff)?;
                    positive_f64("antinormal.radius", a.radius)?;
                    positive_usize("antinormal.grid", a.grid)?;
                }
                if let Some(r) = &p.resolution {
                    cutoff_ok("resolution.cutoff", r.cutoff)?;
                    positive_f64("resolution.radius", r.radius)?;
                    positive_usize("resolution.grid", r.grid)?;
                }
                if let Some(q) = &p.cutoff {
                    cutoff_ok("cutoff.cutoff", q.cutoff)?;
                    positive_usize("cutoff.samples", q.samples)?;
                    positive_f64("cutoff.norm", q.norm)?;
                    nus_ok("cutoff.taus", &q.taus)?;
                    positive_f64("cutoff.radius", q.radius)?;
                    positive_usize("cutoff.grid", q.grid)?;
                    positive_f64("cutoff.threshold", q.threshold)?;
                }
                Ok(())
            }
            Self::Landau(p) => {
                Grid2D::new(p.half_width, p.spacing).map_err(|e| Error::Schema(e.to_string()))?;
                positive_usize("lanczos_steps", p.lanczos_steps)?;
                if let Some(g) = &p.strong_limit {
                    Grid2D::new(g.half_width, g.spacing)
                        .map_err(|e| Error::Schema(e.to_string()))?;
                    nus_ok("strong_limit.nus", &g.nus)?;
                    positive_f64("strong_limit.t", g.t)?;
                    finite("strong_limit.norm", g.norm)?;
                }
                Ok(())
            }
            Self::Pathint(p) => {
                nus_ok("nus", &p.nus)?;
                if p.steps < 16 || p.refine_steps < 16 {
                    return schema("steps and refine_steps must be at least 16".into());
                }
                if p.samples < 1000 {
                    return schema("samples must be at least 1000".into());
                }
                finite("norm", p.norm)?;
                p.taus.iter().try_for_each(|&t| positive_f64("taus", t))
            }
            Self::Calibrate(p) => {
                nus_ok("nus", &p.nus)?;
                if p.rules.is_empty() {
                    return schema("rules must not be empty".into());
                }
                if p.steps < 16 {
                    return schema("steps must be at least 16".into());
                }
                if p.samples < 1000 {
                    return schema("samples must be at least 1000".into());
                }
                Ok(())
            }
        }
    }
}

fn schema<T>(msg: String) -> Result<T> {
    Err(Error::Schema(msg))
}

fn positive_usize(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return schema(format!("{name} must be positive"));
    }
    Ok(())
}

fn finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return schema(format!("{name} must be finite"));
    }
    Ok(())
}

fn positive_f64(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return schema(format!("{name} must be positive and finite, got {v}"));
    }
    Ok(())
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return schema(format!("{name} must not be empty"));
    }
    Ok(())
}

fn nus_ok(name: &str, v: &[f64]) -> Result<()> {
    nonempty(name, v)?;
    v.iter().try_for_each(|&x| positive_f64(name, x))?;
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return schema(format!("{name} must be strictly increasing"));
    }
    Ok(())
}

fn cutoff_ok(name: &str, d: usize) -> Result<()> {
    if d < 3 {
        return schema(format!("{name} must be at least 3"));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(flatten)]
    pub experiment: Experiment,
    pub tolerances: Tolerances,
    pub output: Option<PathBuf>,
}

const TOP_LEVEL_KEYS: [&str; 5] = ["name", "experiment", "parameters", "tolerances", "output"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("invalid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Schema("config must be a JSON object".into()))?;
        if let Some(key) = obj.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return schema(format!("unknown top-level key {key:?}"));
        }
        let tag = obj
            .get("experiment")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Schema("missing string field \"experiment\"".into()))?;
        if !TAGS.contains(&tag) {
            return schema(format!(
                "unknown experiment {tag:?}; expected one of {TAGS:?}"
            ));
        }
        let params = obj
            .get("parameters")
            .cloned()
            .ok_or_else(|| Error::Schema("missing field \"parameters\"".into()))?;
        let experiment: Experiment = serde_json::from_value(serde_json::json!({
            "experiment": tag,
            "parameters": params,
        }))
        .map_err(|e| Error::Schema(format!("{tag}: {e}")))?;
        experiment.validate()?;
        let tolerances: Tolerances = match obj.get("tolerances") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Schema(format!("tolerances: {e}")))?,
            None => Tolerances::default(),
        };
        tolerances
            .validate()
            .map_err(|e| Error::Schema(e.to_string()))?;
        let name = match obj.get("name") {
            None => tag.to_string(),
            Some(Value::String(s)) if valid_name(s) => s.clone(),
            Some(other) => return schema(format!("name must be a plain file stem, got {other}")),
        };
        let output = match obj.get("output") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => return schema(format!("output must be a string, got {other}")),
        };
        Ok(Self {
            name,
            experiment,
            tolerances,
            output,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch))
}

// ---------------------------------------------------------------------------
// Checks and tables.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
}

impl Comparison {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::AtMost => "<=",
            Self::Below => "<",
            Self::AtLeast => ">=",
        }
    }

    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Self::AtMost => value <= threshold,
            Self::Below => value < threshold,
            Self::AtLeast => value >= threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub pass: bool,
    pub assertive: bool,
    pub note: String,
}

impl CheckRecord {
    pub fn new(
        name: impl Into<String>,
        value: f64,
        comparison: Comparison,
        threshold: f64,
    ) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            comparison,
            pass: comparison.holds(value, threshold),
            assertive: true,
            note: String::new(),
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Comparison::AtMost, threshold)
    }

    pub fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Comparison::Below, threshold)
    }

    pub fn report_only(mut self) -> Self {
        self.assertive = false;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Float(f64),
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Text(t) => s.serialize_str(t),
            Cell::Int(i) => s.serialize_i64(*i),
            Cell::Float(f) => s.serialize_f64(*f),
        }
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(t) => t.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => fmt17(*f),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub name: String,
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    pub parallel: bool,
    pub config: Value,
    pub checks: Vec<CheckRecord>,
    pub measurements: Table,
    pub passed: bool,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn failing(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| c.assertive && !c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Ctx {
    checks: Vec<CheckRecord>,
    table: Table,
    tol: Tolerances,
}

impl Ctx {
    fn check(&mut self, rec: CheckRecord) {
        self.checks.push(rec);
    }

    /// Runs a section; an error becomes a failed check named after it.
    fn section(&mut self, name: &str, f: impl FnOnce(&mut Ctx) -> Result<()>) {
        if let Err(e) = f(self) {
            self.checks.push(
                CheckRecord::at_most(format!("{name}.error"), f64::NAN, 0.0)
                    .with_note(e.to_string()),
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Runner.

pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let (columns, body): (&[&str], fn(&Experiment, &mut Ctx)) = match &config.experiment {
        Experiment::Membership(_) => (
            &["item", "set", "residual", "threshold", "holds"],
            run_membership,
        ),
        Experiment::Decompose(_) => (
            &[
                "sample",
                "n",
                "reconstruction",
                "x_error",
                "h_residual",
                "x_residual",
            ],
            run_decompose,
        ),
        Experiment::Potapov(_) => (&["section", "sample", "n", "value"], run_potapov),
        Experiment::GraphLimit(_) => (&["section", "sample", "nu", "value"], run_graph_limit),
        Experiment::FockLimit(_) => (
            &[
                "section",
                "sample",
                "item",
                "parameter",
                "value",
                "value_im",
            ],
            run_fock_limit,
        ),
        Experiment::Landau(_) => (
            &["quantity", "sample", "nu", "value", "value_im"],
            run_landau,
        ),
        Experiment::Pathint(_) => (
            &[
                "potential",
                "nu",
                "tau",
                "steps",
                "mean_re",
                "mean_im",
                "stderr",
                "oracle_re",
                "oracle_im",
            ],
            run_pathint,
        ),
        Experiment::Calibrate(_) => (
            &[
                "rule",
                "nu",
                "variance",
                "value_re",
                "value_im",
                "continuum",
                "closed_form_gap",
                "mc_re",
                "mc_im",
                "mc_stderr",
            ],
            run_calibrate,
        ),
    };
    let mut ctx = Ctx {
        checks: Vec::new(),
        table: Table::new(columns),
        tol: config.tolerances,
    };
    body(&config.experiment, &mut ctx);
    let passed = ctx.checks.iter().all(|c| !c.assertive || c.pass);
    Ok(RunReport {
        name: config.name.clone(),
        experiment: config.experiment.tag().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.experiment.seed(),
        parallel: crate::par::is_parallel(),
        config: serde_json::to_value(config)?,
        checks: ctx.checks,
        measurements: ctx.table,
        passed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// ---- membership ------------------------------------------------------------

fn builtin_matrix(name: &str, n: usize) -> Result<CMat> {
    let s = make_structural(n)?;
    Ok(match name {
        "J" => s.j,
        "Ical" => s.ical,
        "W" => s.w,
        "identity" => CMat::identity(2 * n, 2 * n),
        "minus_nb" => -make_nb(n / 2),
        other => return Err(Error::UnknownTag(other.to_string())),
    })
}

fn run_membership(exp: &Experiment, ctx: &mut Ctx) {
    let Experiment::Membership(p) = exp else {
        unreachable!()
    };
    if !p.structural_n.is_empty() {
        ctx.section("structural", |ctx| {
            let (mut jc_dev, mut ical_dev) = (0.0f64, 0.0f64);
            for &n in &p.structural_n {
                let s = make_structural(n)?;
                let jc = &s.w * &s.j * &s.w_inv;
                let mut want = vec![-I; n];
                want.extend(std::iter::repeat_n(I, n));
                let want = CMat::from_diagonal(&crate::numerics::CVec::from_vec(want));
                let d1 = max_abs(&(&jc - want));
                let d2 = max_abs(&(&s.ical - &jc * (-I)));
                jc_dev = jc_dev.max(d1);
                ical_dev = ical_dev.max(d2);
                ctx.table.push(vec![
                    format!("n={n}").into(),
                    "jc_diag".into(),
                    d1.into(),
                    1e-14.into(),
                    Cell::Int((d1 <= 1e-14) as i64),
                ]);
                ctx.table.push(vec![
                    format!("n={n}").into(),
                    "ical_minus_i_jc".into(),
                    d2.into(),
                    1e-14.into(),
                    Cell::Int((d2 <= 1e-14) as i64),
                ]);
            }
            ctx.check(CheckRecord::at_most("structural.jc", jc_dev, 1e-14));
            ctx.check(CheckRecord::at_most("structural.ical", ical_dev, 1e-14));
            Ok(())
        });
    }
    for mat in &p.matrices {
        ctx.section(&format!("matrix.{}", mat.label), |ctx| {
            let m = match (&mat.builtin, &mat.entries) {
                (Some(b), _) => builtin_matrix(b, mat.n)?,
                (_, Some(rows)) => loops::rows_to_matrix(rows)?,
                _ => unreachable!("validated"),
            };
            let s = make_structural(mat.n)?;
            let rep = classify(&m, &s, &ctx.tol)?;
            for (kind, chk) in rep.entries() {
                ctx.table.push(vec![
                    mat.label.clone().into(),
                    kind.name().into(),
                    chk.residual.into(),
                    chk.threshold.into(),
                    Cell::Int(chk.holds as i64),
                ]);
            }
            for name in &mat.members {
                let chk = rep.get(SetKind::parse(name)?);
                ctx.check(CheckRecord::at_most(
                    format!("matrix.{}.in.{name}", mat.label),
                    chk.residual,
                    chk.threshold,
                ));
            }
            for name in &mat.non_members {
                let chk = rep.get(SetKind::parse(name)?);
                ctx.check(CheckRecord::new(
                    format!("matrix.{}.not_in.{name}", mat.label),
                    chk.residual,
                    Comparison::AtLeast,
                    chk.threshold,
                ));
            }
            Ok(())
        });
    }
    if let Some(sp) = &p.sampled {
        ctx.section("sampled", |ctx| {
            let mut failures = 0usize;
            for &n in &sp.n {
                let s = make_structural(n)?;
                for kind in SetKind::ALL {
                    for k in 0..sp.count {
                        let seed = p.seed.wrapping_add((n * 100_000 + k) as u64);
                        let m = sample(kind, n, sp.scale, seed)?;
                        let chk = classify(&m, &s, &ctx.tol)?.get(kind);
                        if !chk.holds {
                            failures += 1;
                            ctx.table.push(vec![
                                format!("{kind}#{k} n={n}").into(),
                                kind.name().into(),
                                chk.residual.into(),
                                chk.threshold.into(),
                                Cell::Int(0),
                            ]);
                        }
                    }
                }
            }
            ctx.check(CheckRecord::at_most(
                "sampled.self_membership_failures",
                failures as f64,
                0.0,
            ));
            Ok(())
        });
    }
    if let Some(d) = &p.dissipativity {
        ctx.section("dissipativity", |ctx| {
            let s = make_structural(d.n)?;
            let mut push = vec![0.0; 2 * d.n];
            push[2 * d.n - 1] = d.push;
            let push = &s.ical * from_real_diag(&push);
            let labelled: Vec<Result<(bool, bool, f64)>> = crate::par::map_range(d.count, |k| {
                let mut x = sample(SetKind::Diss, d.n, d.scale, p.seed.wrapping_add(k as u64))?;
                if k % 2 == 1 {
                    x += &push;
                }
                let rep = classify(&x, &s, &ctx.tol)?;
                let flow = d.ts.iter().try_fold(true, |acc, &t| -> Result<bool> {
                    let g = expm(&(&x * c(t, 0.0)))?;
                    Ok(acc && classify(&g, &s, &ctx.tol)?.gamma_u.holds)
                })?;
                Ok((rep.diss.holds, flow, rep.diss.residual))
            });
            let mut disagreements = 0usize;
            let mut dissipative = 0usize;
            for (k, row) in labelled.into_iter().enumerate() {
                let (cone, flow, resid) = row?;
                disagreements += (cone != flow) as usize;
                dissipative += cone as usize;
                ctx.table.push(vec![
                    format!("diss#{k}").into(),
                    "cone".into(),
                    resid.into(),
                    ctx.tol.psd_tol.into(),
                    Cell::Int(cone as i64),
                ]);
                ctx.table.push(vec![
                    format!("diss#{k}").into(),
                    "flow".into(),
                    f64::NAN.into(),
                    ctx.tol.psd_tol.into(),
                    Cell::Int(flow as i64),
                ]);
            }
            ctx.check(CheckRecord::at_most(
                "dissipativity.disagreements",
                disagreements as f64,
                0.0,
            ));
            ctx.check(
                CheckRecord::new(
                    "dissipativity.dissipative_count",
                    dissipative as f64,
                    Comparison::AtLeast,
                    0.0,
                )
                .report_only(),
            );
            Ok(())
        });
    }
}

// ---- decompose ---------------------------------------------------------------

fn run_decompose(exp: &Experiment, ctx: &mut Ctx) {
    let Experiment::Decompose(p) = exp else {
        unreachable!()
    };
    ctx.section("decompose", |ctx| {
        let tol = ctx.tol;
        // (n, reconstruction, generator error, h residual, X residual, certified)
        type Row = (usize, f64, f64, f64, f64, bool);
        let rows: Vec<Result<Row>> = crate::par::map_range(p.samples, |k| {
            let n = p.n[k % p.n.len()];
            let s = make_structural(n)?;
            let (h0, x0) = sample_po_pair(n, p.scale, p.seed.wrapping_add(k as u64))?;
            let g = &h0 * expm(&x0)?;
            let dec = po_decompose(&g, &s, &tol)?;
            let h_res = classify(&dec.h, &s, &tol)?.get(SetKind::SpcGroup);
            let x_res = classify(&dec.x, &s, &tol)?.get(SetKind::SdissSpc);
            Ok((
                n,
                dec.reconstruction,
                max_abs(&(&dec.x - &x0)),
                h_res.residual,
                x_res.residual,
                h_res.holds && x_res.holds,
            ))
        });
        let (mut recon, mut xerr, mut failures) = (0.0f64, 0.0f64, 0.0f64);
        for (k, row) in rows.into_iter().enumerate() {
            let (n, r, e, h_res, x_res, certified) = row?;
            recon = recon.max(r);
            xerr = xerr.max(e);
            failures += (!certified) as usize as f64;
            ctx.table.push(vec![
                k.into(),
                n.into(),
                r.into(),
                e.into(),
                h_res.into(),
                x_res.into(),
            ]);
        }
        ctx.check(CheckRecord::below("decompose.reconstruction", recon, 1e-9));
        ctx.check(CheckRecord::at_most(
            "decompose.membership_failures",
            failures,
            0.0,
        ));
        ctx.check(CheckRecord::below("decompose.generator_error", xerr, 1e-7));
        Ok(())
    });
}

// ---- potapov -------------------------------------------------------------------

fn frame_from_columns(rows: usize, cols: &[&[usize]]) -> CMat {
    let mut m = CMat::zeros(rows, cols.len());
    for (j, idx) in cols.iter().enumerate() {
        for &i in idx.iter() {
            m[(i, j)] = ONE;
        }
    }
    let nrm: Vec<f64> = (0..cols.len()).map(|j| m.column(j).norm()).collect();
    for (j, v) in nrm.into_iter().enumerate() {
        m.column_mut(j).unscale_mut(v);
    }
    m
}

fn run_potapov(exp: &Experiment, ctx: &mut Ctx) {
    let Experiment::Potapov(p) = exp else {
        unreachable!()
    };
    if let Some(e) = &p.example {
        ctx.section("example", |ctx| {
            let gen = |t: f64| from_real_diag(&[t.exp(), (-t).exp()]);
            let r = potapov_matrix(&gen(e.t_small), &ctx.tol)?;
            let et = c((-e.t_small).exp(), 0.0);
            let want = CMat::from_row_slice(2, 2, &[ZERO, et, et, ZERO]);
            let dev = max_abs(&(&r.r - want));
            ctx.table.push(vec![
                "potapov_small_t".into(),
                0usize.into(),
                1usize.into(),
                dev.into(),
            ]);
            ctx.check(CheckRecord::at_most("example.potapov", dev, 1e-12));

            let graph = graph_of(&gen(e.t_large))?;
            // coordinates (v_-, v_+, w_-, w_+)
            let stated = LinearRelation {
                n: 1,
                frame: frame_from_columns(4, &[&[0], &[3]]),
            };
            let actual = LinearRelation {
                n: 1,
                frame: frame_from_columns(4, &[&[1], &[2]]),
            };
            let gap_stated = graph.gap(&stated)?;
            let gap_actual = graph.gap(&actual)?;
            ctx.table.push(vec![
                "gap_to_stated_limit".into(),
                0usize.into(),
                1usize.into(),
                gap_stated.into(),
            ]);
            ctx.table.push(vec![
                "gap_to_computed_limit".into(),
                0usize.into(),
                1usize.into(),
                gap_actual.into(),
            ]);
            ctx.check(
                CheckRecord::below("example.limit_gap", gap_stated, 1e-6).with_note(
                    "stated limit {(z,0)} ⊕ {(0,z')}; graph(exp(tX)) tends to {(0,z)} ⊕ {(z',0)}",
                ),
            );
            ctx.check(
                CheckRecord::below("example.limit_gap_computed", gap_actual, 1e-6).report_only(),
            );

            // ker / indef of the large-t graph, resolved at the gap tolerance
            let coarse = Tolerances {
                rank_tol: 1e-6,
                ..ctx.tol
            };
            let (ker, indef) = ker_indef(&graph, &coarse);
            let e1 = frame_from_columns(2, &[&[0]]);
            let e2 = frame_from_columns(2, &[&[1]]);
            let ker_gap = if ker.ncols() == 1 {
                subspace_gap(&ker, &e1)?
            } else {
                1.0
            };
            let indef_gap = if indef.ncols() == 1 {
                subspace_gap(&indef, &e2)?
            } else {
                1.0
            };
            ctx.table.push(vec![
                "ker_gap_to_(z,0)".into(),
                0usize.into(),
                1usize.into(),
                ker_gap.into(),
            ]);
            ctx.table.push(vec![
                "indef_gap_to_(0,z)".into(),
                0usize.into(),
                1usize.into(),
                indef_gap.into(),
            ]);
            ctx.check(CheckRecord::below("example.ker", ker_gap, 1e-6));
            ctx.check(CheckRecord::below("example.indef", indef_gap, 1e-6));
            let swapped = if ker.ncols() == 1 && indef.ncols() == 1 {
                subspace_gap(&ker, &e2)?.max(subspace_gap(&indef, &e1)?)
            } else {
                1.0
            };
            ctx.check(CheckRecord::below("example.ker_indef_swapped", swapped, 1e-6).report_only());
            Ok(())
        });
    }
    if let Some(q) = &p.product {
        ctx.section("product", |ctx| {
            let tol = ctx.tol;
            let devs: Vec<Result<f64>> = crate::par::map_range(q.pairs, |k| {
                let base = p.seed.wrapping_add(2 * k as u64);
                let g1 = sample(SetKind::GammaU, q.n, q.scale, base)?;
                let g2 = sample(SetKind::GammaU, q.n, q.scale, base + 1)?;
                let (p1, p2) = (graph_of(&g1)?, graph_of(&g2)?);
                let formula = potapov_product(
                    &potapov_relation(&p1, &tol)?,
                    &potapov_relation(&p2, &tol)?,
                    &tol,
                )?;
                let direct = potapov_relation(&compose(&p1, &p2, &tol)?, &tol)?;
                Ok(potapov_deviation(&formula, &direct))
            });
            let mut worst = 0.0f64;
            for (k, d) in devs.into_iter().enumerate() {
                let d = d?;
                worst = worst.max(d);
                ctx.table.push(vec![
                    "product_deviation".into(),
                    k.into(),
                    q.n.into(),
                    d.into(),
                ]);
            }
            ctx.check(CheckRecord::below("product.max_deviation", worst, 1e-9));
            Ok(())
        });
    }
    if let Some(q) = &p.contraction {
        ctx.section("contraction", |ctx| {
            let tol = ctx.tol;
            let mut worst = 0.0f64;
            for &n in &q.n {
                let norms: Vec<Result<f64>> = crate::par::map_range(q.samples, |k| {
                    let g = sample(
                        SetKind::GammaU,
                        n,
                        q.scale,
                        p.seed.wrapping_add((n * 1_000_000 + k) as u64),
                    )?;
                    Ok(potapov_matrix(&g, &tol)?.norm())
                });
                for (k, v) in norms.into_iter().enumerate() {
                    let v = v?;
                    worst = worst.max(v);
                    ctx.table
                        .push(vec!["potapov_norm".into(), k.into(), n.into(), v.into()]);
                }
            }
            ctx.check(CheckRecord::at_most(
                "contraction.max_norm",
                worst,
                1.0 + 1e-10,
            ));
            Ok(())
        });
    }
}

// ---- graph limit -----------------------------------------------------------------

/// Riesz projector `(1/2πi) ∮ (z - M)^{-1} dz` over `|z| = 1/2` (256-point
/// trapezoid), used as an independent route to the spectral projector.
pub fn cluster_projector(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    let pts = 256;
    let mut acc = CMat::zeros(n, n);
    for k in 0..pts {
        let th = std::f64::consts::TAU * k as f64 / pts as f64;
        let z = C64::from_polar(0.5, th);
        let res = crate::numerics::inverse(&(CMat::identity(n, n) * z - m), "cluster_projector")?;
        acc += res * (z / pts as f64);
    }
    Ok(acc)
}

fn run_graph_limit(exp: &Experiment, ctx: &mut Ctx) {
    let Experiment::GraphLimit(p) = exp else {
        unreachable!()
    };
    if let Some(l) = &p.limit {
        ctx.section("limit", |ctx| {
            let tol = ctx.tol;
            let gaps: Vec<Result<Vec<f64>>> = crate::par::map_range(l.samples, |k| {
                let a = sample(
                    SetKind::SpcLie,
                    2 * p.m,
                    p.norm,
                    p.seed.wrapping_add(k as u64),
                )?;
                graph_limit_gaps(&a, p.m, &l.nus, &tol)
            });
            let mut final_gap = 0.0f64;
            let mut violations = 0usize;
            for (k, row) in gaps.into_iter().enumerate() {
                let row = row?;
                for (nu, g) in l.nus.iter().zip(&row) {
                    ctx.table
                        .push(vec!["gap".into(), k.into(), (*nu).into(), (*g).into()]);
                }
                final_gap = final_gap.max(*row.last().expect("non-empty nus"));
                violations += l
                    .nus
                    .iter()
                    .zip(row.windows(2))
                    .filter(|(nu, w)| **nu >= l.monotone_from && w[1] > w[0] + 1e-12)
                    .count();
            }
            ctx.check(CheckRecord::below(
                "limit.final_gap",
                final_gap,
                l.threshold,
            ));
            ctx.check(CheckRecord::at_most(
                "limit.monotone_violations",
                violations as f64,
                0.0,
            ));
            Ok(())
        });
    }
    if let Some(d) = &p.derivative {
        ctx.section("derivative", |ctx| {
            let nb = make_nb(p.m);
            let devs: Vec<Result<f64>> = crate::par::map_range(d.samples, |k| {
                let a = sample(
                    SetKind::SpcLie,
                    2 * p.m,
                    p.norm,
                    p.seed.wrapping_add(1_000_000 + k as u64),
                )?;
                let plus = cluster_projector(&(&a * c(d.eps, 0.0) - &nb))?;
                let minus = cluster_projector(&(&a * c(-d.eps, 0.0) - &nb))?;
                let fd = (plus - minus) * c(0.5 / d.eps, 0.0);
                let exact = projection_derivative(&a, p.m)?;
                Ok(norm_fro(&(&fd - &exact)) / norm_fro(&exact).max(f64::MIN_POSITIVE))
            });
            let mut worst = 0.0f64;
            for (k, v) in devs.into_iter().enumerate() {
                let v = v?;
                worst = worst.max(v);
                ctx.table.push(vec![
                    "derivative_rel_dev".into(),
                    k.into(),
                    d.eps.into(),
                    v.into(),
                ]);
            }
            ctx.check(CheckRecord::below(
                "derivative.max_rel_dev",
                worst,
                d.threshold,
            ));
            Ok(())
        });
    }
}

// ---- Fock side -------------------------------------------------------------------

fn power(m: &CMat, k: usize) -> CMat {
    (0..k).fold(CMat::identity(m.nrows(), m.ncols()), |acc, _| acc * m)
}

fn run_fock_limit(exp: &Experiment, ctx: &mut Ctx) {
    let Experiment::FockLimit(p) = exp else {
        unreachable!()
    };
    if let Some(h) = &p.hat {
        ctx.section("hat", |ctx| {
            let space = FockSpace::new(1, h.cutoff)?;
            let band = space.band(h.band);
            let tol = ctx.tol;
            let devs: Vec<Result<f64>> = crate::par::map_range(h.samples, |k| {
                let sym = HamiltonianSymbol::random(1, h.norm, p.seed.wrapping_add(k as u64))?;
                let lhs = h_a_operator(&space, &sym)?.mat;
                let rhs = fock::drho(&space, &lift_hat(&sym)?, &tol)?.mat;
                Ok(op_norm(&((lhs - rhs) * &band)))
            });
            let mut worst = 0.0f64;
            for (k, v) in devs.into_iter().enumerate() {
                let v = v?;
                worst = worst.max(v);
                ctx.table.push(vec![
                    "hat".into(),
                    k.into(),
                    "h_minus_drho_lift".into(),
                    (h.band as f64).into(),
                    v.into(),
                    0.0.into(),
                ]);
            }
            ctx.check(CheckRecord::below("hat.max_deviation", worst, 1e-10));
            Ok(())
        });
    }
    if let Some(s) = &p.strong {
        ctx.section("strong", |ctx| {
            let space = FockSpace::new(1, s.cutoff)?;
            let mut excited = space.vacuum();
            excited[0] = ZERO;
            excited[space.a_index(&[1])] = ONE;
            let vectors = [
                ("vacuum", space.vacuum()),
                ("coherent", coherent(&space, &[c(s.coherent, 0.0)])?.vec),
                ("one_excitation", excited),
            ];
            let vecs: Vec<_> = vectors.iter().map(|(_, v)| v.clone()).collect();
            let (mut final_max, mut ray_final, mut violations) = (0.0f64, 0.0f64, 0usize);
            for k in 0..s.samples {
                let sym = HamiltonianSymbol::random(1, s.norm, p.seed.wrapping_add(k as u64))?;
                let table = strong_limit_run(&space, &sym, &s.nus, &vecs)?;
                for (vi, (label, _)) in vectors.iter().enumerate() {
                    for (i, nu) in s.nus.iter().enumerate() {
                        ctx.table.push(vec![
                            "strong".into(),
                            k.into(),
                            (*label).into(),
                            (*nu).into(),
                            table.residuals[vi][i].into(),
                            table.ray_residuals[vi][i].into(),
                        ]);
                    }
                    ray_final = ray_final.max(*table.ray_residuals[vi].last().expect("non-empty"));
                }
                final_max = final_max.max(table.final_max());
                for row in &table.residuals {
                    violations += s
                        .nus
                        .iter()
                        .zip(row.windows(2))
                        .filter(|(nu, w)| **nu >= s.burn_in && w[1] > w[0] + 1e-12)
                        .count();
                }
            }
            ctx.check(CheckRecord::below(
                "strong.final_residual",
                final_max,
                s.threshold,
            ));
            ctx.check(CheckRecord::at_most(
                "strong.monotone_violations",
                violations as f64,
                0.0,
            ));
            ctx.check(
                CheckRecord::below("strong.final_ray_residual", ray_final, s.threshold)
                    .report_only(),
            );
            Ok(())
        });
    }
    if let Some(a) = &p.antinormal {
        ctx.section("antinormal", |ctx| {
            let space = FockSpace::new(1, a.cutoff)?;
            let z = z_ops(&space)?[0].mat.clone();
            let zs = z.adjoint();
            let e = number_ops(&space).e_b.mat;
            let (ann, cre) = (
                fock::annihilator(&space, 0)?.mat,
                fock::creator(&space, 0)?.mat,
            );
            let band = space.safe_band();
            let (mut literal, mut reversed) = (0.0f64, 0.0f64);
            for deg in 0..=a.max_degree {
                for q in 0..=deg {
                    let pp = deg - q;
                    let lhs = &e * power(&z, pp) * power(&zs, q) * &e;
                    let stated = power(&ann, pp) * power(&cre, q) * &e;
                    let swapped = power(&ann, q) * power(&cre, pp) * &e;
                    let (d1, d2) = (
                        band_deviation(&lhs, &stated, &band),
                        band_deviation(&lhs, &swapped, &band),
                    );
                    literal = literal.max(d1);
                    reversed = reversed.max(d2);
                    ctx.table.push(vec![
                        "z_word".into(),
                        0usize.into(),
                        format!("p={pp},q={q}").into(),
                        0.0.into(),
                        d1.into(),
                        d2.into(),
                    ]);
                }
            }
            ctx.check(
                CheckRecord::at_most("antinormal.z_words", literal, 1e-12)
                    .with_note("compares E_b Z^p Z*^q E_b with a^p a*^q E_b"),
            );
            ctx.check(
                CheckRecord::at_most("antinormal.z_words_reversed", reversed, 1e-12)
                    .report_only()
                    .with_note("compares E_b Z^p Z*^q E_b with a^q a*^p E_b"),
            );

            let qs = FockSpace::new(1, a.quadrature_cutoff)?;
            let zq = z_ops(&qs)?[0].mat.clone();
            let zqs = zq.adjoint();
            let eq = number_ops(&qs).e_b.mat;
            let low = qs.band(3);
            let (mut stated_q, mut conj_q) = (0.0f64, 0.0f64);
            for deg in 0..=a.quadrature_degree {
                for q in 0..=deg {
                    let pp = deg - q;
                    let word = &eq * power(&zq, pp) * power(&zqs, q) * &eq;
                    let f = move |w: C64| w.powu(pp as u32) * w.conj().powu(q as u32);
                    let g = move |w: C64| w.conj().powu(pp as u32) * w.powu(q as u32);
                    let qf = quantize_integral(&qs, &f, a.radius, a.grid)?.mat;
                    let qg = quantize_integral(&qs, &g, a.radius, a.grid)?.mat;
                    let d1 = op_norm(&(&low * (&qf - &word) * &low));
                    let d2 = op_norm(&(&low * (&qg - &word) * &low));
                    stated_q = stated_q.max(d1);
                    conj_q = conj_q.max(d2);
                    ctx.table.push(vec![
                        "quadrature".into(),
                        0usize.into(),
                        format!("p={pp},q={q}").into(),
                        a.radius.into(),
                        d1.into(),
                        d2.into(),
                    ]);
                }
            }
            ctx.check(
                CheckRecord::at_most("antinormal.quadrature", stated_q, 1e-3)
                    .with_note("compares Q(z^p conj(z)^q) with E_b Z^p Z*^q E_b"),
            );
            ctx.check(
                CheckRecord::at_most("antinormal.quadrature_conjugated", conj_q, 1e-3)
                    .report_only()
                    .with_note("compares Q(conj(z)^p z^q) with E_b Z^p Z*^q E_b"),
            );
            Ok(())
        });
    }
    if let Some(r) = &p.resolution {
        ctx.section("resolution", |ctx| {
            let space = FockSpace::new(1, r.cutoff)?;
            let resid = resolution_check(&space, r.radius, r.grid)?;
            let one = quantize_integral(&space, &|_| ONE, r.radius, r.grid)?.mat;
            let e = number_ops(&space).e_b.mat;
            let low = space.band(3);
            let q_dev = op_norm(&(&low * (one - e) * &low));
            ctx.table.push(vec![
                "resolution".into(),
                0usize.into(),
                "identity_block".into(),
                r.radius.into(),
                resid.into(),
                0.0.into(),
            ]);
            ctx.table.push(vec![
                "resolution".into(),
                0usize.into(),
                "quantize_one".into(),
                r.radius.into(),
                q_dev.into(),
                0.0.into(),
            ]);
            ctx.check(CheckRecord::below("resolution.residual", resid, 1e-3));
            ctx.check(CheckRecord::below("resolution.quantize_one", q_dev, 1e-3));
            Ok(())
        });
    }
    if let Some(q) = &p.cutoff {
        ctx.section("cutoff", |ctx| {
            let space = FockSpace::new(1, q.cutoff)?;
            let (mut final_dev, mut max_modulus) = (0.0f64, 0.0f64);
            for k in 0..q.samples {
                let sym = HamiltonianSymbol::random(1, q.norm, p.seed.wrapping_add(k as u64))?;
                let uncut = vacuum_expectation(&space, &sym, None)?;
                max_modulus = max_modulus.max(uncut.norm());
                ctx.table.push(vec![
                    "cutoff".into(),
                    k.into(),
                    "uncut".into(),
                    f64::INFINITY.into(),
                    uncut.re.into(),
                    uncut.im.into(),
                ]);
                let values: Vec<Result<C64>> = crate::par::map_slice(&q.taus, |&tau| {
                    vacuum_expectation(
                        &space,
                        &sym,
                        Some(CutoffQuadrature {
                            tau,
                            radius: q.radius,
                            grid: q.grid,
                        }),
                    )
                });
                for (tau, v) in q.taus.iter().zip(values) {
                    let v = v?;
                    max_modulus = max_modulus.max(v.norm());
                    ctx.table.push(vec![
                        "cutoff".into(),
                        k.into(),
                        "tau".into(),
                        (*tau).into(),
                        v.re.into(),
                        v.im.into(),
                    ]);
                    if *tau == *q.taus.last().expect("non-empty") {
                        final_dev = final_dev.max((v - uncut).norm());
                    }
                }
            }
            ctx.check(CheckRecord::below(
                "cutoff.final_deviation",
                final_dev,
                q.threshold,
            ));
            ctx.check(CheckRecord::at_most(
                "cutoff.modulus",
                max_modulus,
                1.0 + 1e-9,
            ));
            Ok(())
        });
    }
}

// ---- Landau ----------------------------------------------------------------------

fn run_landau(exp: &Experiment, ctx: &mut Ctx) {
    let Experiment::Landau(p) = exp else {
        unreachable!()
    };
    ctx.section("levels", |ctx| {
        let g = Grid2D::new(p.half_width, p.spacing)?;
        let spec = landau_levels(&g, p.lanczos_steps, p.seed)?;
        ctx.table.push(vec![
            "lowest".into(),
            0usize.into(),
            0.0.into(),
            spec.lowest.into(),
            0.0.into(),
        ]);
        ctx.table.push(vec![
            "next_cluster".into(),
            0usize.into(),
            0.0.into(),
            spec.next_cluster.into(),
            spec.next_cluster_weight.into(),
        ]);
        ctx.check(CheckRecord::at_most(
            "levels.lowest",
            spec.lowest.abs(),
            0.02,
        ));
        ctx.check(CheckRecord::at_most(
            "levels.next_cluster",
            (spec.next_cluster - 1.0).abs(),
            0.05,
        ));
        Ok(())
    });
    if let Some(s) = &p.strong_limit {
        ctx.section("grid_limit", |ctx| {
            let g = Grid2D::new(s.half_width, s.spacing)?;
            let sym = if s.norm == 0.0 {
                HamiltonianSymbol::zero(1)
            } else {
                HamiltonianSymbol::random(1, s.norm, p.seed)?
            };
            let table = grid_strong_limit(&g, &sym, &s.nus, s.t)?;
            for row in &table.rows {
                ctx.table.push(vec![
                    "overlap".into(),
                    0usize.into(),
                    row.nu.into(),
                    row.vacuum_overlap.re.into(),
                    row.vacuum_overlap.im.into(),
                ]);
                ctx.table.push(vec![
                    "deviation".into(),
                    0usize.into(),
                    row.nu.into(),
                    row.deviation.into(),
                    0.0.into(),
                ]);
            }
            ctx.table.push(vec![
                "predicted_overlap".into(),
                0usize.into(),
                f64::INFINITY.into(),
                table.predicted_overlap.re.into(),
                table.predicted_overlap.im.into(),
            ]);
            let first = table.rows.first().map_or(f64::NAN, |r| r.deviation);
            let last = table.rows.last().map_or(f64::NAN, |r| r.deviation);
            ctx.check(CheckRecord::below("grid_limit.last_vs_first", last, first).report_only());
            Ok(())
        });
    }
}

// ---- loops -------------------------------------------------------------------------

fn run_pathint(exp: &Experiment, ctx: &mut Ctx) {
    let Experiment::Pathint(p) = exp else {
        unreachable!()
    };
    ctx.section("pathint", |ctx| {
        let mut potentials = vec![("zero".to_string(), Potential::Zero)];
        for k in 0..p.quadratic_samples {
            let sym = HamiltonianSymbol::random(1, p.norm, p.seed.wrapping_add(k as u64))?;
            potentials.push((format!("quadratic#{k}"), Potential::quadratic(&sym)));
        }
        let (mut worst_sigma, mut worst_refine, mut modulus_excess) =
            (0.0f64, 0.0f64, f64::NEG_INFINITY);
        for (label, pot) in &potentials {
            for &nu in &p.nus {
                let spec = MeasureSpec::new(nu, VarianceRule::Nu, p.steps, p.seed)?;
                let fine = MeasureSpec::new(nu, VarianceRule::Nu, p.refine_steps, p.seed)?;
                let oracle = gaussian_oracle(&spec, pot)?;
                let oracle_fine = gaussian_oracle(&fine, pot)?;
                let mc = estimate(&spec, pot, p.samples)?;
                let sigmas = (mc.raw_mean - oracle).norm() / mc.raw_stderr;
                let refine = (oracle - oracle_fine).norm() / oracle_fine.norm();
                worst_sigma = worst_sigma.max(sigmas);
                worst_refine = worst_refine.max(refine);
                modulus_excess = modulus_excess.max(mc.raw_mean.norm() - 1.0 - 3.0 * mc.raw_stderr);
                ctx.table.push(vec![
                    label.clone().into(),
                    nu.into(),
                    f64::INFINITY.into(),
                    p.steps.into(),
                    mc.raw_mean.re.into(),
                    mc.raw_mean.im.into(),
                    mc.raw_stderr.into(),
                    oracle.re.into(),
                    oracle.im.into(),
                ]);
                ctx.table.push(vec![
                    label.clone().into(),
                    nu.into(),
                    f64::INFINITY.into(),
                    p.refine_steps.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    oracle_fine.re.into(),
                    oracle_fine.im.into(),
                ]);
                ctx.check(CheckRecord::at_most(
                    format!("pathint.{label}.nu={nu}.mc_sigmas"),
                    sigmas,
                    3.0,
                ));
                ctx.check(CheckRecord::below(
                    format!("pathint.{label}.nu={nu}.refinement"),
                    refine,
                    p.refine_threshold,
                ));
            }
        }
        ctx.check(CheckRecord::at_most(
            "pathint.max_mc_sigmas",
            worst_sigma,
            3.0,
        ));
        ctx.check(CheckRecord::below(
            "pathint.max_refinement",
            worst_refine,
            p.refine_threshold,
        ));
        ctx.check(CheckRecord::at_most(
            "pathint.modulus_excess",
            modulus_excess,
            0.0,
        ));
        for &tau in &p.taus {
            let sym = HamiltonianSymbol::random(1, p.norm, p.seed)?;
            let pot = Potential::cutoff(&sym, tau);
            for &nu in &p.nus {
                let spec = MeasureSpec::new(nu, VarianceRule::Nu, p.steps, p.seed)?;
                let mc = estimate(&spec, &pot, p.samples)?;
                ctx.table.push(vec![
                    "cutoff#0".into(),
                    nu.into(),
                    tau.into(),
                    p.steps.into(),
                    mc.mean.re.into(),
                    mc.mean.im.into(),
                    mc.stderr.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                ]);
            }
        }
        Ok(())
    });
}

fn run_calibrate(exp: &Experiment, ctx: &mut Ctx) {
    let Experiment::Calibrate(p) = exp else {
        unreachable!()
    };
    ctx.section("calibrate", |ctx| {
        let table = loops::calibrate(&p.nus, &p.rules, p.steps, p.samples, p.seed)?;
        let mut nonfinite = 0usize;
        let mut closed = 0.0f64;
        let mut outside = 0usize;
        for r in &table.rows {
            nonfinite += (!r.value.is_finite() || !r.value_imag.is_finite()) as usize;
            closed = closed.max(r.closed_form_gap.unwrap_or(0.0));
            outside += (!r.mc_within_3_stderr) as usize;
            ctx.table.push(vec![
                r.rule.name().into(),
                r.nu.into(),
                r.variance.into(),
                r.value.into(),
                r.value_imag.into(),
                r.continuum.into(),
                r.closed_form_gap.unwrap_or(f64::NAN).into(),
                r.mc_mean.re.into(),
                r.mc_mean.im.into(),
                r.mc_stderr.into(),
            ]);
        }
        ctx.check(CheckRecord::at_most(
            "calibrate.nonfinite_entries",
            nonfinite as f64,
            0.0,
        ));
        ctx.check(CheckRecord::at_most(
            "calibrate.closed_form_gap",
            closed,
            1e-10,
        ));
        ctx.check(
            CheckRecord::at_most("calibrate.mc_outside_3_stderr", outside as f64, 0.0)
                .report_only(),
        );
        ctx.check(
            CheckRecord::below("calibrate.best_rule_distance", table.best_distance, 0.1)
                .report_only()
                .with_note(format!(
                    "closest rule at the largest nu: {}",
                    table.best_rule.name()
                )),
        );
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// Output.

/// Pretty JSON with every float in 17-significant-digit scientific form.
pub fn to_json_17(value: &Value) -> String {
    let mut out = String::new();
    write_json(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_json(value: &Value, indent: usize, out: &mut String) {
    let pad = |k: usize| "  ".repeat(k);
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&value.to_string()),
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => {
                let _ = write!(out, "{i}");
            }
            (_, Some(u), _) => {
                let _ = write!(out, "{u}");
            }
            (_, _, Some(f)) => out.push_str(&fmt17(f)),
            _ => out.push_str(&n.to_string()),
        },
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_json(item, indent + 1, out);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_json(item, indent + 1, out);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

pub struct OutputFiles {
    pub report: PathBuf,
    pub checks: PathBuf,
    pub measurements: PathBuf,
}

pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<OutputFiles> {
    std::fs::create_dir_all(dir)?;
    let files = OutputFiles {
        report: dir.join(format!("{}.report.json", report.name)),
        checks: dir.join(format!("{}.checks.csv", report.name)),
        measurements: dir.join(format!("{}.csv", report.name)),
    };
    std::fs::write(&files.report, to_json_17(&serde_json::to_value(report)?))?;

    let mut w = csv::Writer::from_path(&files.checks)?;
    w.write_record([
        "name",
        "value",
        "comparison",
        "threshold",
        "pass",
        "assertive",
        "note",
    ])?;
    for chk in &report.checks {
        w.write_record([
            chk.name.clone(),
            fmt17(chk.value),
            chk.comparison.symbol().to_string(),
            fmt17(chk.threshold),
            chk.pass.to_string(),
            chk.assertive.to_string(),
            chk.note.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&files.measurements)?;
    w.write_record(&report.measurements.columns)?;
    for row in &report.measurements.rows {
        w.write_record(row.iter().map(Cell::csv))?;
    }
    w.flush()?;
    Ok(files)
}

// ---------------------------------------------------------------------------
// Catalog.

#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub tag: &'static str,
    pub topic: &'static str,
    pub required: Vec<&'static str>,
    pub optional: Vec<&'static str>,
    pub csv_columns: Vec<&'static str>,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            tag: "membership",
            topic: "structural matrices, set membership tests, dissipative cones vs contraction flows",
            required: vec!["seed"],
            optional: vec!["structural_n", "matrices", "sampled", "dissipativity"],
            csv_columns: vec!["item", "set", "residual", "threshold", "holds"],
        },
        CatalogEntry {
            tag: "decompose",
            topic: "unitary times dissipative-exponential factorization of semigroup elements",
            required: vec!["seed", "n", "samples", "scale"],
            optional: vec![],
            csv_columns: vec!["sample", "n", "reconstruction", "x_error", "h_residual", "x_residual"],
        },
        CatalogEntry {
            tag: "potapov",
            topic: "linear relations, Potapov transform, product formula, contraction bound",
            required: vec!["seed"],
            optional: vec!["example", "product", "contraction"],
            csv_columns: vec!["section", "sample", "n", "value"],
        },
        CatalogEntry {
            tag: "graph-limit",
            topic: "limits of graph(exp(A - nu N_b)) and the spectral projector derivative",
            required: vec!["seed", "m", "norm"],
            optional: vec!["limit", "derivative"],
            csv_columns: vec!["section", "sample", "nu", "value"],
        },
        CatalogEntry {
            tag: "fock-limit",
            topic: "truncated Fock space: quadratic quantization, strong limits, antinormal quantization, coherent states, cutoff Hamiltonians",
            required: vec!["seed"],
            optional: vec!["hat", "strong", "antinormal", "resolution", "cutoff"],
            csv_columns: vec!["section", "sample", "item", "parameter", "value", "value_im"],
        },
        CatalogEntry {
            tag: "landau",
            topic: "magnetic Laplacian Landau levels and the grid strong limit",
            required: vec!["seed", "half_width", "spacing", "lanczos_steps"],
            optional: vec!["strong_limit"],
            csv_columns: vec!["quantity", "sample", "nu", "value", "value_im"],
        },
        CatalogEntry {
            tag: "pathint",
            topic: "Brownian loop Monte Carlo vs the Gaussian determinant oracle",
            required: vec!["seed", "nus", "steps", "refine_steps", "samples", "quadratic_samples", "norm"],
            optional: vec!["refine_threshold", "taus"],
            csv_columns: vec![
                "potential", "nu", "tau", "steps", "mean_re", "mean_im", "stderr", "oracle_re", "oracle_im",
            ],
        },
        CatalogEntry {
            tag: "calibrate",
            topic: "loop-measure normalization study across variance rules (report only)",
            required: vec!["seed", "nus", "steps", "samples"],
            optional: vec!["rules"],
            csv_columns: vec![
                "rule", "nu", "variance", "value_re", "value_im", "continuum", "closed_form_gap", "mc_re",
                "mc_im", "mc_stderr",
            ],
        },
    ]
}

pub fn catalog_text() -> String {
    let mut out = String::new();
    for e in catalog() {
        let _ = writeln!(out, "{}", e.tag);
        let _ = writeln!(out, "  topic:    {}", e.topic);
        let _ = writeln!(out, "  required: {}", e.required.join(", "));
        if !e.optional.is_empty() {
            let _ = writeln!(out, "  optional: {}", e.optional.join(", "));
        }
        let _ = writeln!(out, "  csv:      {}", e.csv_columns.join(","));
    }
    out
}
