//! Run configuration, the comparison report schema and its canonical JSON form.
//!
//! Canonical JSON: object keys sorted, two-space indentation, arrays of scalars
//! on one line, integers printed as integers and every other number printed in
//! exponent form with 17 significant digits. Identical runs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::align::AlignmentMap;
use crate::difference::DiffKind;
use crate::error::{Error, Result};
use crate::geometry::NormKind;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_ITEMS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rdx,
    Kmeans,
    Pca,
    Nmf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignDirection {
    None,
    /// Map A onto B, then compare `A M` with B.
    A2b,
    /// Map B onto A, then compare A with `B M`.
    B2a,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Spectral,
    Pagerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub distance: NormKind,
    pub diff: DiffKind,
    pub gamma: f64,
    pub beta: f64,
    /// Number of explanations per direction.
    pub m: usize,
    pub grid_size: usize,
    pub sampler: Sampler,
    pub pagerank_damping: f64,
    pub pagerank_tol: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub eig_tolerance: f64,
    pub align: AlignDirection,
    pub align_steps: usize,
    pub align_lr: f64,
    pub align_train_frac: f64,
    pub nmf_iters: usize,
    pub polysemanticity_h: usize,
    /// Extra BSR normalizations to report next to the neighborhood score.
    pub bsr_variants: Vec<NormKind>,
    pub seed: u64,
    pub max_items: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Rdx,
            distance: NormKind::Neighborhood,
            diff: DiffKind::Tanh,
            gamma: 0.1,
            beta: 5.0,
            m: 3,
            grid_size: crate::concepts::DEFAULT_GRID_SIZE,
            sampler: Sampler::Spectral,
            pagerank_damping: 0.85,
            pagerank_tol: 1e-10,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            eig_tolerance: 1e-8,
            align: AlignDirection::None,
            align_steps: 100,
            align_lr: 0.001,
            align_train_frac: 0.7,
            nmf_iters: 500,
            polysemanticity_h: 2,
            bsr_variants: Vec::new(),
            seed: 0,
            max_items: DEFAULT_MAX_ITEMS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.m == 0 {
            return bad("number of explanations must be at least 1".into());
        }
        if self.grid_size < 2 {
            return bad(format!("grid size must be at least 2, got {}", self.grid_size));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.pagerank_damping) || !(self.pagerank_tol > 0.0) {
            return bad("pagerank damping must lie in [0, 1) and tol must be positive".into());
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 || !(self.kmeans_tol >= 0.0) {
            return bad("k-means restarts and iterations must be positive".into());
        }
        if !(self.eig_tolerance > 0.0) {
            return bad("eigen tolerance must be positive".into());
        }
        if !(self.align_lr > 0.0) || !(self.align_train_frac > 0.0 && self.align_train_frac < 1.0) {
            return bad("alignment lr must be positive and train fraction in (0, 1)".into());
        }
        if self.nmf_iters == 0 {
            return bad("nmf iterations must be positive".into());
        }
        if self.polysemanticity_h < 2 {
            return bad("polysemanticity needs h >= 2".into());
        }
        Ok(())
    }
}

/// Where an input came from and a digest of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub ids_sha256: Option<String>,
    pub model_id: String,
    pub n: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inputs {
    pub a: InputRecord,
    pub b: InputRecord,
    pub judge: Option<InputRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub anchor: String,
    /// Anchor first.
    pub members: Vec<String>,
    pub target_size: usize,
    pub partial: bool,
    pub source_cluster: Option<usize>,
    pub bsr: f64,
    pub clarity: Option<f64>,
    pub polysemanticity: Option<f64>,
    /// Fraction of members in the planted set, when ground truth was supplied.
    pub planted_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsrSummary {
    pub aggregate: f64,
    pub per_grid: Vec<f64>,
    pub successes: usize,
    pub pairs: usize,
    pub singleton_grids: usize,
}

impl From<&crate::metrics::BsrScore> for BsrSummary {
    fn from(s: &crate::metrics::BsrScore) -> Self {
        BsrSummary {
            aggregate: s.aggregate,
            per_grid: s.per_grid.clone(),
            successes: s.successes,
            pairs: s.pairs,
            singleton_grids: s.singleton_grids,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionFlags {
    /// Difference cells that used the row fallback for a zero minimum.
    pub fallback_cells: usize,
    /// Affinity exponents clamped to avoid overflow.
    pub clamped_exponents: usize,
    /// Grids with fewer members than requested.
    pub partial_grids: usize,
}

/// Explanations of what `source` groups that `reference` does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    /// `"a_vs_b"` or `"b_vs_a"`.
    pub name: String,
    pub source: String,
    pub reference: String,
    pub grids: Vec<GridReport>,
    /// Item ids per cluster label.
    pub clusters: Vec<Vec<String>>,
    pub discarded_cluster: Option<usize>,
    pub bsr: BsrSummary,
    /// Keyed by normalization name.
    pub bsr_variants: BTreeMap<String, BsrSummary>,
    pub mean_clarity: Option<f64>,
    pub mean_polysemanticity: Option<f64>,
    pub flags: DirectionFlags,
}

impl DirectionReport {
    /// Cluster label per item id.
    pub fn assignments(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for (c, ids) in self.clusters.iter().enumerate() {
            for id in ids {
                out.insert(id.as_str(), c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    /// n×2, rows in item order.
    #[serde(with = "matrix_rows")]
    pub coords: ndarray::Array2<f64>,
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projections {
    pub a: ProjectionReport,
    pub b: ProjectionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub direction: AlignDirection,
    pub map: AlignmentMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub inputs: Inputs,
    pub items: Vec<String>,
    pub directions: Vec<DirectionReport>,
    /// Symmetric redundancy between the two directions' grids under the judge.
    pub redundancy: Option<f64>,
    pub pca_coords: Projections,
    pub alignment: Option<AlignmentReport>,
    pub notes: Vec<String>,
}

impl ComparisonReport {
    pub fn direction(&self, name: &str) -> Option<&DirectionReport> {
        self.directions.iter().find(|d| d.name == name)
    }
}

/// Serde adapter storing a matrix as a list of rows.
pub mod matrix_rows {
    use ndarray::Array2;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("matrix rows have unequal lengths"));
        }
        let n = rows.len();
        Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).map_err(D::Error::custom)
    }
}

fn write_number(out: &mut String, n: &serde_json::Number) {
    if let Some(u) = n.as_u64() {
        write!(out, "{u}").unwrap();
    } else if let Some(i) = n.as_i64() {
        write!(out, "{i}").unwrap();
    } else {
        let f = n.as_f64().expect("serde_json numbers are u64, i64 or f64");
        write!(out, "{f:.16e}").unwrap();
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let indent = |out: &mut String, d: usize| out.extend(std::iter::repeat_n("  ", d));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n),
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, depth + 1);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                indent(out, depth + 1);
                write_value(out, item, depth + 1);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(out, depth);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                indent(out, depth + 1);
                out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                out.push_str(": ");
                write_value(out, &map[key.as_str()], depth + 1);
                out.push_str(if k + 1 < keys.len() { ",\n" } else { "\n" });
            }
            indent(out, depth);
            out.push('}');
        }
    }
}

/// Canonical JSON text for any serializable value, with a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
}

pub fn write_report(report: &ComparisonReport, path: &Path) -> Result<()> {
    fs::write(path, to_canonical_json(report)?).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ComparisonReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: ComparisonReport = from_json(&text)?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            report.schema_version
        )));
    }
    Ok(report)
}
