//! End-to-end runs: two-direction comparisons, baselines, re-evaluation of stored
//! explanations and consistency between runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{apply_alignment, fit_alignment, AlignmentMap, FitOptions};
use crate::baselines::{kmeans_explain, nmf_explain, pca_explain};
use crate::concepts::{pagerank_sample, sample_explanations, ExplanationGrid, ExplanationSet, SpectralConfig};
use crate::difference::{affinity, locally_biased_diff, subtraction_diff, DiffKind};
use crate::error::{Error, Result};
use crate::geometry::{self, pairwise_euclidean, pca_coords, DistanceMatrix, EmbeddingMatrix, NormKind, NormalizedDistances};
use crate::metrics::{self, bsr, bsr_variant, JudgeEmbeddings};
use crate::npy;
use crate::report::{
    AlignDirection, AlignmentReport, BsrSummary, ComparisonReport, DirectionFlags, DirectionReport, GridReport, InputRecord,
    Inputs, Method, ProjectionReport, Projections, RunConfig, Sampler, SCHEMA_VERSION,
};

/// An embedding matrix plus a record of where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub emb: EmbeddingMatrix,
    pub record: InputRecord,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Representation {
    /// Reads an NPY file and an optional id sidecar, digesting both.
    pub fn load(path: &Path, ids: Option<&Path>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let emb = npy::read_embeddings(path, ids)?;
        let ids_sha256 = match ids {
            Some(p) => Some(sha256_hex(&fs::read(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        Ok(Representation {
            record: InputRecord {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
                ids_sha256,
                model_id: emb.model_id().to_string(),
                n: emb.n(),
                dim: emb.dim(),
            },
            emb,
        })
    }

    /// Wraps an in-memory matrix; the digest covers its `<f8` NPY encoding and ids.
    pub fn in_memory(emb: EmbeddingMatrix) -> Self {
        let bytes = npy::to_bytes(emb.data(), npy::Dtype::F8);
        Representation {
            record: InputRecord {
                path: format!("<memory:{}>", emb.model_id()),
                sha256: sha256_hex(&bytes),
                ids_sha256: Some(sha256_hex(emb.items().join("\n").as_bytes())),
                model_id: emb.model_id().to_string(),
                n: emb.n(),
                dim: emb.dim(),
            },
            emb,
        }
    }
}

fn check_pair(a: &EmbeddingMatrix, b: &EmbeddingMatrix, cfg: &RunConfig) -> Result<()> {
    if a.items() != b.items() {
        return Err(Error::Invalid(
            "representations must list the same item ids in the same order".into(),
        ));
    }
    if a.n() > cfg.max_items {
        return Err(Error::Invalid(format!(
            "{} items exceeds the limit of {}; each direction holds several n×n matrices (raise the limit explicitly to proceed)",
            a.n(),
            cfg.max_items
        )));
    }
    Ok(())
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        steps: cfg.align_steps,
        lr: cfg.align_lr,
        train_frac: cfg.align_train_frac,
        seed: cfg.seed,
    }
}

/// The matrices actually compared, after an optional alignment step.
fn aligned_pair(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    direction: AlignDirection,
    stored: Option<&AlignmentMap>,
    cfg: &RunConfig,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix, Option<AlignmentReport>)> {
    let fit = |x: &EmbeddingMatrix, y: &EmbeddingMatrix| match stored {
        Some(map) => Ok(map.clone()),
        None => fit_alignment(x, y, &fit_options(cfg)),
    };
    match direction {
        AlignDirection::None => Ok((a.clone(), b.clone(), None)),
        AlignDirection::A2b => {
            let map = fit(a, b)?;
            let a2 = apply_alignment(a, &map)?;
            Ok((a2, b.clone(), Some(AlignmentReport { direction, map })))
        }
        AlignDirection::B2a => {
            let map = fit(b, a)?;
            let b2 = apply_alignment(b, &map)?;
            Ok((a.clone(), b2, Some(AlignmentReport { direction, map })))
        }
    }
}

/// Distances of one representation under every scheme a run needs.
struct Geometry {
    dist: DistanceMatrix,
    ranks: NormalizedDistances,
}

impl Geometry {
    fn new(emb: &EmbeddingMatrix) -> Result<Self> {
        let dist = pairwise_euclidean(emb)?;
        let ranks = geometry::rank_normalize(&dist);
        Ok(Geometry { dist, ranks })
    }

    fn normalized(&self, kind: NormKind) -> Result<NormalizedDistances> {
        match kind {
            NormKind::Neighborhood => Ok(self.ranks.clone()),
            other => geometry::normalize(&self.dist, other),
        }
    }
}

struct Judge<'a> {
    emb: &'a JudgeEmbeddings,
    index: HashMap<&'a str, usize>,
}

fn judge_vectors(judge: &Judge, ids: &[String]) -> Result<ndarray::Array2<f64>> {
    let idx = ids
        .iter()
        .map(|id| {
            judge
                .index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Invalid(format!("judge embeddings lack item {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(judge.emb.vectors(&idx))
}

fn optional_metric(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

struct DirectionInput<'a> {
    name: &'static str,
    source: &'static str,
    reference: &'static str,
    src: &'a Geometry,
    reff: &'a Geometry,
}

fn score_direction(
    d: &DirectionInput,
    set: &ExplanationSet,
    items: &[String],
    judge: Option<&Judge>,
    flags: DirectionFlags,
    cfg: &RunConfig,
) -> Result<DirectionReport> {
    let score = bsr(&set.grids, &d.src.ranks, &d.reff.ranks)?;
    let mut variants = BTreeMap::new();
    for kind in &cfg.bsr_variants {
        let v = bsr_variant(&set.grids, &d.src.dist, &d.reff.dist, *kind)?;
        variants.insert(kind.as_str().to_string(), BsrSummary::from(&v));
    }
    let mut grids = Vec::with_capacity(set.grids.len());
    for (g, grid) in set.grids.iter().enumerate() {
        let members: Vec<String> = grid.members.iter().map(|&i| items[i].clone()).collect();
        let (clarity, poly) = match judge {
            Some(j) => {
                let v = judge_vectors(j, &members)?;
                let poly = if v.nrows() >= cfg.polysemanticity_h {
                    optional_metric(metrics::polysemanticity(&v, cfg.polysemanticity_h, cfg.seed))?
                } else {
                    None
                };
                (optional_metric(metrics::clarity(&v))?, poly)
            }
            None => (None, None),
        };
        grids.push(GridReport {
            anchor: items[grid.anchor].clone(),
            members,
            target_size: grid.target_size,
            partial: grid.is_partial(),
            source_cluster: grid.source_cluster,
            bsr: score.per_grid[g],
            clarity,
            polysemanticity: poly,
            planted_fraction: None,
        });
    }
    let mut clusters = vec![Vec::new(); set.n_clusters];
    for (i, &c) in set.labels.iter().enumerate() {
        clusters[c].push(items[i].clone());
    }
    Ok(DirectionReport {
        name: d.name.to_string(),
        source: d.source.to_string(),
        reference: d.reference.to_string(),
        mean_clarity: mean_of(grids.iter().map(|g| g.clarity)),
        mean_polysemanticity: mean_of(grids.iter().map(|g| g.polysemanticity)),
        flags: DirectionFlags {
            partial_grids: grids.iter().filter(|g| g.partial).count(),
            ..flags
        },
        grids,
        clusters,
        discarded_cluster: set.discarded_label,
        bsr: BsrSummary::from(&score),
        bsr_variants: variants,
    })
}

fn rdx_direction(d: &DirectionInput, cfg: &RunConfig) -> Result<(ExplanationSet, DirectionFlags)> {
    let src = d.src.normalized(cfg.distance)?;
    let reff = d.reff.normalized(cfg.distance)?;
    let g = match cfg.diff {
        DiffKind::Tanh => locally_biased_diff(&src, &reff, cfg.gamma)?,
        DiffKind::Subtraction => subtraction_diff(&src, &reff)?,
    };
    let f = affinity(&g, cfg.beta)?;
    let set = match cfg.sampler {
        Sampler::Spectral => {
            let sc = SpectralConfig {
                m: cfg.m,
                kmeans_restarts: cfg.kmeans_restarts,
                kmeans_max_iter: cfg.kmeans_max_iter,
                kmeans_tol: cfg.kmeans_tol,
                eig_tolerance: cfg.eig_tolerance,
                seed: cfg.seed,
            };
            sample_explanations(&f, &sc, cfg.grid_size)?
        }
        Sampler::Pagerank => pagerank_sample(&f, cfg.m, cfg.grid_size, cfg.pagerank_damping, cfg.pagerank_tol)?,
    };
    let flags = DirectionFlags {
        fallback_cells: g.fallback_cells,
        clamped_exponents: f.clamped,
        partial_grids: 0,
    };
    Ok((set, flags))
}

fn baseline_set(emb: &EmbeddingMatrix, cfg: &RunConfig) -> Result<ExplanationSet> {
    let out = match cfg.method {
        Method::Kmeans => kmeans_explain(emb, cfg.m, cfg.grid_size, cfg.seed)?,
        Method::Pca => pca_explain(emb, cfg.m, cfg.grid_size)?,
        Method::Nmf => nmf_explain(emb, cfg.m, cfg.grid_size, cfg.nmf_iters, cfg.seed)?,
        Method::Rdx => unreachable!("handled by the rdx path"),
    };
    Ok(out.set)
}

fn judge_for<'a>(judge: Option<&Representation>, items: &'a [String], holder: &'a mut Option<JudgeEmbeddings>) -> Result<Option<Judge<'a>>> {
    let Some(j) = judge else { return Ok(None) };
    let emb = &*holder.insert(JudgeEmbeddings::new(j.emb.clone(), items)?);
    let index = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    Ok(Some(Judge { emb, index }))
}

fn redundancy_of(directions: &[DirectionReport], judge: Option<&Judge>, notes: &mut Vec<String>) -> Result<Option<f64>> {
    let Some(j) = judge else { return Ok(None) };
    if directions.len() != 2 || directions.iter().any(|d| d.grids.is_empty()) {
        notes.push("redundancy undefined: a direction has no grids".into());
        return Ok(None);
    }
    let sets = |d: &DirectionReport| d.grids.iter().map(|g| judge_vectors(j, &g.members)).collect::<Result<Vec<_>>>();
    match metrics::redundancy(&sets(&directions[0])?, &sets(&directions[1])?) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(msg)) => {
            notes.push(format!("redundancy undefined: {msg}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn projections(a: &EmbeddingMatrix, b: &EmbeddingMatrix, notes: &mut Vec<String>) -> Projections {
    let pa = pca_coords(a);
    let pb = pca_coords(b);
    for (name, p) in [("a", &pa), ("b", &pb)] {
        if p.padded {
            notes.push(format!("pca_coords.{name} padded: fewer than two directions carry variance"));
        }
    }
    Projections {
        a: ProjectionReport {
            coords: pa.coords,
            padded: pa.padded,
        },
        b: ProjectionReport {
            coords: pb.coords,
            padded: pb.padded,
        },
    }
}

fn run(
    a: &Representation,
    b: &Representation,
    judge: Option<&Representation>,
    cfg: &RunConfig,
    explain: impl Fn(&DirectionInput, &EmbeddingMatrix) -> Result<(ExplanationSet, DirectionFlags)>,
) -> Result<ComparisonReport> {
    cfg.validate()?;
    check_pair(&a.emb, &b.emb, cfg)?;
    let (ea, eb, alignment) = aligned_pair(&a.emb, &b.emb, cfg.align, None, cfg)?;
    let ga = Geometry::new(&ea)?;
    let gb = Geometry::new(&eb)?;
    let items = ea.items().to_vec();
    let mut holder = None;
    let judge_ref = judge_for(judge, &items, &mut holder)?;

    let dirs = [
        (DirectionInput { name: "a_vs_b", source: "a", reference: "b", src: &ga, reff: &gb }, &ea),
        (DirectionInput { name: "b_vs_a", source: "b", reference: "a", src: &gb, reff: &ga }, &eb),
    ];
    let mut directions = Vec::with_capacity(2);
    for (d, emb) in &dirs {
        let (set, flags) = explain(d, emb)?;
        directions.push(score_direction(d, &set, &items, judge_ref.as_ref(), flags, cfg)?);
    }
    let mut notes = Vec::new();
    for d in &directions {
        if d.flags.fallback_cells > 0 {
            notes.push(format!("{}: {} difference cells used the zero-minimum fallback", d.name, d.flags.fallback_cells));
        }
        if d.flags.clamped_exponents > 0 {
            notes.push(format!("{}: {} affinity exponents were clamped", d.name, d.flags.clamped_exponents));
        }
        if d.flags.partial_grids > 0 {
            notes.push(format!("{}: {} grids have fewer members than requested", d.name, d.flags.partial_grids));
        }
    }
    let redundancy = redundancy_of(&directions, judge_ref.as_ref(), &mut notes)?;
    let pca = projections(&ea, &eb, &mut notes);
    Ok(ComparisonReport {
        schema_version: SCHEMA_VERSION,
        tool_version: crate::VERSION.to_string(),
        config: cfg.clone(),
        inputs: Inputs {
            a: a.record.clone(),
            b: b.record.clone(),
            judge: judge.map(|j| j.record.clone()),
        },
        items,
        directions,
        redundancy,
        pca_coords: pca,
        alignment,
        notes,
    })
}

/// Difference explanations in both directions (`a_vs_b` finds what A groups and B does not).
pub fn compare(a: &Representation, b: &Representation, judge: Option<&Representation>, cfg: &RunConfig) -> Result<ComparisonReport> {
    if cfg.method != Method::Rdx {
        return Err(Error::Invalid(format!("compare runs method rdx, config names {:?}", cfg.method)));
    }
    run(a, b, judge, cfg, |d, _| rdx_direction(d, cfg))
}

/// Baseline explanations of each representation on its own, scored against the other.
pub fn baseline(a: &Representation, b: &Representation, judge: Option<&Representation>, cfg: &RunConfig) -> Result<ComparisonReport> {
    if cfg.method == Method::Rdx {
        return Err(Error::Invalid("baseline needs method kmeans, pca or nmf".into()));
    }
    run(a, b, judge, cfg, |_, emb| Ok((baseline_set(emb, cfg)?, DirectionFlags::default())))
}

fn grids_from_report(d: &DirectionReport, index: &HashMap<&str, usize>) -> Result<Vec<ExplanationGrid>> {
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("report item {id:?} is not in the representations")))
    };
    d.grids
        .iter()
        .map(|g| {
            Ok(ExplanationGrid {
                anchor: lookup(&g.anchor)?,
                members: g.members.iter().map(|m| lookup(m)).collect::<Result<Vec<_>>>()?,
                target_size: g.target_size,
                source_cluster: g.source_cluster,
            })
        })
        .collect()
}

/// Recomputes every metric for the explanations stored in `report`.
///
/// Items are matched by id. A stored alignment map is applied again rather than refit.
pub fn eval(
    report: &ComparisonReport,
    a: &Representation,
    b: &Representation,
    judge: Option<&Representation>,
) -> Result<ComparisonReport> {
    let cfg = &report.config;
    cfg.validate()?;
    check_pair(&a.emb, &b.emb, cfg)?;
    let stored = report.alignment.as_ref().map(|r| &r.map);
    let direction = report.alignment.as_ref().map_or(AlignDirection::None, |r| r.direction);
    let (ea, eb, alignment) = aligned_pair(&a.emb, &b.emb, direction, stored, cfg)?;
    let ga = Geometry::new(&ea)?;
    let gb = Geometry::new(&eb)?;
    let items = ea.items().to_vec();
    let index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut holder = None;
    let judge_ref = judge_for(judge, &items, &mut holder)?;

    let mut directions = Vec::with_capacity(report.directions.len());
    for old in &report.directions {
        let (src, reff, name, source, reference) = match old.name.as_str() {
            "a_vs_b" => (&ga, &gb, "a_vs_b", "a", "b"),
            "b_vs_a" => (&gb, &ga, "b_vs_a", "b", "a"),
            other => return Err(Error::Schema(format!("unknown direction {other:?}"))),
        };
        let grids = grids_from_report(old, &index)?;
        // Items outside every stored cluster keep an extra label.
        let mut labels = vec![old.clusters.len(); items.len()];
        for (c, ids) in old.clusters.iter().enumerate() {
            for id in ids {
                if let Some(&i) = index.get(id.as_str()) {
                    labels[i] = c;
                }
            }
        }
        let n_clusters = labels.iter().max().map_or(0, |&m| m + 1);
        let set = ExplanationSet {
            grids,
            labels,
            n_clusters,
            discarded_label: old.discarded_cluster,
        };
        let d = DirectionInput { name, source, reference, src, reff };
        let mut fresh = score_direction(&d, &set, &items, judge_ref.as_ref(), old.flags.clone(), cfg)?;
        fresh.clusters = old.clusters.clone();
        for (g, og) in fresh.grids.iter_mut().zip(&old.grids) {
            g.planted_fraction = og.planted_fraction;
        }
        directions.push(fresh);
    }
    let mut notes = Vec::new();
    let redundancy = redundancy_of(&directions, judge_ref.as_ref(), &mut notes)?;
    let pca = projections(&ea, &eb, &mut notes);
    notes.extend(report.notes.iter().filter(|n| !n.starts_with("pca_coords") && !n.starts_with("redundancy")).cloned());
    notes.sort();
    notes.dedup();
    Ok(ComparisonReport {
        schema_version: SCHEMA_VERSION,
        tool_version: crate::VERSION.to_string(),
        config: cfg.clone(),
        inputs: Inputs {
            a: a.record.clone(),
            b: b.record.clone(),
            judge: judge.map(|j| j.record.clone()),
        },
        items,
        directions,
        redundancy,
        pca_coords: pca,
        alignment,
        notes,
    })
}

/// Records what fraction of each grid falls in the planted item set (`planted[i]` in item order).
pub fn annotate_planted(report: &mut ComparisonReport, planted: &[bool]) -> Result<()> {
    if planted.len() != report.items.len() {
        return Err(Error::Invalid("ground truth covers a different number of items".into()));
    }
    let index: HashMap<&str, usize> = report.items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    for d in &mut report.directions {
        for g in &mut d.grids {
            let members = g
                .members
                .iter()
                .map(|m| index.get(m.as_str()).copied().ok_or_else(|| Error::Invalid(format!("unknown item {m:?}"))))
                .collect::<Result<Vec<_>>>()?;
            g.planted_fraction = Some(members.iter().filter(|&&i| planted[i]).count() as f64 / members.len().max(1) as f64);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub shared_items: usize,
    pub disagreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub tool_version: String,
    /// Keyed by direction name.
    pub directions: BTreeMap<String, ConsistencyEntry>,
}

/// Hungarian-matched cluster disagreement per direction, over the item ids both runs share.
pub fn consistency(r1: &ComparisonReport, r2: &ComparisonReport) -> Result<ConsistencyReport> {
    let mut directions = BTreeMap::new();
    for d1 in &r1.directions {
        let Some(d2) = r2.direction(&d1.name) else { continue };
        let (p, q) = (d1.assignments(), d2.assignments());
        let shared: Vec<&str> = p.keys().filter(|id| q.contains_key(*id)).copied().collect();
        if shared.is_empty() {
            return Err(Error::Invalid(format!("direction {} shares no items between the reports", d1.name)));
        }
        let lp: Vec<usize> = shared.iter().map(|id| p[id]).collect();
        let lq: Vec<usize> = shared.iter().map(|id| q[id]).collect();
        directions.insert(
            d1.name.clone(),
            ConsistencyEntry {
                shared_items: shared.len(),
                disagreement: metrics::cluster_disagreement(&lp, &lq)?,
            },
        );
    }
    if directions.is_empty() {
        return Err(Error::Invalid("the reports have no direction in common".into()));
    }
    Ok(ConsistencyReport {
        tool_version: crate::VERSION.to_string(),
        directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_pair, Manipulation, PlantedSpec};

    fn fixture() -> (Representation, Representation) {
        let spec = PlantedSpec {
            n_per_cluster: 20,
            n_clusters: 3,
            d: 6,
            manipulation: Manipulation::Merge { c1: 0, c2: 1 },
            seed: 5,
            ..PlantedSpec::default()
        };
        let pair = generate_pair(&spec).unwrap();
        (Representation::in_memory(pair.a), Representation::in_memory(pair.b))
    }

    #[test]
    fn compare_then_eval_matches() {
        let (a, b) = fixture();
        let cfg = RunConfig {
            m: 2,
            bsr_variants: vec![NormKind::MaxNormalized],
            ..RunConfig::default()
        };
        let report = compare(&a, &b, Some(&a), &cfg).unwrap();
        assert_eq!(report.directions.len(), 2);
        assert_eq!(report.directions[0].grids.len(), 2);
        assert!(report.redundancy.is_some());
        let again = eval(&report, &a, &b, Some(&a)).unwrap();
        for (x, y) in report.directions.iter().zip(&again.directions) {
            assert_eq!(x.bsr, y.bsr);
            assert_eq!(x.bsr_variants, y.bsr_variants);
        }
    }

    #[test]
    fn consistency_of_identical_runs_is_zero() {
        let (a, b) = fixture();
        let cfg = RunConfig {
            m: 2,
            ..RunConfig::default()
        };
        let r = compare(&a, &b, None, &cfg).unwrap();
        let c = consistency(&r, &r).unwrap();
        assert_eq!(c.directions["a_vs_b"].disagreement, 0.0);
        assert_eq!(c.directions["b_vs_a"].shared_items, 60);
    }

    #[test]
    fn size_guard() {
        let (a, b) = fixture();
        let cfg = RunConfig {
            max_items: 10,
            ..RunConfig::default()
        };
        assert!(matches!(compare(&a, &b, None, &cfg), Err(Error::Invalid(_))));
    }

    #[test]
    fn baseline_reports_both_directions() {
        let (a, b) = fixture();
        let cfg = RunConfig {
            method: Method::Kmeans,
            m: 3,
            ..RunConfig::default()
        };
        let r = baseline(&a, &b, None, &cfg).unwrap();
        assert!(r.directions.iter().all(|d| d.grids.len() == 3 && d.discarded_cluster.is_none()));
    }
}
