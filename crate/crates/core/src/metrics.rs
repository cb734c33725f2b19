//! Scores for explanation sets: binary success rate and its variants, the
//! judge-embedding metrics (clarity, polysemanticity, redundancy) and
//! Hungarian-matched cluster disagreement.

use ndarray::{Array1, Array2, Axis};

use crate::concepts::ExplanationGrid;
use crate::error::{Error, Result};
use crate::geometry::{self, DistanceMatrix, EmbeddingMatrix, NormKind, NormalizedDistances};
use crate::hungarian::max_weight_matching;
use crate::kmeans::{kmeans, KMeansConfig};

/// Fraction of ordered in-grid pairs that are strictly closer in the source representation.
#[derive(Debug, Clone, PartialEq)]
pub struct BsrScore {
    pub aggregate: f64,
    pub per_grid: Vec<f64>,
    /// Pairs counted as successes, over all grids.
    pub successes: usize,
    pub pairs: usize,
    /// Grids with fewer than two members; they score 0 and add no pairs.
    pub singleton_grids: usize,
}

pub fn bsr(grids: &[ExplanationGrid], d_src: &NormalizedDistances, d_ref: &NormalizedDistances) -> Result<BsrScore> {
    d_src.check_compatible(d_ref)?;
    let n = d_src.n();
    let (a, b) = (d_src.data(), d_ref.data());
    let mut per_grid = Vec::with_capacity(grids.len());
    let (mut successes, mut pairs, mut singleton_grids) = (0usize, 0usize, 0usize);
    for (g, grid) in grids.iter().enumerate() {
        if let Some(&bad) = grid.members.iter().find(|&&i| i >= n) {
            return Err(Error::Invalid(format!("grid {g} references item {bad} but only {n} items exist")));
        }
        let mut hits = 0usize;
        let mut total = 0usize;
        for &i in &grid.members {
            for &j in &grid.members {
                if i == j {
                    continue;
                }
                total += 1;
                if a[[i, j]] < b[[i, j]] {
                    hits += 1;
                }
            }
        }
        if total == 0 {
            singleton_grids += 1;
            per_grid.push(0.0);
        } else {
            per_grid.push(hits as f64 / total as f64);
        }
        successes += hits;
        pairs += total;
    }
    let aggregate = if pairs == 0 { 0.0 } else { successes as f64 / pairs as f64 };
    Ok(BsrScore {
        aggregate,
        per_grid,
        successes,
        pairs,
        singleton_grids,
    })
}

/// BSR after normalizing the raw distances with the requested scheme.
pub fn bsr_variant(
    grids: &[ExplanationGrid],
    dist_src: &DistanceMatrix,
    dist_ref: &DistanceMatrix,
    kind: NormKind,
) -> Result<BsrScore> {
    let a = geometry::normalize(dist_src, kind)?;
    let b = geometry::normalize(dist_ref, kind)?;
    bsr(grids, &a, &b)
}

/// Embeddings from an external generalist model, row-aligned with the compared items.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeEmbeddings {
    emb: EmbeddingMatrix,
}

impl JudgeEmbeddings {
    pub fn new(emb: EmbeddingMatrix, items: &[String]) -> Result<Self> {
        if emb.items() != items {
            return Err(Error::Invalid("judge embeddings must list the compared items in the same order".into()));
        }
        if let Some(i) = emb.data().rows().into_iter().position(|r| r.iter().all(|v| *v == 0.0)) {
            return Err(Error::Invalid(format!("judge embedding for item {:?} is zero", emb.items()[i])));
        }
        Ok(JudgeEmbeddings { emb })
    }

    pub fn vectors(&self, members: &[usize]) -> Array2<f64> {
        self.emb.data().select(Axis(0), members)
    }
}

fn unit_rows(v: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = v.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Degenerate(format!("vector {i} has zero norm")));
        }
        row /= norm;
    }
    Ok(out)
}

/// Mean pairwise cosine similarity, via `|V|/(|V|-1) * (‖mean unit vector‖² - 1/|V|)`.
pub fn clarity(v: &Array2<f64>) -> Result<f64> {
    let k = v.nrows();
    if k < 2 {
        return Err(Error::UndefinedMetric(format!("clarity needs at least 2 vectors, got {k}")));
    }
    let units = unit_rows(v)?;
    let mean = units.mean_axis(Axis(0)).expect("k >= 2");
    let kf = k as f64;
    Ok(kf / (kf - 1.0) * (mean.dot(&mean) - 1.0 / kf))
}

/// `1 - clarity` of the subset sums after splitting the vectors into `h` groups with k-means.
pub fn polysemanticity(v: &Array2<f64>, h: usize, seed: u64) -> Result<f64> {
    let k = v.nrows();
    if h < 2 || k < h {
        return Err(Error::UndefinedMetric(format!("polysemanticity needs |V| >= h >= 2, got |V|={k}, h={h}")));
    }
    let mut fit = kmeans(v, &KMeansConfig::new(h, seed))?;
    if (0..h).any(|c| !fit.labels.contains(&c)) {
        fit = kmeans(v, &KMeansConfig::new(h, seed.wrapping_add(1)))?;
        if (0..h).any(|c| !fit.labels.contains(&c)) {
            return Err(Error::EmptyCluster("k-means left a polysemanticity subset empty".into()));
        }
    }
    let mut sums = Array2::<f64>::zeros((h, v.ncols()));
    for (i, &l) in fit.labels.iter().enumerate() {
        sums.row_mut(l).scaled_add(1.0, &v.row(i));
    }
    let upper = 1.0 + 1.0 / (h as f64 - 1.0);
    Ok((1.0 - clarity(&sums)?).clamp(0.0, upper))
}

fn concept_means(concepts: &[Array2<f64>], side: &str) -> Result<Vec<Array1<f64>>> {
    concepts
        .iter()
        .enumerate()
        .map(|(c, v)| {
            if v.nrows() == 0 {
                return Err(Error::Invalid(format!("{side} concept {c} is empty")));
            }
            let mean = v.mean_axis(Axis(0)).expect("non-empty");
            let norm = mean.dot(&mean).sqrt();
            if !(norm > 0.0) {
                return Err(Error::Degenerate(format!("{side} concept {c} has a zero mean embedding")));
            }
            Ok(mean / norm)
        })
        .collect()
}

/// Mean over `a`'s concepts of the best cosine similarity to any of `b`'s concept means.
pub fn redundancy_directed(a: &[Array2<f64>], b: &[Array2<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("redundancy needs at least one concept per side".into()));
    }
    let ma = concept_means(a, "first")?;
    let mb = concept_means(b, "second")?;
    let total: f64 = ma
        .iter()
        .map(|x| mb.iter().map(|y| x.dot(y)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / ma.len() as f64)
}

/// Symmetric redundancy: the average of both directed scores.
pub fn redundancy(a: &[Array2<f64>], b: &[Array2<f64>]) -> Result<f64> {
    Ok(0.5 * (redundancy_directed(a, b)? + redundancy_directed(b, a)?))
}

/// Fraction of items whose clusters disagree after optimally matching the
/// clusters of `p` to those of `q`.
pub fn cluster_disagreement(p: &[usize], q: &[usize]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Invalid("cluster disagreement needs non-empty partitions".into()));
    }
    if p.len() != q.len() {
        return Err(Error::Invalid(format!("partitions cover {} and {} items", p.len(), q.len())));
    }
    let (p, kp) = crate::concepts::canonical_labels(p);
    let (q, kq) = crate::concepts::canonical_labels(q);
    let mut overlap = vec![vec![0i64; kq]; kp];
    for (&a, &b) in p.iter().zip(&q) {
        overlap[a][b] += 1;
    }
    let (_, matched) = max_weight_matching(&overlap);
    Ok((p.len() as i64 - matched) as f64 / p.len() as f64)
}
