//! Difference explanations: spectral clustering of an affinity matrix followed by
//! k-neighborhood-affinity (KNA) grid selection, plus a PageRank sampler.

use ndarray::Array2;

use crate::difference::AffinityMatrix;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::linalg;

pub const DEFAULT_GRID_SIZE: usize = 9;
pub const PAGERANK_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    /// Number of explanations; `m + 1` clusters are formed.
    pub m: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub eig_tolerance: f64,
    pub seed: u64,
}

impl SpectralConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        SpectralConfig {
            m,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            eig_tolerance: 1e-8,
            seed,
        }
    }
}

/// One explanation: an anchor item followed by its selected neighbors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplanationGrid {
    pub anchor: usize,
    /// Anchor first.
    pub members: Vec<usize>,
    pub target_size: usize,
    pub source_cluster: Option<usize>,
}

impl ExplanationGrid {
    pub fn is_partial(&self) -> bool {
        self.members.len() < self.target_size
    }
}

/// The explanations for one comparison direction together with the hard partition they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationSet {
    pub grids: Vec<ExplanationGrid>,
    /// Cluster label for every item.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    /// Label of the cluster that produced no explanation, if any.
    pub discarded_label: Option<usize>,
}

impl ExplanationSet {
    pub fn discarded_items(&self) -> Vec<usize> {
        match self.discarded_label {
            Some(d) => (0..self.labels.len()).filter(|&i| self.labels[i] == d).collect(),
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPartition {
    /// Labels are canonical: cluster ids follow the order of each cluster's smallest member.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    /// Off-diagonal mean affinity within each cluster; 0 for singletons.
    pub mean_affinity: Vec<f64>,
    pub discarded: usize,
    /// The `m + 1` smallest Laplacian eigenvalues.
    pub eigenvalues: Vec<f64>,
}

/// Relabels clusters in order of first appearance.
pub(crate) fn canonical_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

pub(crate) fn mean_intra_affinity(f: &Array2<f64>, labels: &[usize], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if i != j && labels[i] == labels[j] {
                sums[labels[i]] += f[[i, j]];
            }
        }
    }
    (0..k)
        .map(|c| {
            let s = sizes[c];
            if s < 2 {
                0.0
            } else {
                sums[c] / (s * (s - 1)) as f64
            }
        })
        .collect()
}

/// Symmetric normalized Laplacian `I - D^{-1/2} F D^{-1/2}`.
pub fn normalized_laplacian(f: &AffinityMatrix) -> Result<Array2<f64>> {
    let n = f.n();
    let degree: Vec<f64> = f.data.rows().into_iter().map(|r| r.sum()).collect();
    if let Some(i) = degree.iter().position(|&d| d <= 0.0) {
        return Err(Error::Invalid(format!("item {i} has zero affinity degree")));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * f.data[[i, j]] * inv_sqrt[j]
    }))
}

/// Partitions items into `m + 1` clusters by k-means on the degree-scaled
/// eigenvectors of the `m + 1` smallest Laplacian eigenvalues, and marks the one with lowest mean
/// intra-cluster affinity for discarding (ties go to the lowest label).
pub fn spectral_cluster(f: &AffinityMatrix, cfg: &SpectralConfig) -> Result<SpectralPartition> {
    let n = f.n();
    let k = cfg.m + 1;
    if cfg.m == 0 || cfg.kmeans_restarts == 0 {
        return Err(Error::Invalid("spectral clustering needs m >= 1 and restarts >= 1".into()));
    }
    if n < k {
        return Err(Error::Invalid(format!("{k} clusters requested for {n} items")));
    }
    let lap = normalized_laplacian(f)?;
    let (values, vectors) = linalg::symmetric_eigen(&lap);

    let mut embedding = Array2::<f64>::zeros((n, k));
    let mut worst = 0.0f64;
    for c in 0..k {
        let v = vectors.column(c);
        let lv = lap.dot(&v);
        let residual = lv
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - values[c] * b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(residual);
        embedding.column_mut(c).assign(&v);
    }
    if !(worst <= cfg.eig_tolerance) {
        return Err(Error::EigenResidual {
            residual: worst,
            tolerance: cfg.eig_tolerance,
        });
    }
    // D^{-1/2} U: the relaxed normalized-cut indicators.
    for (mut row, d) in embedding.rows_mut().into_iter().zip(f.data.rows()) {
        row /= d.sum().sqrt();
    }

    let km = KMeansConfig {
        k,
        restarts: cfg.kmeans_restarts,
        max_iter: cfg.kmeans_max_iter,
        tol: cfg.kmeans_tol,
        seed: cfg.seed,
    };
    let fit = kmeans(&embedding, &km)?;
    let (labels, n_clusters) = canonical_labels(&fit.labels);
    let mean_affinity = mean_intra_affinity(&f.data, &labels, n_clusters);
    let mut discarded = 0;
    for (c, &m) in mean_affinity.iter().enumerate() {
        if m < mean_affinity[discarded] {
            discarded = c;
        }
    }
    Ok(SpectralPartition {
        labels,
        n_clusters,
        mean_affinity,
        discarded,
        eigenvalues: values[..k].to_vec(),
    })
}

/// Off-diagonal entries of row `i`, largest first, ties by index.
fn ranked_row(f_sub: &Array2<f64>, i: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..f_sub.ncols()).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| f_sub[[i, b]].total_cmp(&f_sub[[i, a]]).then(a.cmp(&b)));
    order
}

/// Picks the row with the largest sum of its `k` largest off-diagonal affinities.
///
/// Returns local indices: the anchor and its top neighbors by descending affinity.
pub fn kna_select(f_sub: &Array2<f64>, k: usize) -> Result<(usize, Vec<usize>)> {
    let r = f_sub.nrows();
    if r == 0 {
        return Err(Error::EmptyCluster("cannot select an anchor from an empty cluster".into()));
    }
    if k == 0 {
        return Err(Error::Invalid("KNA needs k >= 1".into()));
    }
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for i in 0..r {
        let mut top = ranked_row(f_sub, i);
        top.truncate(k);
        let kna: f64 = top.iter().map(|&j| f_sub[[i, j]]).sum();
        if best.as_ref().is_none_or(|(_, b, _)| kna > *b) {
            best = Some((i, kna, top));
        }
    }
    let (anchor, _, neighbors) = best.expect("r >= 1");
    Ok((anchor, neighbors))
}

/// Spectral clustering, discard, then one KNA grid per surviving cluster in label order.
pub fn sample_explanations(f: &AffinityMatrix, cfg: &SpectralConfig, grid_size: usize) -> Result<ExplanationSet> {
    if grid_size < 2 {
        return Err(Error::Invalid(format!("grid size must be at least 2, got {grid_size}")));
    }
    let part = spectral_cluster(f, cfg)?;
    let mut grids = Vec::with_capacity(cfg.m);
    for c in 0..part.n_clusters {
        if c == part.discarded {
            continue;
        }
        let members: Vec<usize> = (0..f.n()).filter(|&i| part.labels[i] == c).collect();
        let (anchor, neighbors) = kna_select(&f.submatrix(&members), grid_size - 1)?;
        let mut grid = vec![members[anchor]];
        grid.extend(neighbors.iter().map(|&j| members[j]));
        grids.push(ExplanationGrid {
            anchor: members[anchor],
            members: grid,
            target_size: grid_size,
            source_cluster: Some(c),
        });
    }
    Ok(ExplanationSet {
        grids,
        labels: part.labels,
        n_clusters: part.n_clusters,
        discarded_label: Some(part.discarded),
    })
}

/// PageRank scores of a weighted graph given as a dense nonnegative matrix.
///
/// Rows are normalized to transition probabilities; rows without outgoing
/// weight jump uniformly. Iterates until the L1 change drops below `tol`.
pub fn pagerank(weights: &Array2<f64>, damping: f64, tol: f64) -> Result<Vec<f64>> {
    let n = weights.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if !(0.0..1.0).contains(&damping) {
        return Err(Error::Invalid(format!("damping must lie in [0, 1), got {damping}")));
    }
    let out_weight: Vec<f64> = weights.rows().into_iter().map(|r| r.sum()).collect();
    let uniform = 1.0 / n as f64;
    let mut rank = vec![uniform; n];
    for _ in 0..PAGERANK_MAX_ITER {
        let dangling: f64 = (0..n).filter(|&i| out_weight[i] <= 0.0).map(|i| rank[i]).sum();
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        let mut next = vec![base; n];
        for i in 0..n {
            if out_weight[i] <= 0.0 {
                continue;
            }
            let share = damping * rank[i] / out_weight[i];
            for (j, slot) in next.iter_mut().enumerate() {
                *slot += share * weights[[i, j]];
            }
        }
        let delta: f64 = next.iter().zip(&rank).map(|(a, b)| (a - b).abs()).sum();
        rank = next;
        if delta < tol {
            return Ok(rank);
        }
    }
    Err(Error::PageRankNonConvergence(PAGERANK_MAX_ITER))
}

/// Repeatedly takes the highest-PageRank item and its strongest remaining edges,
/// removing selected items from the graph before the next round.
pub fn pagerank_sample(
    f: &AffinityMatrix,
    m: usize,
    grid_size: usize,
    damping: f64,
    tol: f64,
) -> Result<ExplanationSet> {
    if grid_size < 2 || m == 0 {
        return Err(Error::Invalid(format!("need m >= 1 and grid size >= 2, got m={m}, grid={grid_size}")));
    }
    let n = f.n();
    let mut pool: Vec<usize> = (0..n).collect();
    let mut grids = Vec::new();
    let mut labels = vec![usize::MAX; n];
    while grids.len() < m && !pool.is_empty() {
        let p = pool.len();
        let sub = Array2::from_shape_fn((p, p), |(a, b)| if a == b { 0.0 } else { f.data[[pool[a], pool[b]]] });
        let scores = pagerank(&sub, damping, tol)?;
        let mut anchor = 0;
        for (a, &s) in scores.iter().enumerate() {
            if s > scores[anchor] {
                anchor = a;
            }
        }
        let mut local = vec![anchor];
        local.extend(ranked_row(&sub, anchor).into_iter().take(grid_size - 1));
        let members: Vec<usize> = local.iter().map(|&a| pool[a]).collect();
        for &i in &members {
            labels[i] = grids.len();
        }
        grids.push(ExplanationGrid {
            anchor: pool[anchor],
            members,
            target_size: grid_size,
            source_cluster: Some(grids.len()),
        });
        pool.retain(|i| labels[*i] == usize::MAX);
    }
    let rest = grids.len();
    let discarded_label = if pool.is_empty() { None } else { Some(rest) };
    for l in labels.iter_mut().filter(|l| **l == usize::MAX) {
        *l = rest;
    }
    Ok(ExplanationSet {
        n_clusters: rest + usize::from(discarded_label.is_some()),
        grids,
        labels,
        discarded_label,
    })
}
