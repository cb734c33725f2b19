//! Single-representation concept extractors used as reference explainers.
//!
//! Each one looks at a single embedding matrix; the comparison harness then
//! scores the resulting grids against the other representation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{canonical_labels, ExplanationGrid, ExplanationSet};
use crate::error::{Error, Result};
use crate::geometry::EmbeddingMatrix;
use crate::kmeans::{kmeans, KMeansConfig};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Kmeans,
    Pca,
    Nmf,
}

/// Learned concept vectors and per-item coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBasis {
    pub method: BaselineMethod,
    /// k×d: centroids, principal directions or NMF factors.
    pub components: Array2<f64>,
    /// n×k: one-hot assignments (k-means), projections (PCA) or NMF weights.
    pub coefficients: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineExplanation {
    pub set: ExplanationSet,
    pub basis: ConceptBasis,
}

fn take_top(order: Vec<usize>, grid_size: usize, concept: usize) -> ExplanationGrid {
    let members: Vec<usize> = order.into_iter().take(grid_size).collect();
    ExplanationGrid {
        anchor: members[0],
        members,
        target_size: grid_size,
        source_cluster: Some(concept),
    }
}

/// Items ordered by descending coefficient for one concept, ties by index.
fn by_coefficient(coefficients: &Array2<f64>, concept: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..coefficients.nrows()).collect();
    order.sort_by(|&a, &b| {
        coefficients[[b, concept]]
            .total_cmp(&coefficients[[a, concept]])
            .then(a.cmp(&b))
    });
    order
}

/// Hard assignment of each item to its largest coefficient (ties to the lower concept).
fn argmax_labels(coefficients: &Array2<f64>) -> Vec<usize> {
    coefficients
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn check_grid(k: usize, grid_size: usize) -> Result<()> {
    if k == 0 || grid_size == 0 {
        return Err(Error::Invalid(format!("need k >= 1 and grid size >= 1, got k={k}, grid={grid_size}")));
    }
    Ok(())
}

/// k-means on the rows; each grid holds the cluster members nearest the centroid.
pub fn kmeans_explain(emb: &EmbeddingMatrix, k: usize, grid_size: usize, seed: u64) -> Result<BaselineExplanation> {
    check_grid(k, grid_size)?;
    if k > emb.n() {
        return Err(Error::Invalid(format!("k-means with k={k} on {} items", emb.n())));
    }
    let x = emb.data();
    let fit = kmeans(x, &KMeansConfig::new(k, seed))?;
    let (labels, _) = canonical_labels(&fit.labels);
    // canonical label -> raw centroid row
    let mut raw_of = vec![0usize; k];
    for (raw, canon) in fit.labels.iter().zip(&labels) {
        raw_of[*canon] = *raw;
    }
    let centroids = Array2::from_shape_fn((k, emb.dim()), |(c, j)| fit.centroids[[raw_of[c], j]]);

    let grids = (0..k)
        .map(|c| {
            let mut members: Vec<(f64, usize)> = (0..emb.n())
                .filter(|&i| labels[i] == c)
                .map(|i| {
                    let d: f64 = x
                        .row(i)
                        .iter()
                        .zip(centroids.row(c).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, i)
                })
                .collect();
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            take_top(members.into_iter().map(|(_, i)| i).collect(), grid_size, c)
        })
        .collect();
    let coefficients = Array2::from_shape_fn((emb.n(), k), |(i, c)| if labels[i] == c { 1.0 } else { 0.0 });
    Ok(BaselineExplanation {
        set: ExplanationSet {
            grids,
            labels,
            n_clusters: k,
            discarded_label: None,
        },
        basis: ConceptBasis {
            method: BaselineMethod::Kmeans,
            components: centroids,
            coefficients,
        },
    })
}

/// Top-k principal components; each grid holds the items with the largest projections.
pub fn pca_explain(emb: &EmbeddingMatrix, k: usize, grid_size: usize) -> Result<BaselineExplanation> {
    check_grid(k, grid_size)?;
    if k > emb.dim() {
        return Err(Error::Invalid(format!("{k} components requested from {} dimensions", emb.dim())));
    }
    let p = linalg::pca(emb.data(), k);
    if k > p.rank {
        return Err(Error::Invalid(format!(
            "{k} components requested but the data has usable rank {}",
            p.rank
        )));
    }
    let grids = (0..k).map(|c| take_top(by_coefficient(&p.coords, c), grid_size, c)).collect();
    Ok(BaselineExplanation {
        set: ExplanationSet {
            grids,
            labels: argmax_labels(&p.coords),
            n_clusters: k,
            discarded_label: None,
        },
        basis: ConceptBasis {
            method: BaselineMethod::Pca,
            components: p.components,
            coefficients: p.coords,
        },
    })
}

/// Result of a multiplicative-update factorization `X ≈ W H`.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfFit {
    /// n×k.
    pub w: Array2<f64>,
    /// k×d.
    pub h: Array2<f64>,
    /// `‖X - WH‖_F²` at initialization and after every update.
    pub objective: Vec<f64>,
}

const NMF_EPS: f64 = 1e-12;
const NMF_REL_TOL: f64 = 1e-6;

fn nmf_objective(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    (x - &w.dot(h)).iter().map(|v| v * v).sum()
}

/// Lee-Seung multiplicative updates for the Frobenius objective.
pub fn nmf(x: &Array2<f64>, k: usize, iters: usize, seed: u64) -> Result<NmfFit> {
    if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| **v < 0.0) {
        return Err(Error::Invalid(format!(
            "NMF requires nonnegative data but entry ({i}, {j}) is {v}; use the PCA or k-means baseline instead"
        )));
    }
    if k == 0 {
        return Err(Error::Invalid("NMF needs k >= 1".into()));
    }
    let (n, d) = x.dim();
    let scale = (x.mean().unwrap_or(0.0) / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::from_shape_fn((n, k), |_| scale * rng.random::<f64>());
    let mut h = Array2::from_shape_fn((k, d), |_| scale * rng.random::<f64>());
    let mut objective = vec![nmf_objective(x, &w, &h)];
    for _ in 0..iters {
        let num = w.t().dot(x);
        let den = w.t().dot(&w).dot(&h);
        ndarray::Zip::from(&mut h)
            .and(&num)
            .and(&den)
            .for_each(|h, &a, &b| *h *= a / (b + NMF_EPS));
        let num = x.dot(&h.t());
        let den = w.dot(&h.dot(&h.t()));
        ndarray::Zip::from(&mut w)
            .and(&num)
            .and(&den)
            .for_each(|w, &a, &b| *w *= a / (b + NMF_EPS));
        let prev = *objective.last().expect("non-empty");
        let cur = nmf_objective(x, &w, &h);
        objective.push(cur);
        if prev <= 0.0 || (prev - cur).abs() / prev < NMF_REL_TOL {
            break;
        }
    }
    Ok(NmfFit { w, h, objective })
}

/// NMF on nonnegative rows; each grid holds the items with the largest weight on a factor.
pub fn nmf_explain(
    emb: &EmbeddingMatrix,
    k: usize,
    grid_size: usize,
    iters: usize,
    seed: u64,
) -> Result<BaselineExplanation> {
    check_grid(k, grid_size)?;
    let fit = nmf(emb.data(), k, iters, seed)?;
    let grids = (0..k).map(|c| take_top(by_coefficient(&fit.w, c), grid_size, c)).collect();
    Ok(BaselineExplanation {
        set: ExplanationSet {
            grids,
            labels: argmax_labels(&fit.w),
            n_clusters: k,
            discarded_label: None,
        },
        basis: ConceptBasis {
            method: BaselineMethod::Nmf,
            components: fit.h,
            coefficients: fit.w,
        },
    })
}
