//! Seeded k-means with k-means++ initialization and best-of-restarts selection.
//!
//! Restart `r` draws from ChaCha stream `r` of the configured seed, so restarts
//! run independently (and in parallel) while staying reproducible.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    /// k×d.
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Every cluster in the result is non-empty.
pub fn kmeans(data: &Array2<f64>, cfg: &KMeansConfig) -> Result<KMeansFit> {
    let n = data.nrows();
    if cfg.k == 0 || cfg.restarts == 0 {
        return Err(Error::Invalid("k-means needs k >= 1 and restarts >= 1".into()));
    }
    if cfg.k > n {
        return Err(Error::Invalid(format!("k-means with k={} on {n} points", cfg.k)));
    }
    let fits = par::map_range(cfg.restarts, |r| single_run(data, cfg, r as u64));
    let mut best: Option<KMeansFit> = None;
    for fit in fits {
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn plus_plus_init(data: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just below `target`; fall back to the last weighted point.
            pick.unwrap_or_else(|| closest.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    chosen
}

fn assign(data: &Array2<f64>, centroids: &Array2<f64>, labels: &mut [usize], dists: &mut [f64]) {
    for i in 0..data.nrows() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..centroids.nrows() {
            let d = sq_dist(data.row(i), centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
        dists[i] = best_d;
    }
}

/// Moves the worst-fitting point of a multi-member cluster into each empty cluster.
fn repair_empty(data: &Array2<f64>, centroids: &mut Array2<f64>, labels: &mut [usize], dists: &mut [f64]) {
    let k = centroids.nrows();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut donor = None;
        let mut worst = -1.0;
        for (i, &l) in labels.iter().enumerate() {
            if sizes[l] > 1 && dists[i] > worst {
                worst = dists[i];
                donor = Some(i);
            }
        }
        let Some(i) = donor else {
            return;
        };
        labels[i] = empty;
        dists[i] = 0.0;
        centroids.row_mut(empty).assign(&data.row(i));
    }
}

fn update_centroids(data: &Array2<f64>, labels: &[usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sums.row_mut(l).scaled_add(1.0, &data.row(i));
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            let mean = &sums.row(c) / counts[c] as f64;
            centroids.row_mut(c).assign(&mean);
        }
    }
}

fn single_run(data: &Array2<f64>, cfg: &KMeansConfig, restart: u64) -> KMeansFit {
    let n = data.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart);
    let init = plus_plus_init(data, cfg.k, &mut rng);
    let mut centroids = Array2::from_shape_fn((cfg.k, data.ncols()), |(c, j)| data[[init[c], j]]);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    for _ in 0..cfg.max_iter {
        assign(data, &centroids, &mut labels, &mut dists);
        repair_empty(data, &mut centroids, &mut labels, &mut dists);
        let previous = centroids.clone();
        update_centroids(data, &labels, &mut centroids);
        let shift: f64 = (&centroids - &previous).iter().map(|v| v * v).sum();
        if shift <= cfg.tol * cfg.tol {
            break;
        }
    }
    assign(data, &centroids, &mut labels, &mut dists);
    repair_empty(data, &mut centroids, &mut labels, &mut dists);
    update_centroids(data, &labels, &mut centroids);
    let inertia = (0..n)
        .map(|i| sq_dist(data.row(i), centroids.row(labels[i])))
        .sum();
    KMeansFit {
        labels,
        centroids,
        inertia,
    }
}
