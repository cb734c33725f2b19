//! Paired representations with a planted, known difference.
//!
//! A is an isotropic Gaussian mixture with equally spaced cluster means; B is the
//! same draw with one manipulation applied, so the manipulation is the only
//! asymmetry between the two.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Manipulation {
    /// Both clusters' means collapse to their midpoint in B.
    Merge { c1: usize, c2: usize },
    /// In B, the first half of the cluster moves `+separation/2` along `axis`, the
    /// second half `-separation/2`. `None` draws the axis from the seed.
    Split { cluster: usize, axis: Option<usize> },
    /// B = A plus Gaussian noise with this standard deviation.
    RelabelNoise { sigma: f64 },
}

fn default_n_per_cluster() -> usize {
    150
}
fn default_n_clusters() -> usize {
    4
}
fn default_d() -> usize {
    16
}
fn default_separation() -> f64 {
    10.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_manipulation() -> Manipulation {
    Manipulation::Merge { c1: 0, c2: 1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSpec {
    #[serde(default = "default_n_per_cluster")]
    pub n_per_cluster: usize,
    #[serde(default = "default_n_clusters")]
    pub n_clusters: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_manipulation")]
    pub manipulation: Manipulation,
    /// Distance between any two cluster means.
    #[serde(default = "default_separation")]
    pub cluster_separation: f64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            n_per_cluster: default_n_per_cluster(),
            n_clusters: default_n_clusters(),
            d: default_d(),
            manipulation: default_manipulation(),
            cluster_separation: default_separation(),
            noise_sd: default_noise(),
            seed: 0,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.n_clusters < 2 || self.n_per_cluster < 2 {
            return bad("need at least 2 clusters of at least 2 points".into());
        }
        if self.d < self.n_clusters {
            return bad(format!("d={} cannot hold {} equidistant means", self.d, self.n_clusters));
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return bad("cluster_separation must be positive".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be nonnegative".into());
        }
        let k = self.n_clusters;
        match self.manipulation {
            Manipulation::Merge { c1, c2 } => {
                if c1 == c2 || c1 >= k || c2 >= k {
                    return bad(format!("merge needs two distinct clusters below {k}, got ({c1}, {c2})"));
                }
            }
            Manipulation::Split { cluster, axis } => {
                if cluster >= k || axis.is_some_and(|a| a >= self.d) {
                    return bad("split cluster or axis out of range".into());
                }
            }
            Manipulation::RelabelNoise { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return bad("relabel noise sigma must be nonnegative".into());
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n_per_cluster * self.n_clusters
    }
}

/// What the manipulation changed.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Cluster of every item in A.
    pub labels: Vec<usize>,
    /// Items touched by the manipulation.
    pub planted: Vec<bool>,
    /// Symmetric, false on the diagonal: pairs whose relative closeness differs by construction.
    pub mask: Array2<bool>,
}

impl GroundTruth {
    /// Fraction of `members` that are planted items.
    pub fn planted_fraction(&self, members: &[usize]) -> f64 {
        if members.is_empty() {
            return 0.0;
        }
        members.iter().filter(|&&i| self.planted[i]).count() as f64 / members.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPair {
    pub a: EmbeddingMatrix,
    pub b: EmbeddingMatrix,
    pub truth: GroundTruth,
}

pub fn generate_pair(spec: &PlantedSpec) -> Result<PlantedPair> {
    spec.validate()?;
    let (k, per, d) = (spec.n_clusters, spec.n_per_cluster, spec.d);
    let n = spec.n();
    let labels: Vec<usize> = (0..n).map(|i| i / per).collect();
    let scale = spec.cluster_separation / std::f64::consts::SQRT_2;
    let means: Vec<Array1<f64>> = (0..k)
        .map(|c| Array1::from_shape_fn(d, |j| if j == c { scale } else { 0.0 }))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Invalid(e.to_string()))?;
    let offsets = Array2::from_shape_fn((n, d), |_| noise.sample(&mut rng));
    let a = Array2::from_shape_fn((n, d), |(i, j)| means[labels[i]][j] + offsets[[i, j]]);

    let mut b = a.clone();
    let mut planted = vec![false; n];
    match spec.manipulation {
        Manipulation::Merge { c1, c2 } => {
            let mid = (&means[c1] + &means[c2]) / 2.0;
            for i in 0..n {
                if labels[i] == c1 || labels[i] == c2 {
                    planted[i] = true;
                    for j in 0..d {
                        b[[i, j]] = mid[j] + offsets[[i, j]];
                    }
                }
            }
        }
        Manipulation::Split { cluster, axis } => {
            let axis = axis.unwrap_or_else(|| rng.random_range(0..d));
            let half = spec.cluster_separation / 2.0;
            let first = cluster * per;
            for i in first..first + per {
                planted[i] = true;
                b[[i, axis]] += if i - first < per / 2 { half } else { -half };
            }
        }
        Manipulation::RelabelNoise { sigma } => {
            if sigma > 0.0 {
                let mut stream = ChaCha8Rng::seed_from_u64(spec.seed);
                stream.set_stream(1);
                let jitter = Normal::new(0.0, sigma).map_err(|e| Error::Invalid(e.to_string()))?;
                b.mapv_inplace(|v| v + jitter.sample(&mut stream));
                planted.fill(true);
            }
        }
    }

    let side = |i: usize| -> usize {
        match spec.manipulation {
            Manipulation::Split { cluster, .. } if labels[i] == cluster => usize::from(i - cluster * per >= per / 2),
            _ => 0,
        }
    };
    let mask = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j || !planted[i] || !planted[j] {
            return false;
        }
        match spec.manipulation {
            Manipulation::Split { .. } => side(i) == side(j),
            _ => true,
        }
    });

    Ok(PlantedPair {
        a: EmbeddingMatrix::with_index_ids("synth-a", a)?,
        b: EmbeddingMatrix::with_index_ids("synth-b", b)?,
        truth: GroundTruth { labels, planted, mask },
    })
}
