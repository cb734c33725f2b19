//! Embedding matrices, pairwise distances and the three distance normalizations.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::par;

/// Default neighbor used as the local scale (the 7th nearest neighbor).
pub const DEFAULT_SCALE_NEIGHBOR: usize = 7;

/// Embeddings one model assigns to an ordered item set; one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    model_id: String,
    items: Vec<String>,
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(model_id: impl Into<String>, items: Vec<String>, data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n < 2 {
            return Err(Error::Invalid(format!("embedding needs at least 2 rows, got {n}")));
        }
        if d < 1 {
            return Err(Error::Invalid("embedding needs at least 1 column".into()));
        }
        if items.len() != n {
            return Err(Error::Invalid(format!(
                "{} item ids for {n} embedding rows",
                items.len()
            )));
        }
        if let Some(((i, j), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite entry {v} at row {i}, column {j}")));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &items {
            if !seen.insert(id.as_str()) {
                return Err(Error::Invalid(format!("duplicate item id {id:?}")));
            }
        }
        Ok(EmbeddingMatrix {
            model_id: model_id.into(),
            items,
            data: data.as_standard_layout().into_owned(),
        })
    }

    /// Items are named `"0"`, `"1"`, ... in row order.
    pub fn with_index_ids(model_id: impl Into<String>, data: Array2<f64>) -> Result<Self> {
        let items = (0..data.nrows()).map(|i| i.to_string()).collect();
        Self::new(model_id, items, data)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Same items and model id, new data.
    pub fn with_data(&self, model_id: impl Into<String>, data: Array2<f64>) -> Result<Self> {
        Self::new(model_id, self.items.clone(), data)
    }
}

/// Symmetric matrix of pairwise Euclidean distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    data: Array2<f64>,
}

impl DistanceMatrix {
    /// Wraps a precomputed matrix after checking it is square, finite, nonnegative,
    /// symmetric and zero on the diagonal.
    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        let (n, m) = data.dim();
        if n != m {
            return Err(Error::Invalid(format!("distance matrix is {n}x{m}")));
        }
        for i in 0..n {
            if data[[i, i]] != 0.0 {
                return Err(Error::Invalid(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = data[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Invalid(format!("bad distance {v} at ({i}, {j})")));
                }
                if v != data[[j, i]] {
                    return Err(Error::Invalid(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Multiplies every distance by `c > 0`.
    pub fn scaled(&self, c: f64) -> DistanceMatrix {
        DistanceMatrix {
            data: &self.data * c,
        }
    }
}

/// How a [`NormalizedDistances`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Per-row neighbor ranks, `1..n-1` off the diagonal.
    Neighborhood,
    /// Divided by the global maximum.
    #[serde(rename = "maxnorm")]
    MaxNormalized,
    /// Row `i` divided by the distance to its k-th neighbor.
    #[serde(rename = "localscale")]
    LocallyScaled,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::Neighborhood => "neighborhood",
            NormKind::MaxNormalized => "maxnorm",
            NormKind::LocallyScaled => "localscale",
        }
    }
}

/// Distances made comparable across representations.
///
/// Neighborhood ranks are stored as `f64`; every rank is an exactly representable integer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDistances {
    data: Array2<f64>,
    kind: NormKind,
}

impl NormalizedDistances {
    /// Wraps a raw matrix. Only shape and finiteness are checked.
    pub fn from_array(data: Array2<f64>, kind: NormKind) -> Result<Self> {
        let (n, m) = data.dim();
        if n != m || n < 2 {
            return Err(Error::Invalid(format!("normalized distances must be square n>=2, got {n}x{m}")));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid("normalized distances must be finite and nonnegative".into()));
        }
        Ok(NormalizedDistances {
            data: data.as_standard_layout().into_owned(),
            kind,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub(crate) fn check_compatible(&self, other: &NormalizedDistances) -> Result<()> {
        if self.kind != other.kind {
            return Err(Error::Invalid(format!(
                "distance kinds differ: {} vs {}",
                self.kind.as_str(),
                other.kind.as_str()
            )));
        }
        if self.n() != other.n() {
            return Err(Error::Invalid(format!(
                "distance matrices cover {} and {} items",
                self.n(),
                other.n()
            )));
        }
        Ok(())
    }
}

pub fn pairwise_euclidean(emb: &EmbeddingMatrix) -> Result<DistanceMatrix> {
    let x = emb.data();
    let n = emb.n();
    let mut out = Array2::<f64>::zeros((n, n));
    let buf = out.as_slice_mut().expect("standard layout");
    par::for_each_row(buf, n, |i, row| {
        for (j, cell) in row.iter_mut().enumerate() {
            if i == j {
                continue;
            }
            // Same operand order for (i, j) and (j, i) keeps the result exactly symmetric.
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            let a = x.row(lo);
            let b = x.row(hi);
            let sq: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            *cell = sq.sqrt();
        }
    });
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!(
            "distances overflow for embedding {:?}",
            emb.model_id()
        )));
    }
    Ok(DistanceMatrix { data: out })
}

/// Indices `j != i` ordered by ascending `row[j]`, ties by index.
fn neighbor_order(row: &[f64], i: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    order
}

/// Replaces each row's off-diagonal distances by their neighbor rank (1 = nearest).
pub fn rank_normalize(dist: &DistanceMatrix) -> NormalizedDistances {
    let n = dist.n();
    let src = dist.data();
    let mut out = Array2::<f64>::zeros((n, n));
    let buf = out.as_slice_mut().expect("standard layout");
    par::for_each_row(buf, n, |i, row| {
        let src_row = src.row(i);
        let src_row = src_row.as_slice().expect("standard layout");
        for (rank, j) in neighbor_order(src_row, i).into_iter().enumerate() {
            row[j] = (rank + 1) as f64;
        }
        row[i] = 0.0;
    });
    NormalizedDistances {
        data: out,
        kind: NormKind::Neighborhood,
    }
}

pub fn max_normalize(dist: &DistanceMatrix) -> Result<NormalizedDistances> {
    let max = dist.data().iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(Error::Degenerate("all distances are zero".into()));
    }
    Ok(NormalizedDistances {
        data: dist.data().mapv(|v| v / max),
        kind: NormKind::MaxNormalized,
    })
}

/// Scales row `i` by the distance from item `i` to its `neighbor_index`-th nearest neighbor.
///
/// The result is generally asymmetric since only the row scale is applied.
pub fn local_scale_normalize(dist: &DistanceMatrix, neighbor_index: usize) -> Result<NormalizedDistances> {
    let n = dist.n();
    if neighbor_index == 0 || n <= neighbor_index {
        return Err(Error::Invalid(format!(
            "local scaling by neighbor {neighbor_index} needs more than {neighbor_index} items, got {n}"
        )));
    }
    let src = dist.data();
    let scales: Vec<f64> = par::map_range(n, |i| {
        let row = src.row(i);
        let row = row.as_slice().expect("standard layout");
        row[neighbor_order(row, i)[neighbor_index - 1]]
    });
    if let Some(i) = scales.iter().position(|&s| s <= 0.0) {
        return Err(Error::Degenerate(format!(
            "item {i} has zero distance to its neighbor {neighbor_index} (duplicate points)"
        )));
    }
    let mut out = src.clone();
    for (mut row, s) in out.rows_mut().into_iter().zip(&scales) {
        row.mapv_inplace(|v| v / s);
    }
    Ok(NormalizedDistances {
        data: out,
        kind: NormKind::LocallyScaled,
    })
}

/// Applies the requested normalization to a raw distance matrix.
pub fn normalize(dist: &DistanceMatrix, kind: NormKind) -> Result<NormalizedDistances> {
    match kind {
        NormKind::Neighborhood => Ok(rank_normalize(dist)),
        NormKind::MaxNormalized => max_normalize(dist),
        NormKind::LocallyScaled => local_scale_normalize(dist, DEFAULT_SCALE_NEIGHBOR),
    }
}

/// 2-D coordinates for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// n×2.
    pub coords: Array2<f64>,
    /// Fewer than two directions carry variance; missing columns are zero.
    pub padded: bool,
}

/// Projects centered rows onto the top two principal directions.
/// Each direction's largest-magnitude loading is positive.
pub fn pca_coords(emb: &EmbeddingMatrix) -> Projection {
    let p = linalg::pca(emb.data(), 2);
    Projection {
        coords: p.coords,
        padded: p.rank < 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(data: Array2<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::with_index_ids("m", data).unwrap()
    }

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn line_distances() {
        let d = pairwise_euclidean(&emb(array![[0.0], [3.0], [4.0]])).unwrap();
        assert_eq!(d.data(), &array![[0.0, 3.0, 4.0], [3.0, 0.0, 1.0], [4.0, 1.0, 0.0]]);
    }

    #[test]
    fn distances_match_double_loop() {
        let x = random(5, 3, 1);
        let d = pairwise_euclidean(&emb(x.clone())).unwrap();
        for i in 0..5 {
            assert_eq!(d.data()[[i, i]], 0.0);
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (x[[i, k]] - x[[j, k]]).powi(2);
                }
                let want = s.sqrt();
                assert!((d.data()[[i, j]] - want).abs() <= 1e-10 * want.max(1.0));
                assert_eq!(d.data()[[i, j]], d.data()[[j, i]]);
            }
        }
    }

    #[test]
    fn embedding_validation() {
        assert!(EmbeddingMatrix::with_index_ids("m", array![[1.0]]).is_err());
        assert!(EmbeddingMatrix::with_index_ids("m", array![[1.0], [f64::NAN]]).is_err());
        let dup = EmbeddingMatrix::new("m", vec!["a".into(), "a".into()], array![[1.0], [2.0]]);
        assert!(matches!(dup, Err(Error::Invalid(_))));
    }

    #[test]
    fn ranks_sorted_row_and_tie_break() {
        let d = DistanceMatrix::from_array(array![[0.0, 3.0, 4.0], [3.0, 0.0, 1.0], [4.0, 1.0, 0.0]]).unwrap();
        let r = rank_normalize(&d);
        assert_eq!(r.data().row(0).to_vec(), vec![0.0, 1.0, 2.0]);
        assert_eq!(r.kind(), NormKind::Neighborhood);

        let tied = DistanceMatrix::from_array(array![[0.0, 2.0, 2.0], [2.0, 0.0, 1.0], [2.0, 1.0, 0.0]]).unwrap();
        let r = rank_normalize(&tied);
        assert!(r.data()[[0, 1]] < r.data()[[0, 2]]);
    }

    #[test]
    fn ranks_are_permutations_by_sort_oracle() {
        let d = pairwise_euclidean(&emb(random(6, 2, 9))).unwrap();
        let r = rank_normalize(&d);
        for i in 0..6 {
            let mut pairs: Vec<(f64, usize)> = (0..6).filter(|&j| j != i).map(|j| (d.data()[[i, j]], j)).collect();
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (pos, (_, j)) in pairs.iter().enumerate() {
                assert_eq!(r.data()[[i, *j]], (pos + 1) as f64);
            }
            let mut row: Vec<f64> = (0..6).filter(|&j| j != i).map(|j| r.data()[[i, j]]).collect();
            row.sort_by(f64::total_cmp);
            assert_eq!(row, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        }
    }

    #[test]
    fn max_normalize_examples() {
        let d = DistanceMatrix::from_array(array![[0.0, 2.0], [2.0, 0.0]]).unwrap();
        assert_eq!(max_normalize(&d).unwrap().data(), &array![[0.0, 1.0], [1.0, 0.0]]);
        let d = DistanceMatrix::from_array(array![[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]]).unwrap();
        assert_eq!(
            max_normalize(&d).unwrap().data(),
            &array![[0.0, 0.25, 1.0], [0.25, 0.0, 0.5], [1.0, 0.5, 0.0]]
        );
        let zero = DistanceMatrix::from_array(Array2::zeros((3, 3))).unwrap();
        assert!(matches!(max_normalize(&zero), Err(Error::Degenerate(_))));
    }

    #[test]
    fn local_scale_on_a_line() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let d = pairwise_euclidean(&emb(x)).unwrap();
        let ls = local_scale_normalize(&d, 2).unwrap();
        assert_eq!(ls.data()[[0, 1]], 0.5);
        assert_eq!(ls.data()[[0, 2]], 1.0);
        assert_eq!(ls.kind(), NormKind::LocallyScaled);
        assert!(local_scale_normalize(&d, 10).is_err());
    }

    #[test]
    fn local_scale_rejects_duplicates() {
        let x = array![[0.0], [0.0], [0.0], [5.0]];
        let d = pairwise_euclidean(&emb(x)).unwrap();
        match local_scale_normalize(&d, 2) {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("item 0")),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn pca_on_axis_aligned_data() {
        let x = array![[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let p = pca_coords(&emb(x.clone()));
        assert!(!p.padded);
        for i in 0..4 {
            for j in 0..2 {
                assert!((p.coords[[i, j]].abs() - x[[i, j]].abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pca_pads_rank_one_and_maps_duplicates_together() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [2.0, 4.0], [3.0, 6.0]];
        let p = pca_coords(&emb(x));
        assert!(p.padded);
        assert!(p.coords.column(1).iter().all(|v| *v == 0.0));
        assert_eq!(p.coords.row(1), p.coords.row(2));
    }

    #[test]
    fn pca_reconstruction_matches_svd() {
        let x = random(20, 5, 4);
        let p = linalg::pca(&x, 2);
        let centered = linalg::center_columns(&x);
        let approx = p.coords.dot(&p.components);
        let err: f64 = (&centered - &approx).iter().map(|v| v * v).sum();
        let svd = nalgebra::linalg::SVD::new(linalg::to_dmatrix(&centered), false, false);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let want: f64 = s[2..].iter().map(|v| v * v).sum();
        assert!((err - want).abs() < 1e-8, "{err} vs {want}");
    }
}
