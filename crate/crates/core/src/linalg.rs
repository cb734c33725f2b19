//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

pub(crate) fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
/// Eigenvector columns are sign-normalized so their largest-magnitude entry is positive.
pub(crate) fn symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let eig = SymmetricEigen::new(to_dmatrix(a));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[x]
            .total_cmp(&eig.eigenvalues[y])
            .then(x.cmp(&y))
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = Array2::zeros((a.nrows(), n));
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let sign = sign_of_largest(col.iter().copied());
        for i in 0..a.nrows() {
            vectors[[i, dst]] = sign * col[i];
        }
    }
    (values, vectors)
}

/// +1 or -1 so that the largest-magnitude entry (first one on ties) becomes positive.
pub(crate) fn sign_of_largest(values: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    let mut best_abs = -1.0f64;
    for v in values {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub(crate) fn column_means(a: &Array2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()))
}

pub(crate) fn center_columns(a: &Array2<f64>) -> Array2<f64> {
    let mean = column_means(a);
    a - &mean.insert_axis(Axis(0))
}

/// Principal component analysis of the rows of `data`.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// k×d, orthonormal rows. Rows beyond `rank` are zero.
    pub components: Array2<f64>,
    /// n×k projections of the centered data.
    pub coords: Array2<f64>,
    /// Variance (eigenvalue of the scatter matrix / (n-1)) per component.
    pub variances: Vec<f64>,
    /// Number of directions with non-negligible variance.
    pub rank: usize,
}

pub(crate) fn pca(data: &Array2<f64>, k: usize) -> Pca {
    let (n, d) = data.dim();
    let mean = column_means(data);
    let centered = data - &mean.view().insert_axis(Axis(0));
    let scatter = centered.t().dot(&centered);
    let (values, vectors) = symmetric_eigen(&scatter);
    let top = values.last().copied().unwrap_or(0.0).max(0.0);
    let rank = if top <= 0.0 {
        0
    } else {
        values.iter().filter(|&&v| v > top * 1e-12).count()
    };
    let denom = (n.max(2) - 1) as f64;
    let mut components = Array2::zeros((k, d));
    let mut variances = vec![0.0; k];
    for c in 0..k.min(rank) {
        let src = d - 1 - c;
        components.row_mut(c).assign(&vectors.column(src));
        variances[c] = values[src].max(0.0) / denom;
    }
    let coords = centered.dot(&components.t());
    Pca {
        mean,
        components,
        coords,
        variances,
        rank,
    }
}
