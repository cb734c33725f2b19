//! Directed difference matrices and the symmetric affinity built from them.
//!
//! The tanh difference saturates at a rate set by `gamma`: small `gamma` keeps
//! moderate rank changes in the linear range, large `gamma` pushes most
//! disagreements to ±1.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NormalizedDistances;
use crate::par;

/// Exponent bound applied when building affinities from unbounded differences.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffKind {
    /// `tanh(gamma * (a - b) / min(a, b))`
    Tanh,
    /// `a - b`
    #[serde(rename = "sub")]
    Subtraction,
}

/// `G[i][j] < 0` means items `i` and `j` are closer in the source representation.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    pub data: Array2<f64>,
    pub kind: DiffKind,
    pub gamma: Option<f64>,
    /// Off-diagonal cells whose zero minimum was replaced by the row's smallest positive value.
    pub fallback_cells: usize,
}

/// Symmetric affinity; large entries mark pairs closer in the source than in the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub data: Array2<f64>,
    pub beta: f64,
    /// Cells whose exponent hit [`EXP_CLAMP`].
    pub clamped: usize,
}

impl AffinityMatrix {
    /// Wraps a precomputed affinity after checking symmetry and nonnegativity.
    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        let (n, m) = data.dim();
        if n != m || n == 0 {
            return Err(Error::Invalid(format!("affinity must be square and non-empty, got {n}x{m}")));
        }
        for i in 0..n {
            for j in 0..n {
                let v = data[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Invalid(format!("affinity entry {v} at ({i}, {j})")));
                }
                if v != data[[j, i]] {
                    return Err(Error::Invalid(format!("affinity asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(AffinityMatrix {
            data: data.as_standard_layout().into_owned(),
            beta: f64::NAN,
            clamped: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// The r×r block for the given item indices, in the given order.
    pub fn submatrix(&self, idx: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| self.data[[idx[a], idx[b]]])
    }
}

pub fn locally_biased_diff(
    d_src: &NormalizedDistances,
    d_ref: &NormalizedDistances,
    gamma: f64,
) -> Result<DifferenceMatrix> {
    d_src.check_compatible(d_ref)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Invalid(format!("gamma must be positive, got {gamma}")));
    }
    let n = d_src.n();
    let a = d_src.data();
    let b = d_ref.data();
    let mut out = Array2::<f64>::zeros((n, n));
    let buf = out.as_slice_mut().expect("standard layout");
    par::for_each_row(buf, n, |i, row| {
        // Smallest positive min(a, b) in this row, used where the min is zero.
        let floor = (0..n)
            .filter(|&j| j != i)
            .map(|j| a[[i, j]].min(b[[i, j]]))
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        for (j, cell) in row.iter_mut().enumerate() {
            let (x, y) = (a[[i, j]], b[[i, j]]);
            if i == j || x == y {
                continue;
            }
            let lo = x.min(y);
            let lo = if lo > 0.0 { lo } else { floor };
            *cell = (gamma * (x - y) / lo).tanh();
        }
    });
    let fallback_cells = a
        .indexed_iter()
        .filter(|&((i, j), &x)| {
            let y = b[[i, j]];
            i != j && x != y && x.min(y) <= 0.0
        })
        .count();
    Ok(DifferenceMatrix {
        data: out,
        kind: DiffKind::Tanh,
        gamma: Some(gamma),
        fallback_cells,
    })
}

pub fn subtraction_diff(d_src: &NormalizedDistances, d_ref: &NormalizedDistances) -> Result<DifferenceMatrix> {
    d_src.check_compatible(d_ref)?;
    Ok(DifferenceMatrix {
        data: d_src.data() - d_ref.data(),
        kind: DiffKind::Subtraction,
        gamma: None,
        fallback_cells: 0,
    })
}

/// `F = (exp(-beta G) + exp(-beta G)^T) / 2`.
pub fn affinity(g: &DifferenceMatrix, beta: f64) -> Result<AffinityMatrix> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Invalid(format!("beta must be positive, got {beta}")));
    }
    let n = g.data.nrows();
    let src = &g.data;
    let exp_at = |i: usize, j: usize| -> (f64, bool) {
        let e = -beta * src[[i, j]];
        if e.abs() > EXP_CLAMP {
            (e.clamp(-EXP_CLAMP, EXP_CLAMP).exp(), true)
        } else {
            (e.exp(), false)
        }
    };
    let mut out = Array2::<f64>::zeros((n, n));
    let buf = out.as_slice_mut().expect("standard layout");
    par::for_each_row(buf, n, |i, row| {
        for (j, cell) in row.iter_mut().enumerate() {
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            *cell = (exp_at(lo, hi).0 + exp_at(hi, lo).0) / 2.0;
        }
    });
    let clamped = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| exp_at(i, j).1)
        .count();
    Ok(AffinityMatrix {
        data: out,
        beta,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::NormKind;
    use ndarray::array;

    fn nd(data: Array2<f64>) -> NormalizedDistances {
        NormalizedDistances::from_array(data, NormKind::Neighborhood).unwrap()
    }

    fn pair(a: f64, b: f64) -> (NormalizedDistances, NormalizedDistances) {
        (nd(array![[0.0, a], [a, 0.0]]), nd(array![[0.0, b], [b, 0.0]]))
    }

    #[test]
    fn near_pair_saturates_far_pair_does_not() {
        let (a, b) = pair(1.0, 101.0);
        let g = locally_biased_diff(&a, &b, 0.1).unwrap();
        assert_eq!(g.data[[0, 1]], (-10.0f64).tanh());
        assert!(g.data[[0, 1]].abs() > 0.9999);

        let (a, b) = pair(500.0, 600.0);
        let g = locally_biased_diff(&a, &b, 0.1).unwrap();
        assert!((g.data[[0, 1]] - (-0.02f64).tanh()).abs() < 1e-15);
        assert!((g.data[[0, 1]] + 0.0200).abs() < 1e-4);
    }

    #[test]
    fn identical_inputs_give_zero() {
        let d = nd(array![[0.0, 1.0, 2.0], [1.0, 0.0, 2.0], [2.0, 1.0, 0.0]]);
        let g = locally_biased_diff(&d, &d, 0.1).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
        let s = subtraction_diff(&d, &d).unwrap();
        assert!(s.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn subtraction_example() {
        let a = nd(array![[0.0, 1.0, 2.0], [1.0, 0.0, 2.0], [2.0, 1.0, 0.0]]);
        let b = nd(array![[0.0, 2.0, 1.0], [2.0, 0.0, 1.0], [1.0, 2.0, 0.0]]);
        let s = subtraction_diff(&a, &b).unwrap();
        assert_eq!(s.data, array![[0.0, -1.0, 1.0], [-1.0, 0.0, 1.0], [1.0, -1.0, 0.0]]);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let a = nd(array![[0.0, 1.0], [1.0, 0.0]]);
        let b = NormalizedDistances::from_array(array![[0.0, 1.0], [1.0, 0.0]], NormKind::MaxNormalized).unwrap();
        assert!(matches!(locally_biased_diff(&a, &b, 0.1), Err(Error::Invalid(_))));
        assert!(matches!(subtraction_diff(&a, &b), Err(Error::Invalid(_))));
        assert!(locally_biased_diff(&a, &a, 0.0).is_err());
    }

    #[test]
    fn zero_minimum_falls_back_to_row_floor() {
        let a = NormalizedDistances::from_array(
            array![[0.0, 0.0, 0.5], [0.0, 0.0, 1.0], [0.5, 1.0, 0.0]],
            NormKind::MaxNormalized,
        )
        .unwrap();
        let b = NormalizedDistances::from_array(
            array![[0.0, 0.25, 1.0], [0.25, 0.0, 1.0], [1.0, 1.0, 0.0]],
            NormKind::MaxNormalized,
        )
        .unwrap();
        let g = locally_biased_diff(&a, &b, 0.1).unwrap();
        assert_eq!(g.fallback_cells, 2);
        // Row 0 floor is min(0.5, 1.0) = 0.5.
        assert_eq!(g.data[[0, 1]], (0.1 * -0.25 / 0.5f64).tanh());
    }

    #[test]
    fn affinity_examples() {
        let zero = DifferenceMatrix {
            data: Array2::zeros((3, 3)),
            kind: DiffKind::Tanh,
            gamma: Some(0.1),
            fallback_cells: 0,
        };
        assert!(affinity(&zero, 5.0).unwrap().data.iter().all(|v| *v == 1.0));

        let mut g = zero.clone();
        g.data[[0, 1]] = -1.0;
        g.data[[1, 0]] = -1.0;
        let f = affinity(&g, 5.0).unwrap();
        assert!((f.data[[0, 1]] - 148.413_159_102_576_6).abs() < 1e-9);

        g.data[[1, 0]] = 0.0;
        let f = affinity(&g, 5.0).unwrap();
        assert!((f.data[[0, 1]] - (5f64.exp() + 1.0) / 2.0).abs() < 1e-12);
        assert!((f.data[[0, 1]] - 74.707).abs() < 1e-3);
        assert_eq!(f.data[[0, 1]], f.data[[1, 0]]);
    }

    #[test]
    fn affinity_clamps_huge_subtraction_differences() {
        let g = DifferenceMatrix {
            data: array![[0.0, -1000.0], [-1000.0, 0.0]],
            kind: DiffKind::Subtraction,
            gamma: None,
            fallback_cells: 0,
        };
        let f = affinity(&g, 5.0).unwrap();
        assert_eq!(f.clamped, 2);
        assert!(f.data.iter().all(|v| v.is_finite()));
    }
}
