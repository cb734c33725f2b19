use ndarray::Array2;
use proptest::prelude::*;

use repdiff_core::align::{linear_cka, CkaObjective};
use repdiff_core::difference::{affinity, locally_biased_diff};
use repdiff_core::geometry::{max_normalize, pairwise_euclidean, rank_normalize, DistanceMatrix};
use repdiff_core::metrics::{clarity, cluster_disagreement};
use repdiff_core::npy::{self, Dtype};
use repdiff_core::EmbeddingMatrix;

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Array2<f64>> {
    (rows, cols).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-10.0f64..10.0, n * d)
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

fn emb(data: Array2<f64>) -> EmbeddingMatrix {
    EmbeddingMatrix::with_index_ids("m", data).unwrap()
}

fn pair() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (3usize..12, 1usize..5, 1usize..5).prop_flat_map(|(n, da, db)| {
        (
            proptest::collection::vec(-10.0f64..10.0, n * da).prop_map(move |v| Array2::from_shape_vec((n, da), v).unwrap()),
            proptest::collection::vec(-10.0f64..10.0, n * db).prop_map(move |v| Array2::from_shape_vec((n, db), v).unwrap()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranks_survive_monotone_transforms(x in matrix(2..12, 1..5), c in 0.1f64..50.0) {
        let d = pairwise_euclidean(&emb(x)).unwrap();
        let warped = DistanceMatrix::from_array(d.data().mapv(|v| c * v.sqrt() + v * v)).unwrap();
        prop_assert_eq!(rank_normalize(&d), rank_normalize(&warped));
    }

    #[test]
    fn rank_rows_are_permutations(x in matrix(2..15, 1..4)) {
        let r = rank_normalize(&pairwise_euclidean(&emb(x)).unwrap());
        let n = r.n();
        for (i, row) in r.data().rows().into_iter().enumerate() {
            prop_assert_eq!(row[i], 0.0);
            let mut ranks: Vec<usize> = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v as usize).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..n).collect::<Vec<_>>());
            prop_assert_eq!(row.sum() as usize, n * (n - 1) / 2);
        }
    }

    #[test]
    fn max_normalization_ignores_scale(x in matrix(2..10, 1..4), c in 0.01f64..100.0) {
        let d = pairwise_euclidean(&emb(x)).unwrap();
        prop_assume!(d.data().iter().any(|v| *v > 0.0));
        let a = max_normalize(&d).unwrap();
        let b = max_normalize(&d.scaled(c)).unwrap();
        prop_assert!(a.data().iter().cloned().fold(0.0, f64::max) == 1.0);
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn difference_is_antisymmetric_and_sign_consistent((x, y) in pair(), gamma in 0.01f64..2.0) {
        let ra = rank_normalize(&pairwise_euclidean(&emb(x)).unwrap());
        let rb = rank_normalize(&pairwise_euclidean(&emb(y)).unwrap());
        let ab = locally_biased_diff(&ra, &rb, gamma).unwrap();
        let ba = locally_biased_diff(&rb, &ra, gamma).unwrap();
        for ((i, j), g) in ab.data.indexed_iter() {
            prop_assert_eq!(*g, -ba.data[[i, j]]);
            let (a, b) = (ra.data()[[i, j]], rb.data()[[i, j]]);
            prop_assert_eq!(*g < 0.0, a < b);
            prop_assert_eq!(*g == 0.0, a == b);
        }
        let f = affinity(&ab, 5.0).unwrap();
        prop_assert_eq!(&f.data, &f.data.t());
    }

    #[test]
    fn cka_is_symmetric_and_bounded((x, y) in pair()) {
        let xy = linear_cka(&x, &y);
        let yx = linear_cka(&y, &x);
        if let (Ok(xy), Ok(yx)) = (xy, yx) {
            prop_assert!((xy - yx).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&xy));
        }
    }

    #[test]
    fn cka_gradient_matches_finite_differences(
        (x, y) in (8usize..20).prop_flat_map(|n| (
            proptest::collection::vec(-3.0f64..3.0, n * 3).prop_map(move |v| Array2::from_shape_vec((n, 3), v).unwrap()),
            proptest::collection::vec(-3.0f64..3.0, n * 2).prop_map(move |v| Array2::from_shape_vec((n, 2), v).unwrap()),
        )),
        m in proptest::collection::vec(-2.0f64..2.0, 9).prop_map(|v| Array2::from_shape_vec((3, 3), v).unwrap()),
    ) {
        let Ok(obj) = CkaObjective::new(&x, &y) else { return Ok(()) };
        let Ok((_, grad)) = obj.loss_and_grad(&m) else { return Ok(()) };
        let loss = |m: &Array2<f64>| obj.loss_and_grad(m).map(|r| r.0);
        let h = 1e-6;
        let mut numeric = Array2::<f64>::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let mut p = m.clone();
                p[[i, j]] += h;
                let mut q = m.clone();
                q[[i, j]] -= h;
                numeric[[i, j]] = (loss(&p).unwrap() - loss(&q).unwrap()) / (2.0 * h);
            }
        }
        let err = (&grad - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = grad.mapv(|v| v * v).sum().sqrt().max(1e-3);
        prop_assert!(err / scale < 1e-4, "relative error {}", err / scale);
    }

    #[test]
    fn clarity_ignores_positive_rescaling(v in matrix(2..8, 2..5), s in proptest::collection::vec(0.1f64..10.0, 8)) {
        prop_assume!(v.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
        let mut w = v.clone();
        for (mut row, c) in w.rows_mut().into_iter().zip(&s) {
            row *= *c;
        }
        prop_assert!((clarity(&v).unwrap() - clarity(&w).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn disagreement_ignores_labels_and_order(
        p in proptest::collection::vec(0usize..4, 1..30),
        seed in 0usize..24,
        qs in proptest::collection::vec(0usize..5, 30),
    ) {
        let q: Vec<usize> = qs[..p.len()].to_vec();
        let perm = [[0, 1, 2, 3], [3, 2, 1, 0], [1, 0, 3, 2], [2, 3, 0, 1]][seed % 4];
        let relabeled: Vec<usize> = p.iter().map(|&c| perm[c] * 7).collect();
        let d = cluster_disagreement(&p, &q).unwrap();
        prop_assert_eq!(d, cluster_disagreement(&relabeled, &q).unwrap());
        prop_assert_eq!(d, cluster_disagreement(&q, &p).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(cluster_disagreement(&p, &relabeled).unwrap(), 0.0);
    }

    #[test]
    fn npy_round_trip(x in matrix(0..12, 0..9)) {
        prop_assert_eq!(npy::parse(&npy::to_bytes(&x, Dtype::F8)).unwrap(), x.clone());
        prop_assert_eq!(npy::parse(&npy::to_bytes(&x, Dtype::F4)).unwrap(), x.mapv(|v| v as f32 as f64));
    }
}
