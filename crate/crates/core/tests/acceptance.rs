//! Acceptance suite. Each test prints one `PASS`/`FAIL` line on stderr
//! (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use repdiff_core::align::{fit_alignment, linear_cka, CkaObjective, FitOptions};
use repdiff_core::concepts::{sample_explanations, spectral_cluster, SpectralConfig};
use repdiff_core::difference::{affinity, locally_biased_diff, AffinityMatrix};
use repdiff_core::geometry::{pairwise_euclidean, rank_normalize, NormalizedDistances};
use repdiff_core::metrics::{bsr, clarity, cluster_disagreement, redundancy};
use repdiff_core::npy::{self, Dtype};
use repdiff_core::pipeline::{baseline, compare, Representation};
use repdiff_core::report::{to_canonical_json, Method, RunConfig};
use repdiff_core::synth::{generate_pair, Manipulation, PlantedPair, PlantedSpec};
use repdiff_core::{EmbeddingMatrix, Error, NormKind, NpyErrorKind};

fn report(name: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {status} {name}: {detail}");
}

fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

fn merge_fixture() -> PlantedPair {
    let spec = PlantedSpec {
        n_per_cluster: 150,
        n_clusters: 4,
        manipulation: Manipulation::Merge { c1: 0, c2: 1 },
        seed: 7,
        ..PlantedSpec::default()
    };
    generate_pair(&spec).unwrap()
}

fn rdx_config() -> RunConfig {
    RunConfig {
        m: 3,
        grid_size: 9,
        seed: 7,
        ..RunConfig::default()
    }
}

#[test]
fn planted_merge_recovery() {
    let pair = merge_fixture();
    let a = Representation::in_memory(pair.a.clone());
    let b = Representation::in_memory(pair.b.clone());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let r = pool.install(|| compare(&a, &b, None, &rdx_config())).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let d = r.direction("a_vs_b").unwrap();
    let index: std::collections::HashMap<&str, usize> =
        r.items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let fractions: Vec<f64> = d
        .grids
        .iter()
        .map(|g| {
            let idx: Vec<usize> = g.members.iter().map(|m| index[m.as_str()]).collect();
            pair.truth.planted_fraction(&idx)
        })
        .collect();
    let planted_grids = fractions.iter().filter(|&&f| f >= 0.8).count();
    let ok = d.grids.len() == 3 && d.bsr.aggregate >= 0.95 && planted_grids >= 2 && secs < 30.0;
    report(
        "planted-merge-recovery",
        ok,
        &format!(
            "bsr={:.4} (>=0.95), planted fractions {:?} ({} >=0.8, need 2), {:.2}s on one thread (<30s)",
            d.bsr.aggregate, fractions, planted_grids, secs
        ),
    );
    assert!(ok);
}

#[test]
fn rdx_beats_baselines() {
    let pair = merge_fixture();
    let a = Representation::in_memory(pair.a);
    let b = Representation::in_memory(pair.b);
    let cfg = rdx_config();
    let rdx = compare(&a, &b, None, &cfg).unwrap().direction("a_vs_b").unwrap().bsr.aggregate;
    let score = |method| {
        let c = RunConfig { method, ..cfg.clone() };
        baseline(&a, &b, None, &c).unwrap().direction("a_vs_b").unwrap().bsr.aggregate
    };
    let km = score(Method::Kmeans);
    let pca = score(Method::Pca);
    let ok = rdx - km >= 0.10 && rdx - pca >= 0.10;
    report(
        "rdx-beats-baselines",
        ok,
        &format!("rdx={rdx:.4}, kmeans={km:.4} (gap {:.4}), pca={pca:.4} (gap {:.4}), need gaps >=0.10", rdx - km, rdx - pca),
    );
    assert!(ok);
}

#[test]
fn sign_consistency_exact() {
    let mut failures = Vec::new();
    let mut grids_checked = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ea = EmbeddingMatrix::with_index_ids("a", gaussian(60, 5, &mut rng)).unwrap();
        let eb = EmbeddingMatrix::with_index_ids("b", gaussian(60, 5, &mut rng)).unwrap();
        let ra = rank_normalize(&pairwise_euclidean(&ea).unwrap());
        let rb = rank_normalize(&pairwise_euclidean(&eb).unwrap());
        let g = locally_biased_diff(&ra, &rb, 0.1).unwrap();
        let f = affinity(&g, 5.0).unwrap();
        let set = sample_explanations(&f, &SpectralConfig::new(3, seed), 9).unwrap();
        let score = bsr(&set.grids, &ra, &rb).unwrap();
        let (mut neg_all, mut pairs_all) = (0usize, 0usize);
        for (k, grid) in set.grids.iter().enumerate() {
            let (mut neg, mut pairs) = (0usize, 0usize);
            for &i in &grid.members {
                for &j in &grid.members {
                    if i != j {
                        pairs += 1;
                        neg += usize::from(g.data[[i, j]] < 0.0);
                    }
                }
            }
            if neg as f64 / pairs as f64 != score.per_grid[k] {
                failures.push((seed, k));
            }
            neg_all += neg;
            pairs_all += pairs;
            grids_checked += 1;
        }
        if neg_all as f64 / pairs_all as f64 != score.aggregate {
            failures.push((seed, usize::MAX));
        }
    }
    let ok = failures.is_empty();
    report(
        "sign-consistency",
        ok,
        &format!("{grids_checked} grids over 100 seeds (n=60), mismatches: {failures:?}"),
    );
    assert!(ok);
}

#[test]
fn difference_pointwise() {
    let pair_value = |x: f64, y: f64| {
        let a = NormalizedDistances::from_array(ndarray::array![[0.0, x], [x, 0.0]], NormKind::Neighborhood).unwrap();
        let b = NormalizedDistances::from_array(ndarray::array![[0.0, y], [y, 0.0]], NormKind::Neighborhood).unwrap();
        locally_biased_diff(&a, &b, 0.1).unwrap().data[[0, 1]]
    };
    let near = pair_value(1.0, 101.0);
    let far = pair_value(500.0, 600.0);
    let direct_near = (0.1f64 * (1.0 - 101.0) / 1.0).tanh();
    let direct_far = (0.1f64 * (500.0 - 600.0) / 500.0).tanh();
    let ok = near.abs() >= 0.999
        && far.abs() <= 0.021
        && (near - direct_near).abs() <= 1e-12
        && (far - direct_far).abs() <= 1e-12;
    report(
        "difference-pointwise",
        ok,
        &format!("|G(1,101)|={:.12} (>=0.999), |G(500,600)|={:.12} (<=0.021)", near.abs(), far.abs()),
    );
    assert!(ok);
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}

#[test]
fn alignment_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = gaussian(200, 16, &mut rng);
    let q = random_orthogonal(16, &mut rng);
    let b = a.dot(&q);
    let ea = EmbeddingMatrix::with_index_ids("a", a).unwrap();
    let eb = EmbeddingMatrix::with_index_ids("b", b).unwrap();
    let opts = FitOptions {
        steps: 100,
        lr: 0.001,
        train_frac: 0.7,
        seed: 3,
    };
    let map = fit_alignment(&ea, &eb, &opts).unwrap();

    let mut worst = 0.0f64;
    for t in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
        let (n, da, db) = (30, 5, 4);
        let x = gaussian(n, da, &mut rng);
        let y = gaussian(n, db, &mut rng);
        let m = gaussian(da, da, &mut rng);
        let obj = CkaObjective::new(&x, &y).unwrap();
        let (_, grad) = obj.loss_and_grad(&m).unwrap();
        let h = 1e-6;
        let mut numeric = Array2::<f64>::zeros((da, da));
        for i in 0..da {
            for j in 0..da {
                let mut plus = m.clone();
                plus[[i, j]] += h;
                let mut minus = m.clone();
                minus[[i, j]] -= h;
                let lp = 1.0 - linear_cka(&x.dot(&plus), &y).unwrap();
                let lm = 1.0 - linear_cka(&x.dot(&minus), &y).unwrap();
                numeric[[i, j]] = (lp - lm) / (2.0 * h);
            }
        }
        let diff = (&grad - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = numeric.mapv(|v| v * v).sum().sqrt();
        worst = worst.max(diff / scale);
    }
    let ok = map.best_val_cka >= 0.95 && worst < 1e-4 && map.trace.len() == 101;
    report(
        "alignment-recovery",
        ok,
        &format!("best_val_cka={:.6} (>=0.95), worst gradient relative error {worst:.2e} (<1e-4)", map.best_val_cka),
    );
    assert!(ok);
}

fn adjusted_rand_index(p: &[usize], q: &[usize]) -> f64 {
    let kp = p.iter().max().unwrap() + 1;
    let kq = q.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kq]; kp];
    for (&a, &b) in p.iter().zip(q) {
        table[a][b] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kq).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / c2(p.len() as u64);
    let max = (rows + cols) / 2.0;
    (index - expected) / (max - expected)
}

#[test]
fn spectral_recovery() {
    let truth: Vec<usize> = (0..24).map(|i| i / 8).collect();
    let block = Array2::from_shape_fn((24, 24), |(i, j)| if truth[i] == truth[j] { 5f64.exp() } else { (-5f64).exp() });
    let f = AffinityMatrix::from_array(block).unwrap();
    let part = spectral_cluster(&f, &SpectralConfig::new(2, 0)).unwrap();
    let ari = adjusted_rand_index(&part.labels, &truth);

    let mut discard_failures = Vec::new();
    for draw in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let n = 20;
        let mut w = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(0.01..1.0);
                w[[i, j]] = v;
                w[[j, i]] = v;
            }
        }
        let f = AffinityMatrix::from_array(w.clone()).unwrap();
        let part = spectral_cluster(&f, &SpectralConfig::new(3, draw)).unwrap();
        let means: Vec<f64> = (0..part.n_clusters)
            .map(|c| {
                let members: Vec<usize> = (0..n).filter(|&i| part.labels[i] == c).collect();
                let (mut sum, mut count) = (0.0, 0usize);
                for &i in &members {
                    for &j in &members {
                        if i != j {
                            sum += w[[i, j]];
                            count += 1;
                        }
                    }
                }
                if count == 0 {
                    0.0
                } else {
                    sum / count as f64
                }
            })
            .collect();
        let mut expected = 0;
        for c in 1..means.len() {
            if means[c] < means[expected] {
                expected = c;
            }
        }
        if part.discarded != expected {
            discard_failures.push(draw);
        }
    }
    let ok = ari == 1.0 && discard_failures.is_empty();
    report(
        "spectral-recovery",
        ok,
        &format!("block ARI={ari} (=1), discard-rule mismatches over 50 draws: {discard_failures:?}"),
    );
    assert!(ok);
}

#[test]
fn metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let same = Array2::from_shape_fn((6, 4), |(_, j)| (j + 1) as f64);
    let c_same = clarity(&same).unwrap();

    let mut worst_clarity = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..12);
        let v = gaussian(k, 7, &mut rng);
        let units: Vec<Vec<f64>> = v
            .rows()
            .into_iter()
            .map(|r| {
                let norm = r.dot(&r).sqrt();
                r.iter().map(|x| x / norm).collect()
            })
            .collect();
        let (mut sum, mut count) = (0.0, 0);
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    sum += units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum::<f64>();
                    count += 1;
                }
            }
        }
        worst_clarity = worst_clarity.max((clarity(&v).unwrap() - sum / count as f64).abs());
    }

    let concepts: Vec<Array2<f64>> = (0..4).map(|_| gaussian(5, 6, &mut rng)).collect();
    let red = redundancy(&concepts, &concepts).unwrap();

    let mut partition_failures = 0;
    for _ in 0..100 {
        let n = rng.random_range(5..40);
        let k = rng.random_range(1..6);
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let q: Vec<usize> = p.iter().map(|&c| perm[c] + 10).collect();
        if cluster_disagreement(&p, &p).unwrap() != 0.0 || cluster_disagreement(&p, &q).unwrap() != 0.0 {
            partition_failures += 1;
        }
    }

    let p: Vec<usize> = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let mut moved = p.clone();
    moved[0] = 1;
    let one = cluster_disagreement(&p, &moved).unwrap();

    let ok = (c_same - 1.0).abs() <= 1e-12
        && worst_clarity <= 1e-10
        && (red - 1.0).abs() <= 1e-12
        && partition_failures == 0
        && one == 1.0 / 10.0;
    report(
        "metric-identities",
        ok,
        &format!(
            "clarity(identical)={c_same}, clarity oracle max err {worst_clarity:.2e}, redundancy(X,X)={red}, \
             partition failures {partition_failures}/100, moved-one={one}"
        ),
    );
    assert!(ok);
}

fn npy_kind(bytes: &[u8]) -> Option<(String, NpyErrorKind)> {
    match npy::parse(bytes) {
        Err(e @ Error::Npy { kind, .. }) => Some((e.class().to_string(), kind)),
        _ => None,
    }
}

fn malformed(dict: &str, payload: &[u8]) -> Vec<u8> {
    let mut out = npy::MAGIC.to_vec();
    out.extend_from_slice(&[1, 0]);
    let h = format!("{dict}\n");
    out.extend_from_slice(&(h.len() as u16).to_le_bytes());
    out.extend_from_slice(h.as_bytes());
    out.extend_from_slice(payload);
    out
}

#[test]
fn determinism_and_format() {
    let spec = PlantedSpec {
        n_per_cluster: 40,
        n_clusters: 3,
        seed: 9,
        ..PlantedSpec::default()
    };
    let run = || {
        let pair = generate_pair(&spec).unwrap();
        let a = Representation::in_memory(pair.a);
        let b = Representation::in_memory(pair.b);
        let cfg = RunConfig {
            bsr_variants: vec![NormKind::MaxNormalized, NormKind::LocallyScaled],
            ..rdx_config()
        };
        to_canonical_json(&compare(&a, &b, Some(&a), &cfg).unwrap()).unwrap()
    };
    let first = run();
    let identical = first == run();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut round_trip_failures = 0;
    for t in 0..100 {
        let rows = rng.random_range(1..20);
        let cols = rng.random_range(1..20);
        let x = gaussian(rows, cols, &mut rng).mapv(|v| v * 10f64.powi(rng.random_range(-30..30)));
        let (dtype, expected) = if t % 2 == 0 {
            (Dtype::F8, x.clone())
        } else {
            (Dtype::F4, x.mapv(|v| v as f32 as f64))
        };
        let back = npy::parse(&npy::to_bytes(&x, dtype)).unwrap();
        if back != expected {
            round_trip_failures += 1;
        }
    }

    let payload = 1.0f64.to_le_bytes();
    let mut bad_magic = malformed("{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1)}", &payload);
    bad_magic[0] = b'P';
    let cases = [
        ("wrong magic", bad_magic, NpyErrorKind::BadMagic),
        (
            "fortran_order",
            malformed("{'descr': '<f8', 'fortran_order': True, 'shape': (1, 1)}", &payload),
            NpyErrorKind::FortranOrder,
        ),
        (
            "1-D",
            malformed("{'descr': '<f8', 'fortran_order': False, 'shape': (1,)}", &payload),
            NpyErrorKind::BadShape,
        ),
    ];
    let rejections: Vec<(String, bool)> = cases
        .iter()
        .map(|(name, bytes, kind)| {
            let got = npy_kind(bytes);
            (name.to_string(), got == Some(("npy".to_string(), *kind)))
        })
        .collect();

    let ok = identical && round_trip_failures == 0 && rejections.iter().all(|r| r.1);
    report(
        "determinism-and-format",
        ok,
        &format!(
            "report bytes identical: {identical} ({} bytes), npy round-trip failures {round_trip_failures}/100, malformed rejected: {rejections:?}",
            first.len()
        ),
    );
    assert!(ok);
}
