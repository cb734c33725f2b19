//! Linear map aligning representation A to B by minimizing `1 - CKA(A M, B)`.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingMatrix;
use crate::linalg::center_columns;

fn frob_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Linear centered kernel alignment between two row-aligned matrices, in `[0, 1]`.
pub fn linear_cka(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::Invalid(format!("CKA inputs have {} and {} rows", x.nrows(), y.nrows())));
    }
    if x.nrows() < 2 {
        return Err(Error::Invalid("CKA needs at least 2 rows".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("CKA inputs must be finite".into()));
    }
    let xc = center_columns(x);
    let yc = center_columns(y);
    cka_centered(&xc, &yc)
}

fn cka_centered(xc: &Array2<f64>, yc: &Array2<f64>) -> Result<f64> {
    let xx = frob_sq(&xc.t().dot(xc)).sqrt();
    let yy = frob_sq(&yc.t().dot(yc)).sqrt();
    if xx <= 0.0 || yy <= 0.0 {
        return Err(Error::Degenerate("CKA input has zero variance".into()));
    }
    let yx = frob_sq(&yc.t().dot(xc));
    Ok((yx / (xx * yy)).clamp(0.0, 1.0))
}

/// Precomputed pieces of `1 - CKA(A M, B)` for a fixed centered pair (A, B).
pub struct CkaObjective {
    /// AᵀA, d×d.
    gram_a: Array2<f64>,
    /// (BᵀA)ᵀ(BᵀA), d×d.
    cross: Array2<f64>,
    /// ‖BᵀB‖_F.
    norm_b: f64,
}

impl CkaObjective {
    pub fn new(a: &Array2<f64>, b: &Array2<f64>) -> Result<Self> {
        if a.nrows() != b.nrows() {
            return Err(Error::Invalid("alignment inputs must have the same rows".into()));
        }
        let ac = center_columns(a);
        let bc = center_columns(b);
        let w = bc.t().dot(&ac);
        let norm_b = frob_sq(&bc.t().dot(&bc)).sqrt();
        if norm_b <= 0.0 {
            return Err(Error::Degenerate("target representation has zero variance".into()));
        }
        Ok(CkaObjective {
            gram_a: ac.t().dot(&ac),
            cross: w.t().dot(&w),
            norm_b,
        })
    }

    /// Loss `1 - CKA` and its gradient with respect to `m`.
    pub fn loss_and_grad(&self, m: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let cm = self.gram_a.dot(m);
        let p = m.t().dot(&cm);
        let pn = frob_sq(&p).sqrt();
        if pn <= 0.0 {
            return Err(Error::Degenerate("aligned representation collapsed to zero variance".into()));
        }
        let wm = self.cross.dot(m);
        let num: f64 = (m * &wm).sum();
        let cka = num / (pn * self.norm_b);
        let d_num = wm * 2.0;
        let d_pn = cm.dot(&p) * (2.0 / pn);
        let d_cka = d_num / (pn * self.norm_b) - d_pn * (cka / pn);
        Ok((1.0 - cka, -d_cka))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub train_loss: f64,
    pub val_cka: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// d_A×d_A, row-major as nested rows.
    #[serde(with = "crate::report::matrix_rows")]
    pub matrix: Array2<f64>,
    pub best_val_cka: f64,
    pub best_step: usize,
    pub trace: Vec<TraceEntry>,
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub lr: f64,
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            steps: 100,
            lr: 0.001,
            train_frac: 0.7,
            seed: 0,
        }
    }
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Adam {
    fn new(shape: (usize, usize)) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }

    fn step(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        self.m.zip_mut_with(grad, |m, g| *m = b1 * *m + (1.0 - b1) * g);
        self.v.zip_mut_with(grad, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        ndarray::Zip::from(params)
            .and(&self.m)
            .and(&self.v)
            .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + self.eps));
    }
}

/// Splits rows into train/validation by `seed`, trains `M` from the identity with
/// full-batch Adam and keeps the matrix with the best validation CKA.
pub fn fit_alignment(a: &EmbeddingMatrix, b: &EmbeddingMatrix, opts: &FitOptions) -> Result<AlignmentMap> {
    if a.items() != b.items() {
        return Err(Error::Invalid("alignment requires identical item lists".into()));
    }
    let n = a.n();
    if n < 10 {
        return Err(Error::Invalid(format!("alignment needs at least 10 items, got {n}")));
    }
    if !(opts.train_frac > 0.0 && opts.train_frac < 1.0) || !(opts.lr > 0.0) {
        return Err(Error::Invalid("train_frac must lie in (0, 1) and lr must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n_train = ((opts.train_frac * n as f64).round() as usize).clamp(2, n - 2);
    let (train, val) = order.split_at(n_train);

    let a_train = a.data().select(Axis(0), train);
    let b_train = b.data().select(Axis(0), train);
    let a_val = center_columns(&a.data().select(Axis(0), val));
    let b_val = center_columns(&b.data().select(Axis(0), val));
    let objective = CkaObjective::new(&a_train, &b_train)?;
    let val_cka = |m: &Array2<f64>| cka_centered(&a_val.dot(m), &b_val);

    let d = a.dim();
    let mut m = Array2::<f64>::eye(d);
    let (loss0, mut grad) = objective.loss_and_grad(&m)?;
    let mut best = (val_cka(&m)?, 0usize, m.clone());
    let mut trace = vec![TraceEntry {
        step: 0,
        train_loss: loss0,
        val_cka: best.0,
    }];
    let mut adam = Adam::new((d, d));
    for step in 1..=opts.steps {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(step));
        }
        adam.step(&mut m, &grad, opts.lr);
        let (loss, next_grad) = objective.loss_and_grad(&m)?;
        let v = val_cka(&m)?;
        trace.push(TraceEntry {
            step,
            train_loss: loss,
            val_cka: v,
        });
        if v > best.0 {
            best = (v, step, m.clone());
        }
        grad = next_grad;
    }
    Ok(AlignmentMap {
        matrix: best.2,
        best_val_cka: best.0,
        best_step: best.1,
        trace,
        split_seed: opts.seed,
    })
}

/// `A M`, with the model id marked as aligned.
pub fn apply_alignment(a: &EmbeddingMatrix, map: &AlignmentMap) -> Result<EmbeddingMatrix> {
    if map.matrix.nrows() != a.dim() || map.matrix.ncols() != a.dim() {
        return Err(Error::Invalid(format!(
            "alignment map is {}x{} but embedding has {} columns",
            map.matrix.nrows(),
            map.matrix.ncols(),
            a.dim()
        )));
    }
    a.with_data(format!("{}′", a.model_id()), a.data().dot(&map.matrix))
}
