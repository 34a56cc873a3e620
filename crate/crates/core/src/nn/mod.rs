//! Minimal differentiable neural-network core.
//!
//! Dense layers, the GRU cell, the center-oriented bidirectional GRU layer,
//! MSE loss, Kaiming initialization and Adam — all with explicit hand-written
//! reverse-mode gradients. Everything is `f64`; determinism comes from seeded
//! generators and fixed reduction order.

mod adam;
mod checkpoint;
mod cogru;
mod dense;
mod gru;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use cogru::{cogru_backward, cogru_forward, CoGruCache, CoGruGrads, CoGruLayer};
pub use cogru::{windowed_bigru_forward, windowed_bigru_forward_backward};
pub use dense::{mlp_backward, mlp_forward, Activation, DenseParams, Mlp, MlpCache};
pub use gru::{gru_cell_backward, gru_cell_forward, GruCellCache, GruParams, GruState};

use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// y += A x
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            y[i] += acc;
        }
    }

    /// y += A^T x
    pub fn matvec_t_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for i in 0..self.rows {
            let row = self.row(i);
            let xi = x[i];
            for (yj, a) in y.iter_mut().zip(row.iter()) {
                *yj += xi * a;
            }
        }
    }

    /// self += a b^T (outer product accumulation)
    pub fn outer_acc(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for i in 0..self.rows {
            let ai = a[i];
            let row = self.row_mut(i);
            for (rj, bj) in row.iter_mut().zip(b.iter()) {
                *rj += ai * bj;
            }
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Zero-mean Gaussian init with variance `2/fan_in`.
pub fn kaiming_init<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Result<Mat> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("kaiming_init: fan_in must be >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    let mut m = Mat::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = dist.sample(rng);
    }
    Ok(m)
}

/// Mean squared error over all elements plus its gradient `2(pred-target)/count`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "mse_loss: pred {} vs target {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let d = pred[i] - target[i];
        loss += d * d;
        grad[i] = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Flat parameter access, used by Adam, checkpointing and gradient checks.
pub trait FlatParams {
    fn param_count(&self) -> usize;
    fn write_flat(&self, out: &mut Vec<f64>);
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>);

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.write_flat(&mut v);
        v
    }

    fn from_flat(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.param_count(), "flat parameter length mismatch");
        let mut it = src.iter();
        self.read_flat(&mut it);
    }
}

impl FlatParams for Mat {
    fn param_count(&self) -> usize {
        self.data.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.data);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        for v in self.data.iter_mut() {
            *v = *src.next().expect("flat underrun");
        }
    }
}

impl FlatParams for Vec<f64> {
    fn param_count(&self) -> usize {
        self.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        for v in self.iter_mut() {
            *v = *src.next().expect("flat underrun");
        }
    }
}
