//! Dense layers and small MLP stacks with explicit backward passes.

use super::{kaiming_init, sigmoid, FlatParams, Mat};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One dense layer: `y = act(W x + b)` with `W` out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Mat,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl DenseParams {
    pub fn zeros(out: usize, input: usize, activation: Activation) -> Self {
        DenseParams { w: Mat::zeros(out, input), b: vec![0.0; out], activation }
    }

    pub fn kaiming<R: Rng>(out: usize, input: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        Ok(DenseParams { w: kaiming_init(out, input, input, rng)?, b: vec![0.0; out], activation })
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols
    }

    /// Single-vector forward.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "dense forward: input {} vs {}",
                x.len(),
                self.in_dim()
            )));
        }
        let mut y = self.b.clone();
        self.w.matvec_acc(x, &mut y);
        for v in y.iter_mut() {
            *v = self.activation.apply(*v);
        }
        Ok(y)
    }

    /// Backward for a single vector given the cached input and output.
    /// Accumulates into `grads`, returns grad wrt the input.
    pub fn backward_vec(
        &self,
        x: &[f64],
        y: &[f64],
        grad_out: &[f64],
        grads: &mut DenseParams,
    ) -> Result<Vec<f64>> {
        if grad_out.len() != self.out_dim() {
            return Err(Error::ShapeMismatch("dense backward: grad dim".into()));
        }
        let da: Vec<f64> = (0..self.out_dim())
            .map(|i| grad_out[i] * self.activation.deriv_from_output(y[i]))
            .collect();
        grads.w.outer_acc(&da, x);
        for (bg, d) in grads.b.iter_mut().zip(&da) {
            *bg += d;
        }
        let mut gx = vec![0.0; self.in_dim()];
        self.w.matvec_t_acc(&da, &mut gx);
        Ok(gx)
    }
}

impl FlatParams for DenseParams {
    fn param_count(&self) -> usize {
        self.w.param_count() + self.b.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.w.write_flat(out);
        self.b.write_flat(out);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        self.w.read_flat(src);
        self.b.read_flat(src);
    }
}

/// A stack of dense layers applied to a batch of row vectors.
pub type Mlp = Vec<DenseParams>;

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// activations[0] is the input batch, activations[k] the output of layer k-1.
    pub activations: Vec<Mat>,
}

pub fn mlp_forward(layers: &Mlp, input: &Mat) -> Result<(Mat, MlpCache)> {
    let mut acts = vec![input.clone()];
    for layer in layers {
        let prev = acts.last().unwrap();
        let mut out = Mat::zeros(prev.rows, layer.out_dim());
        for i in 0..prev.rows {
            let y = layer.forward_vec(prev.row(i))?;
            out.row_mut(i).copy_from_slice(&y);
        }
        acts.push(out);
    }
    Ok((acts.last().unwrap().clone(), MlpCache { activations: acts }))
}

/// Reverse-mode through the whole stack; returns per-layer grads and grad wrt input.
pub fn mlp_backward(layers: &Mlp, cache: &MlpCache, grad_out: &Mat) -> Result<(Vec<DenseParams>, Mat)> {
    if cache.activations.len() != layers.len() + 1 {
        return Err(Error::ShapeMismatch("mlp_backward: stale cache".into()));
    }
    let mut grads: Vec<DenseParams> = layers
        .iter()
        .map(|l| DenseParams::zeros(l.out_dim(), l.in_dim(), l.activation))
        .collect();
    let mut g = grad_out.clone();
    for (k, layer) in layers.iter().enumerate().rev() {
        let x = &cache.activations[k];
        let y = &cache.activations[k + 1];
        let mut gx = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let gin = layer.backward_vec(x.row(i), y.row(i), g.row(i), &mut grads[k])?;
            gx.row_mut(i).copy_from_slice(&gin);
        }
        g = gx;
    }
    Ok((grads, g))
}

impl FlatParams for Mlp {
    fn param_count(&self) -> usize {
        self.iter().map(|l| l.param_count()).sum()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        for l in self {
            l.write_flat(out);
        }
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        for l in self.iter_mut() {
            l.read_flat(src);
        }
    }
}
