//! GRU cell: z/r gates, candidate state, convex-combination update.

use super::{kaiming_init, sigmoid, FlatParams, Mat};
use crate::{Error, Result};
use rand::Rng;

/// Weight tensors of one GRU cell.
///
/// `w*` are hidden x input, `u*` hidden x hidden, `b*` hidden. The same type
/// doubles as the gradient accumulator in the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub wz: Mat,
    pub wr: Mat,
    pub wh: Mat,
    pub uz: Mat,
    pub ur: Mat,
    pub uh: Mat,
    pub bz: Vec<f64>,
    pub br: Vec<f64>,
    pub bh: Vec<f64>,
}

impl GruParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        GruParams {
            wz: Mat::zeros(hidden, input),
            wr: Mat::zeros(hidden, input),
            wh: Mat::zeros(hidden, input),
            uz: Mat::zeros(hidden, hidden),
            ur: Mat::zeros(hidden, hidden),
            uh: Mat::zeros(hidden, hidden),
            bz: vec![0.0; hidden],
            br: vec![0.0; hidden],
            bh: vec![0.0; hidden],
        }
    }

    pub fn kaiming<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Result<Self> {
        Ok(GruParams {
            wz: kaiming_init(hidden, input, input, rng)?,
            wr: kaiming_init(hidden, input, input, rng)?,
            wh: kaiming_init(hidden, input, input, rng)?,
            uz: kaiming_init(hidden, hidden, hidden, rng)?,
            ur: kaiming_init(hidden, hidden, hidden, rng)?,
            uh: kaiming_init(hidden, hidden, hidden, rng)?,
            bz: vec![0.0; hidden],
            br: vec![0.0; hidden],
            bh: vec![0.0; hidden],
        })
    }

    pub fn hidden(&self) -> usize {
        self.wz.rows
    }

    pub fn input(&self) -> usize {
        self.wz.cols
    }

    pub fn check_dims(&self) -> Result<()> {
        let h = self.hidden();
        let i = self.input();
        let ok = [&self.wz, &self.wr, &self.wh].iter().all(|m| m.rows == h && m.cols == i)
            && [&self.uz, &self.ur, &self.uh].iter().all(|m| m.rows == h && m.cols == h)
            && [&self.bz, &self.br, &self.bh].iter().all(|b| b.len() == h);
        if !ok {
            return Err(Error::ShapeMismatch("GruParams tensors are inconsistent".into()));
        }
        Ok(())
    }

    fn tensors(&self) -> [&dyn FlatParams; 9] {
        [&self.wz, &self.wr, &self.wh, &self.uz, &self.ur, &self.uh, &self.bz, &self.br, &self.bh]
    }

    fn tensors_mut(&mut self) -> [&mut dyn FlatParams; 9] {
        [
            &mut self.wz,
            &mut self.wr,
            &mut self.wh,
            &mut self.uz,
            &mut self.ur,
            &mut self.uh,
            &mut self.bz,
            &mut self.br,
            &mut self.bh,
        ]
    }
}

impl FlatParams for GruParams {
    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.param_count()).sum()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        for t in self.tensors() {
            t.write_flat(out);
        }
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        for t in self.tensors_mut() {
            t.read_flat(src);
        }
    }
}

/// Output of one forward cell step: the new hidden state plus the gate caches
/// needed by the backward pass.
#[derive(Debug, Clone)]
pub struct GruState {
    pub h: Vec<f64>,
    pub cache: GruCellCache,
}

#[derive(Debug, Clone)]
pub struct GruCellCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

/// One GRU step:
/// z = sigma(Wz x + Uz h + bz), r = sigma(Wr x + Ur h + br),
/// h~ = tanh(Wh x + Uh (r .* h) + bh), h' = z .* h + (1 - z) .* h~.
pub fn gru_cell_forward(params: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<GruState> {
    let h = params.hidden();
    if x.len() != params.input() || h_prev.len() != h {
        return Err(Error::ShapeMismatch(format!(
            "gru_cell_forward: x {} (want {}), h_prev {} (want {})",
            x.len(),
            params.input(),
            h_prev.len(),
            h
        )));
    }
    let mut az = params.bz.clone();
    params.wz.matvec_acc(x, &mut az);
    params.uz.matvec_acc(h_prev, &mut az);
    let mut ar = params.br.clone();
    params.wr.matvec_acc(x, &mut ar);
    params.ur.matvec_acc(h_prev, &mut ar);
    let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
    let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
    let mut ah = params.bh.clone();
    params.wh.matvec_acc(x, &mut ah);
    params.uh.matvec_acc(&rh, &mut ah);
    let h_tilde: Vec<f64> = ah.iter().map(|&a| a.tanh()).collect();

    let h_new: Vec<f64> = (0..h).map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * h_tilde[i]).collect();
    Ok(GruState {
        h: h_new,
        cache: GruCellCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, h_tilde },
    })
}

/// Reverse-mode of `gru_cell_forward`.
///
/// Accumulates parameter gradients into `grads` and returns `(grad_x, grad_h_prev)`.
pub fn gru_cell_backward(
    params: &GruParams,
    cache: &GruCellCache,
    grad_h_out: &[f64],
    grads: &mut GruParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = params.hidden();
    if cache.h_prev.len() != h || grad_h_out.len() != h {
        return Err(Error::ShapeMismatch("gru_cell_backward: cache/grad dims".into()));
    }
    let g = grad_h_out;
    let (z, r, ht, hp) = (&cache.z, &cache.r, &cache.h_tilde, &cache.h_prev);

    // h' = z.*h_prev + (1-z).*h~
    let dz: Vec<f64> = (0..h).map(|i| g[i] * (hp[i] - ht[i])).collect();
    let dht: Vec<f64> = (0..h).map(|i| g[i] * (1.0 - z[i])).collect();
    let daz: Vec<f64> = (0..h).map(|i| dz[i] * z[i] * (1.0 - z[i])).collect();
    let dah: Vec<f64> = (0..h).map(|i| dht[i] * (1.0 - ht[i] * ht[i])).collect();

    // through Uh (r .* h_prev)
    let mut drh = vec![0.0; h];
    params.uh.matvec_t_acc(&dah, &mut drh);
    let dr: Vec<f64> = (0..h).map(|i| drh[i] * hp[i]).collect();
    let dar: Vec<f64> = (0..h).map(|i| dr[i] * r[i] * (1.0 - r[i])).collect();

    let mut grad_h_prev: Vec<f64> = (0..h).map(|i| g[i] * z[i] + drh[i] * r[i]).collect();
    params.uz.matvec_t_acc(&daz, &mut grad_h_prev);
    params.ur.matvec_t_acc(&dar, &mut grad_h_prev);

    let mut grad_x = vec![0.0; params.input()];
    params.wz.matvec_t_acc(&daz, &mut grad_x);
    params.wr.matvec_t_acc(&dar, &mut grad_x);
    params.wh.matvec_t_acc(&dah, &mut grad_x);

    let rh: Vec<f64> = (0..h).map(|i| r[i] * hp[i]).collect();
    grads.wz.outer_acc(&daz, &cache.x);
    grads.wr.outer_acc(&dar, &cache.x);
    grads.wh.outer_acc(&dah, &cache.x);
    grads.uz.outer_acc(&daz, hp);
    grads.ur.outer_acc(&dar, hp);
    grads.uh.outer_acc(&dah, &rh);
    for i in 0..h {
        grads.bz[i] += daz[i];
        grads.br[i] += dar[i];
        grads.bh[i] += dah[i];
    }
    Ok((grad_x, grad_h_prev))
}
