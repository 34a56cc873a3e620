//! Center-oriented bidirectional GRU layer.
//!
//! One left-to-right and one right-to-left recurrence are run once over the
//! whole sequence; the two hidden states at each position are concatenated
//! into a dense head. Edge positions are discarded. A sliding-window
//! bidirectional reference is provided for equivalence checks and benchmarks.

use super::{
    gru_cell_backward, gru_cell_forward, DenseParams, FlatParams, GruCellCache, GruParams, Mat,
};
use crate::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CoGruLayer {
    pub left: GruParams,
    pub right: GruParams,
    pub head: DenseParams,
    pub edge_discard: usize,
}

impl CoGruLayer {
    pub fn zeros(hidden: usize, input: usize, output: usize, act: super::dense::Activation, edge_discard: usize) -> Self {
        CoGruLayer {
            left: GruParams::zeros(hidden, input),
            right: GruParams::zeros(hidden, input),
            head: DenseParams::zeros(output, 2 * hidden, act),
            edge_discard,
        }
    }

    pub fn kaiming<R: Rng>(
        hidden: usize,
        input: usize,
        output: usize,
        act: super::dense::Activation,
        edge_discard: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(CoGruLayer {
            left: GruParams::kaiming(hidden, input, rng)?,
            right: GruParams::kaiming(hidden, input, rng)?,
            head: DenseParams::kaiming(output, 2 * hidden, act, rng)?,
            edge_discard,
        })
    }

    pub fn hidden(&self) -> usize {
        self.left.hidden()
    }

    pub fn input(&self) -> usize {
        self.left.input()
    }

    pub fn output(&self) -> usize {
        self.head.out_dim()
    }
}

impl FlatParams for CoGruLayer {
    fn param_count(&self) -> usize {
        self.left.param_count() + self.right.param_count() + self.head.param_count()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.left.write_flat(out);
        self.right.write_flat(out);
        self.head.write_flat(out);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        self.left.read_flat(src);
        self.right.read_flat(src);
        self.head.read_flat(src);
    }
}

/// Gradient accumulator matching `CoGruLayer`.
#[derive(Debug, Clone)]
pub struct CoGruGrads {
    pub left: GruParams,
    pub right: GruParams,
    pub head: DenseParams,
}

impl CoGruGrads {
    pub fn zeros_like(layer: &CoGruLayer) -> Self {
        CoGruGrads {
            left: GruParams::zeros(layer.hidden(), layer.input()),
            right: GruParams::zeros(layer.hidden(), layer.input()),
            head: DenseParams::zeros(layer.output(), 2 * layer.hidden(), layer.head.activation),
        }
    }
}

impl FlatParams for CoGruGrads {
    fn param_count(&self) -> usize {
        self.left.param_count() + self.right.param_count() + self.head.param_count()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.left.write_flat(out);
        self.right.write_flat(out);
        self.head.write_flat(out);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        self.left.read_flat(src);
        self.right.read_flat(src);
        self.head.read_flat(src);
    }
}

#[derive(Debug, Clone)]
pub struct CoGruCache {
    pub seq_len: usize,
    pub left_caches: Vec<GruCellCache>,
    pub right_caches: Vec<GruCellCache>,
    /// Hidden states after each step, in sequence position order.
    pub left_hidden: Mat,
    pub right_hidden: Mat,
    /// Head input (concatenated hidden) and output for the kept positions.
    pub head_in: Mat,
    pub head_out: Mat,
}

/// Run both recurrences once over the sequence and apply the head at every
/// kept position. Output row `k` corresponds to input position `k + edge_discard`.
pub fn cogru_forward(layer: &CoGruLayer, seq: &Mat) -> Result<(Mat, CoGruCache)> {
    let n = seq.rows;
    let e = layer.edge_discard;
    if seq.cols != layer.input() {
        return Err(Error::ShapeMismatch(format!(
            "cogru_forward: input dim {} vs {}",
            seq.cols,
            layer.input()
        )));
    }
    if n <= 2 * e {
        return Err(Error::InvalidArgument(format!(
            "cogru_forward: sequence length {n} must exceed 2*edge_discard = {}",
            2 * e
        )));
    }
    let h = layer.hidden();

    let run_dir = |params: &GruParams, reversed: bool| -> Result<(Vec<GruCellCache>, Mat)> {
        let mut caches = Vec::with_capacity(n);
        let mut hidden = Mat::zeros(n, h);
        let mut state = vec![0.0; h];
        for step in 0..n {
            let pos = if reversed { n - 1 - step } else { step };
            let st = gru_cell_forward(params, seq.row(pos), &state)?;
            state = st.h;
            hidden.row_mut(pos).copy_from_slice(&state);
            caches.push(st.cache);
        }
        Ok((caches, hidden))
    };

    let (left_res, right_res) =
        rayon::join(|| run_dir(&layer.left, false), || run_dir(&layer.right, true));
    let (left_caches, left_hidden) = left_res?;
    let (right_caches, right_hidden) = right_res?;

    let kept = n - 2 * e;
    let mut head_in = Mat::zeros(kept, 2 * h);
    let mut out = Mat::zeros(kept, layer.output());
    for k in 0..kept {
        let pos = k + e;
        let row = head_in.row_mut(k);
        row[..h].copy_from_slice(left_hidden.row(pos));
        row[h..].copy_from_slice(right_hidden.row(pos));
    }
    for k in 0..kept {
        let y = layer.head.forward_vec(head_in.row(k))?;
        out.row_mut(k).copy_from_slice(&y);
    }
    Ok((
        out.clone(),
        CoGruCache {
            seq_len: n,
            left_caches,
            right_caches,
            left_hidden,
            right_hidden,
            head_in,
            head_out: out,
        },
    ))
}

/// Reverse-mode of `cogru_forward`. Returns parameter grads and grad wrt the
/// input sequence. Discarded edge positions receive no upstream gradient.
pub fn cogru_backward(
    layer: &CoGruLayer,
    cache: &CoGruCache,
    grad_out: &Mat,
) -> Result<(CoGruGrads, Mat)> {
    let n = cache.seq_len;
    let e = layer.edge_discard;
    let h = layer.hidden();
    let kept = n - 2 * e;
    if grad_out.rows != kept || grad_out.cols != layer.output() {
        return Err(Error::ShapeMismatch(format!(
            "cogru_backward: grad_out {}x{} vs {}x{}",
            grad_out.rows,
            grad_out.cols,
            kept,
            layer.output()
        )));
    }
    if cache.left_caches.len() != n || cache.right_caches.len() != n {
        return Err(Error::ShapeMismatch("cogru_backward: stale cache".into()));
    }

    let mut grads = CoGruGrads::zeros_like(layer);

    // Head backward: per-position hidden-state gradients.
    let mut dh_left = Mat::zeros(n, h);
    let mut dh_right = Mat::zeros(n, h);
    for k in 0..kept {
        let gin = layer.head.backward_vec(
            cache.head_in.row(k),
            cache.head_out.row(k),
            grad_out.row(k),
            &mut grads.head,
        )?;
        let pos = k + e;
        dh_left.row_mut(pos).copy_from_slice(&gin[..h]);
        dh_right.row_mut(pos).copy_from_slice(&gin[h..]);
    }

    // The two recurrence backwards are independent.
    let back_dir = |params: &GruParams,
                    caches: &[GruCellCache],
                    dh: &Mat,
                    reversed: bool|
     -> Result<(GruParams, Mat)> {
        let mut pgrads = GruParams::zeros(h, layer.input());
        let mut gseq = Mat::zeros(n, layer.input());
        let mut carry = vec![0.0; h];
        // Iterate in reverse of the forward step order.
        for step in (0..n).rev() {
            let pos = if reversed { n - 1 - step } else { step };
            for (c, d) in carry.iter_mut().zip(dh.row(pos)) {
                *c += d;
            }
            let (gx, gh_prev) = gru_cell_backward(params, &caches[step], &carry, &mut pgrads)?;
            for (o, g) in gseq.row_mut(pos).iter_mut().zip(&gx) {
                *o += g;
            }
            carry = gh_prev;
        }
        Ok((pgrads, gseq))
    };

    let (lres, rres) = rayon::join(
        || back_dir(&layer.left, &cache.left_caches, &dh_left, false),
        || back_dir(&layer.right, &cache.right_caches, &dh_right, true),
    );
    let (lg, mut grad_seq) = lres?;
    let (rg, gseq_r) = rres?;
    grads.left = lg;
    grads.right = rg;
    for (a, b) in grad_seq.data.iter_mut().zip(&gseq_r.data) {
        *a += b;
    }
    Ok((grads, grad_seq))
}

/// Sliding-window bidirectional reference: for each position the recurrences
/// are re-run over a window of `2*half_window + 1` symbols centred on it.
/// Output covers positions where the full window fits.
pub fn windowed_bigru_forward(layer: &CoGruLayer, seq: &Mat, half_window: usize) -> Result<Mat> {
    let n = seq.rows;
    let l = half_window;
    if n < 2 * l + 1 {
        return Err(Error::InvalidArgument("windowed_bigru: sequence shorter than window".into()));
    }
    let h = layer.hidden();
    let mut out = Mat::zeros(n - 2 * l, layer.output());
    for center in l..n - l {
        let mut hl = vec![0.0; h];
        for pos in center - l..=center {
            hl = gru_cell_forward(&layer.left, seq.row(pos), &hl)?.h;
        }
        let mut hr = vec![0.0; h];
        for pos in (center..=center + l).rev() {
            hr = gru_cell_forward(&layer.right, seq.row(pos), &hr)?.h;
        }
        let mut concat = Vec::with_capacity(2 * h);
        concat.extend_from_slice(&hl);
        concat.extend_from_slice(&hr);
        let y = layer.head.forward_vec(&concat)?;
        out.row_mut(center - l).copy_from_slice(&y);
    }
    Ok(out)
}

/// Forward plus full reverse-mode of the sliding-window reference; used by the
/// compute benchmark. Gradients are accumulated over all window positions.
pub fn windowed_bigru_forward_backward(
    layer: &CoGruLayer,
    seq: &Mat,
    half_window: usize,
    grad_out: &Mat,
) -> Result<CoGruGrads> {
    let n = seq.rows;
    let l = half_window;
    let h = layer.hidden();
    let mut grads = CoGruGrads::zeros_like(layer);
    for center in l..n - l {
        let mut hl = vec![0.0; h];
        let mut lcaches = Vec::with_capacity(l + 1);
        for pos in center - l..=center {
            let st = gru_cell_forward(&layer.left, seq.row(pos), &hl)?;
            hl = st.h;
            lcaches.push(st.cache);
        }
        let mut hr = vec![0.0; h];
        let mut rcaches = Vec::with_capacity(l + 1);
        for pos in (center..=center + l).rev() {
            let st = gru_cell_forward(&layer.right, seq.row(pos), &hr)?;
            hr = st.h;
            rcaches.push(st.cache);
        }
        let mut concat = Vec::with_capacity(2 * h);
        concat.extend_from_slice(&hl);
        concat.extend_from_slice(&hr);
        let y = layer.head.forward_vec(&concat)?;
        let gin = layer.head.backward_vec(&concat, &y, grad_out.row(center - l), &mut grads.head)?;
        let mut carry = gin[..h].to_vec();
        for cache in lcaches.iter().rev() {
            let (_, gh) = gru_cell_backward(&layer.left, cache, &carry, &mut grads.left)?;
            carry = gh;
        }
        let mut carry = gin[h..].to_vec();
        for cache in rcaches.iter().rev() {
            let (_, gh) = gru_cell_backward(&layer.right, cache, &carry, &mut grads.right)?;
            carry = gh;
        }
    }
    Ok(grads)
}
