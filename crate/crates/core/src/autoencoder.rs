//! The learnable transceiver: a dense encoder producing a geometrically
//! shaped constellation, bitwise decoders (memoryless DNN and sequence-aware
//! Co-GRU), and the Co-GRU surrogate channel that stands in for the physical
//! link during encoder training.
//!
//! Complex symbols enter and leave networks as (I, Q) real pairs. The encoder
//! normalizer (unit mean power over the induced constellation) is re-derived
//! from the current weights on every call, and gradients flow through it.

use crate::nn::{
    cogru_backward, cogru_forward, mlp_backward, mlp_forward, Activation, AdamState, CoGruCache,
    CoGruGrads, CoGruLayer, DenseParams, FlatParams, Mat, Mlp, MlpCache,
};
use crate::signal::Constellation;
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;

/// Rows of (re, im) pairs from a complex slice.
pub fn symbols_to_mat(symbols: &[Complex64]) -> Mat {
    let mut m = Mat::zeros(symbols.len(), 2);
    for (i, s) in symbols.iter().enumerate() {
        m.set(i, 0, s.re);
        m.set(i, 1, s.im);
    }
    m
}

/// Complex symbols from rows of (re, im) pairs.
pub fn mat_to_symbols(m: &Mat) -> Vec<Complex64> {
    assert_eq!(m.cols, 2);
    (0..m.rows).map(|i| Complex64::new(m.get(i, 0), m.get(i, 1))).collect()
}

/// Dense encoder mapping one-hot(M) to an (I, Q) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Mlp,
}

impl Encoder {
    /// Two relu hidden layers of `hidden` units, identity output.
    pub fn kaiming<R: Rng>(m: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Encoder {
            layers: vec![
                DenseParams::kaiming(hidden, m, Activation::Relu, rng)?,
                DenseParams::kaiming(hidden, hidden, Activation::Relu, rng)?,
                DenseParams::kaiming(2, hidden, Activation::Identity, rng)?,
            ],
        })
    }

    /// Constellation order M.
    pub fn size(&self) -> usize {
        self.layers[0].in_dim()
    }
}

impl FlatParams for Encoder {
    fn param_count(&self) -> usize {
        self.layers.param_count()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.layers.write_flat(out);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        self.layers.read_flat(src);
    }
}

/// Forward state of one encoder evaluation over all M indices plus the
/// stream indices that were encoded with it.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    /// Raw (un-normalized) encoder outputs for all M one-hots, M x 2.
    pub raw: Mat,
    /// Power normalizer s, with points = raw / s.
    pub norm: f64,
    pub mlp_cache: MlpCache,
    pub indices: Vec<usize>,
}

fn encoder_table(encoder: &Encoder) -> Result<(Mat, f64, MlpCache)> {
    let m = encoder.size();
    let mut onehots = Mat::zeros(m, m);
    for i in 0..m {
        onehots.set(i, i, 1.0);
    }
    let (raw, cache) = mlp_forward(&encoder.layers, &onehots)?;
    let power: f64 = raw.data.iter().map(|v| v * v).sum::<f64>() / m as f64;
    if power <= 1e-24 {
        return Err(Error::Numeric("encoder: degenerate all-zero constellation".into()));
    }
    Ok((raw, power.sqrt(), cache))
}

/// The M normalized points with natural-binary labels.
pub fn encoder_constellation(encoder: &Encoder) -> Result<Constellation> {
    let (raw, s, _) = encoder_table(encoder)?;
    let m = encoder.size();
    let points: Vec<Complex64> =
        (0..m).map(|i| Complex64::new(raw.get(i, 0) / s, raw.get(i, 1) / s)).collect();
    // degenerate collapse: all points equal carries no information
    let first = points[0];
    if points.iter().all(|p| (p - first).norm() < 1e-12) {
        return Err(Error::Numeric("encoder: all constellation points coincide".into()));
    }
    Ok(Constellation { points, labels: (0..m as u32).collect() })
}

/// Encode a stream of point indices; returns the normalized symbols and the
/// cache needed for the backward pass.
pub fn encode_indices(encoder: &Encoder, indices: &[usize]) -> Result<(Vec<Complex64>, EncodeCache)> {
    let (raw, s, mlp_cache) = encoder_table(encoder)?;
    let m = encoder.size();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= m {
            return Err(Error::InvalidArgument(format!("encode: index {i} out of range")));
        }
        out.push(Complex64::new(raw.get(i, 0) / s, raw.get(i, 1) / s));
    }
    Ok((out, EncodeCache { raw, norm: s, mlp_cache, indices: indices.to_vec() }))
}

/// Accumulate per-stream-position gradients (w.r.t. the normalized symbols)
/// into per-constellation-point gradients.
pub fn scatter_stream_grads(cache: &EncodeCache, stream_grads: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if stream_grads.len() != cache.indices.len() {
        return Err(Error::ShapeMismatch("scatter: stream gradient length".into()));
    }
    let mut point_grads = vec![(0.0, 0.0); cache.raw.rows];
    for (&idx, g) in cache.indices.iter().zip(stream_grads) {
        point_grads[idx].0 += g.0;
        point_grads[idx].1 += g.1;
    }
    Ok(point_grads)
}

/// Reverse-mode through the normalizer and the encoder MLP.
///
/// `point_grads[j]` is dL/d(normalized point j), already summed over all of
/// its uses (stream positions, constellation-moment terms, ...).
pub fn encoder_backward(
    encoder: &Encoder,
    cache: &EncodeCache,
    point_grads: &[(f64, f64)],
) -> Result<Vec<DenseParams>> {
    let m = encoder.size();
    if point_grads.len() != m {
        return Err(Error::ShapeMismatch("encoder_backward: point gradient count".into()));
    }
    let s = cache.norm;
    // dL/du_j = g_j / s - u_j * (sum_i g_i . u_i) / (M s^3)
    let mut dot = 0.0;
    for (j, g) in point_grads.iter().enumerate() {
        dot += g.0 * cache.raw.get(j, 0) + g.1 * cache.raw.get(j, 1);
    }
    let mut grad_raw = Mat::zeros(m, 2);
    let c = dot / (m as f64 * s * s * s);
    for j in 0..m {
        grad_raw.set(j, 0, point_grads[j].0 / s - cache.raw.get(j, 0) * c);
        grad_raw.set(j, 1, point_grads[j].1 / s - cache.raw.get(j, 1) * c);
    }
    let (grads, _) = mlp_backward(&encoder.layers, &cache.mlp_cache, &grad_raw)?;
    Ok(grads)
}

/// Memoryless dense decoder: (I, Q) to m bit probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderDnn {
    pub layers: Mlp,
}

impl DecoderDnn {
    pub fn kaiming<R: Rng>(bits: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(DecoderDnn {
            layers: vec![
                DenseParams::kaiming(hidden, 2, Activation::Relu, rng)?,
                DenseParams::kaiming(hidden, hidden, Activation::Relu, rng)?,
                DenseParams::kaiming(bits, hidden, Activation::Sigmoid, rng)?,
            ],
        })
    }

    pub fn bits(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, rx: &[Complex64]) -> Result<(Mat, MlpCache)> {
        mlp_forward(&self.layers, &symbols_to_mat(rx))
    }
}

impl FlatParams for DecoderDnn {
    fn param_count(&self) -> usize {
        self.layers.param_count()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.layers.write_flat(out);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        self.layers.read_flat(src);
    }
}

/// Sequence-aware decoder: Co-GRU over (I, Q) rows with a sigmoid head of
/// m bit probabilities. Output row k corresponds to input symbol
/// k + edge_discard.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderCoGru {
    pub layer: CoGruLayer,
}

impl DecoderCoGru {
    pub fn kaiming<R: Rng>(
        bits: usize,
        hidden: usize,
        edge_discard: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(DecoderCoGru {
            layer: CoGruLayer::kaiming(hidden, 2, bits, Activation::Sigmoid, edge_discard, rng)?,
        })
    }

    pub fn bits(&self) -> usize {
        self.layer.output()
    }

    pub fn edge_discard(&self) -> usize {
        self.layer.edge_discard
    }

    pub fn forward(&self, rx: &[Complex64]) -> Result<(Mat, CoGruCache)> {
        cogru_forward(&self.layer, &symbols_to_mat(rx))
    }
}

impl FlatParams for DecoderCoGru {
    fn param_count(&self) -> usize {
        self.layer.param_count()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.layer.write_flat(out);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        self.layer.read_flat(src);
    }
}

/// Co-GRU surrogate of channel plus DSP: tx (I, Q) in, predicted rx (I, Q)
/// out, identity head.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateChannel {
    pub layer: CoGruLayer,
}

impl SurrogateChannel {
    pub fn kaiming<R: Rng>(hidden: usize, edge_discard: usize, rng: &mut R) -> Result<Self> {
        Ok(SurrogateChannel {
            layer: CoGruLayer::kaiming(hidden, 2, 2, Activation::Identity, edge_discard, rng)?,
        })
    }

    pub fn edge_discard(&self) -> usize {
        self.layer.edge_discard
    }

    pub fn forward(&self, tx: &[Complex64]) -> Result<(Mat, CoGruCache)> {
        cogru_forward(&self.layer, &symbols_to_mat(tx))
    }
}

impl FlatParams for SurrogateChannel {
    fn param_count(&self) -> usize {
        self.layer.param_count()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        self.layer.write_flat(out);
    }
    fn read_flat(&mut self, src: &mut std::slice::Iter<f64>) {
        self.layer.read_flat(src);
    }
}

/// Hard decisions from bit probabilities: threshold 0.5, ties to 0.
pub fn hard_bits(probs: &Mat) -> Vec<u8> {
    probs.data.iter().map(|&p| u8::from(p > 0.5)).collect()
}

/// One Adam step of the surrogate on MSE between its prediction and the
/// observed post-DSP rx sequence. `rx` must be aligned 1:1 with `tx`; only
/// the kept (non-edge) positions enter the loss. Returns the loss.
pub fn surrogate_fit_step(
    surrogate: &mut SurrogateChannel,
    adam: &mut AdamState,
    tx: &[Complex64],
    rx: &[Complex64],
) -> Result<f64> {
    if tx.len() != rx.len() {
        return Err(Error::ShapeMismatch(format!(
            "surrogate_fit_step: tx {} vs rx {}",
            tx.len(),
            rx.len()
        )));
    }
    let e = surrogate.edge_discard();
    let (pred, cache) = surrogate.forward(tx)?;
    let target = symbols_to_mat(&rx[e..rx.len() - e]);
    let (loss, grad) = crate::nn::mse_loss(&pred.data, &target.data)?;
    let gout = Mat { rows: pred.rows, cols: pred.cols, data: grad };
    let (grads, _) = cogru_backward(&surrogate.layer, &cache, &gout)?;
    let mut flat = surrogate.to_flat();
    adam.step(&mut flat, &grads.to_flat())?;
    surrogate.from_flat(&flat);
    Ok(loss)
}

/// Held-out MSE of the surrogate on an aligned (tx, rx) pair.
pub fn surrogate_mse(surrogate: &SurrogateChannel, tx: &[Complex64], rx: &[Complex64]) -> Result<f64> {
    let e = surrogate.edge_discard();
    let (pred, _) = surrogate.forward(tx)?;
    let target = symbols_to_mat(&rx[e..rx.len() - e]);
    Ok(crate::nn::mse_loss(&pred.data, &target.data)?.0)
}

/// Decoder gradients plus grad w.r.t. the decoder's complex input sequence.
pub fn decoder_cogru_backward(
    decoder: &DecoderCoGru,
    cache: &CoGruCache,
    grad_probs: &Mat,
) -> Result<(CoGruGrads, Mat)> {
    cogru_backward(&decoder.layer, cache, grad_probs)
}
