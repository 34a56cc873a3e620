//! Three-phase training of the learned transceiver and the evaluation sweep
//! against a conventional Gray-mapped square-QAM system.
//!
//! Phase I trains encoder and decoder jointly through the differentiable
//! statistical NLIN channel. Phase II freezes the encoder, transmits fresh
//! data through the split-step fiber link every epoch, and fits the Co-GRU
//! surrogate channel and the decoder on the measured post-DSP sequences.
//! Phase III alternates: early in each period the encoder trains through the
//! frozen surrogate while surrogate and decoder keep tracking; late in the
//! period only surrogate and decoder update. The deployed model is the
//! period checkpoint with the lowest mean BER over the tail of its period.

use crate::autoencoder::{
    decoder_cogru_backward, encode_indices, encoder_backward, encoder_constellation, hard_bits,
    scatter_stream_grads, symbols_to_mat, DecoderCoGru, Encoder, SurrogateChannel,
};
use crate::channel::{mu4_and_grad, nlin_channel, ssfm_link, LinkConfig};
use crate::config::ExperimentConfig;
use crate::dsp::{receive, transmit_frame, Frame};
use crate::metrics::{fit_noise_variance, gmi_gauss_hermite, q2_from_ber, MetricReport};
use crate::nn::{
    cogru_backward, cogru_forward, mse_loss, AdamState, Checkpoint, FlatParams, Mat,
};
use crate::signal::{
    evm_db, rrc_taps, set_launch_power, shape_pulse, square_qam, wdm_demux, wdm_mux, Constellation,
    DualPolSignal,
};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

/// Learning rates and step counts of the three-phase schedule.
///
/// Names: `a` is the encoder, `b` the surrogate channel, `c` the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSchedule {
    pub p1_lr_a: f64,
    pub p1_lr_c: f64,
    pub p2_lr_b: f64,
    pub p2_lr_c: f64,
    pub p2_b_steps: usize,
    pub p2_c_steps: usize,
    pub p3_lr_a: f64,
    pub p3_lr_b: f64,
    pub p3_lr_c: f64,
    /// Epochs at the start of each phase-III period that include encoder
    /// updates.
    pub p3_early_epochs: usize,
    pub p3_a_steps: usize,
    pub p3_b_steps_early: usize,
    pub p3_c_steps_early: usize,
    pub p3_b_steps_late: usize,
    pub p3_c_steps_late: usize,
    /// Length of one phase-III period in epochs.
    pub p3_period_epochs: usize,
    /// Tail window (epochs) whose mean BER selects the deployed period.
    pub p3_select_last: usize,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        PhaseSchedule {
            p1_lr_a: 1e-3,
            p1_lr_c: 1e-3,
            p2_lr_b: 1e-3,
            p2_lr_c: 1e-2,
            p2_b_steps: 10,
            p2_c_steps: 10,
            p3_lr_a: 1e-3,
            p3_lr_b: 1e-3,
            p3_lr_c: 1e-3,
            p3_early_epochs: 25,
            p3_a_steps: 2,
            p3_b_steps_early: 10,
            p3_c_steps_early: 2,
            p3_b_steps_late: 10,
            p3_c_steps_late: 10,
            p3_period_epochs: 100,
            p3_select_last: 75,
        }
    }
}

/// Sizes, epoch counts and seeds of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Constellation order M (bits/symbol = log2 M, must be even for the
    /// square-QAM baseline).
    pub qam_order: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub surrogate_hidden: usize,
    /// Co-GRU edge positions discarded on each side (decoder and surrogate).
    pub edge_discard: usize,
    /// Payload symbols per polarization per epoch.
    pub symbols_per_epoch: usize,
    /// Symbols per phase-I epoch; 0 means `symbols_per_epoch`. Phase I runs
    /// on the cheap statistical channel, so it can afford much larger epochs
    /// than the split-step phases.
    pub phase1_symbols: usize,
    /// Minibatches per phase-I epoch.
    pub phase1_batches: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub phase3_periods: usize,
    /// Launch power used during training and surrogate fitting.
    pub launch_power_dbm: f64,
    /// Base seed; epoch data seeds are `seed + global_epoch`.
    pub seed: u64,
    pub schedule: PhaseSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            qam_order: 64,
            encoder_hidden: 64,
            decoder_hidden: 32,
            surrogate_hidden: 32,
            edge_discard: 16,
            symbols_per_epoch: 1 << 14,
            phase1_symbols: 0,
            phase1_batches: 8,
            phase1_epochs: 500,
            phase2_epochs: 2000,
            phase3_periods: 2,
            launch_power_dbm: 0.0,
            seed: 1,
            schedule: PhaseSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn bits_per_symbol(&self) -> usize {
        self.qam_order.trailing_zeros() as usize
    }

    /// Symbols per phase-I epoch (falls back to `symbols_per_epoch`).
    pub fn phase1_symbols_per_epoch(&self) -> usize {
        if self.phase1_symbols > 0 {
            self.phase1_symbols
        } else {
            self.symbols_per_epoch
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.qam_order;
        if !m.is_power_of_two() || m < 4 || self.bits_per_symbol() % 2 != 0 {
            return Err(Error::Config(format!(
                "train: qam_order {m} must be an even power of two >= 4"
            )));
        }
        if self.encoder_hidden == 0 || self.decoder_hidden == 0 || self.surrogate_hidden == 0 {
            return Err(Error::Config("train: hidden sizes must be positive".into()));
        }
        if self.phase1_batches == 0 || self.phase1_symbols_per_epoch() % self.phase1_batches != 0 {
            return Err(Error::Config(
                "train: phase1_batches must divide the phase-I epoch size".into(),
            ));
        }
        let batch = self.phase1_symbols_per_epoch() / self.phase1_batches;
        if batch <= 4 * self.edge_discard + 1 {
            return Err(Error::Config(
                "train: batches too short for the configured edge_discard".into(),
            ));
        }
        let s = &self.schedule;
        for lr in [
            s.p1_lr_a, s.p1_lr_c, s.p2_lr_b, s.p2_lr_c, s.p3_lr_a, s.p3_lr_b, s.p3_lr_c,
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config("train: learning rates must be positive".into()));
            }
        }
        if s.p3_period_epochs == 0
            || s.p3_early_epochs > s.p3_period_epochs
            || s.p3_select_last == 0
            || s.p3_select_last > s.p3_period_epochs
        {
            return Err(Error::Config("train: inconsistent phase-III period layout".into()));
        }
        Ok(())
    }
}

/// Training phase selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    I,
    II,
    III,
}

impl std::str::FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Phase::I),
            "II" | "2" => Ok(Phase::II),
            "III" | "3" => Ok(Phase::III),
            other => Err(Error::InvalidArgument(format!("unknown phase {other:?}"))),
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::I => "I",
            Phase::II => "II",
            Phase::III => "III",
        })
    }
}

/// One epoch of the training log. Step counts (`n_a`, `n_b`, `n_c`) and the
/// learning rates actually applied are recorded so a run's schedule can be
/// audited after the fact; unused entries are NaN/0.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    /// Global 1-based epoch index across all phases.
    pub epoch: usize,
    pub phase: u8,
    /// Phase-III period index (0 elsewhere).
    pub period: usize,
    /// Decoder bitwise MSE at the end of the epoch's updates.
    pub loss: f64,
    /// Surrogate MSE after the epoch's updates (NaN outside phases II/III).
    pub mse_surrogate: f64,
    pub ber: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub n_c: usize,
    pub lr_a: f64,
    pub lr_b: f64,
    pub lr_c: f64,
    pub wall_ms: f64,
}

/// CSV dump of the training history. Wall time is kept out of the CSV so
/// repeated runs with the same seed produce byte-identical files.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s =
        String::from("epoch,phase,period,loss,mse_surrogate,ber,n_a,n_b,n_c,lr_a,lr_b,lr_c\n");
    for r in history {
        writeln!(
            s,
            "{},{},{},{:.16e},{:.16e},{:.16e},{},{},{},{:.16e},{:.16e},{:.16e}",
            r.epoch,
            r.phase,
            r.period,
            r.loss,
            r.mse_surrogate,
            r.ber,
            r.n_a,
            r.n_b,
            r.n_c,
            r.lr_a,
            r.lr_b,
            r.lr_c
        )
        .unwrap();
    }
    s
}

/// The learnable system plus its training log.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub encoder: Encoder,
    pub decoder: DecoderCoGru,
    pub surrogate: SurrogateChannel,
    pub history: Vec<EpochRecord>,
    /// Completed global epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn init(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.train.validate()?;
        let t = &cfg.train;
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
        Ok(TrainState {
            encoder: Encoder::kaiming(t.qam_order, t.encoder_hidden, &mut rng)?,
            decoder: DecoderCoGru::kaiming(
                t.bits_per_symbol(),
                t.decoder_hidden,
                t.edge_discard,
                &mut rng,
            )?,
            surrogate: SurrogateChannel::kaiming(t.surrogate_hidden, t.edge_discard, &mut rng)?,
            history: Vec::new(),
            epoch: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add("encoder", &[self.encoder.param_count()], &self.encoder.to_flat());
        ck.add("decoder", &[self.decoder.param_count()], &self.decoder.to_flat());
        ck.add("surrogate", &[self.surrogate.param_count()], &self.surrogate.to_flat());
        ck.add("epoch", &[1], &[self.epoch as f64]);
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        for (name, count) in [
            ("encoder", self.encoder.param_count()),
            ("decoder", self.decoder.param_count()),
            ("surrogate", self.surrogate.param_count()),
        ] {
            let e = ck.get(name)?;
            if e.values.len() != count {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected {count} parameters, found {}",
                    e.values.len()
                )));
            }
        }
        self.encoder.from_flat(&ck.get("encoder")?.values);
        self.decoder.from_flat(&ck.get("decoder")?.values);
        self.surrogate.from_flat(&ck.get("surrogate")?.values);
        self.epoch = ck.get("epoch")?.values[0] as usize;
        Ok(())
    }
}

/// Natural-binary bits of point indices, MSB first, as 0/1 floats.
pub fn index_bits_f64(indices: &[usize], bits: usize) -> Vec<f64> {
    indices
        .iter()
        .flat_map(|&i| (0..bits).rev().map(move |k| ((i >> k) & 1) as f64))
        .collect()
}

/// Natural-binary bits of point indices, MSB first.
pub fn index_bits_u8(indices: &[usize], bits: usize) -> Vec<u8> {
    indices
        .iter()
        .flat_map(|&i| (0..bits).rev().map(move |k| ((i >> k) & 1) as u8))
        .collect()
}

fn random_indices<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..m)).collect()
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("{what}: non-finite loss")))
    }
}

/// One Adam step of the decoder on bitwise MSE, gradients summed over the
/// given (rx sequence, kept-target bits) batches. Returns the mean loss.
fn decoder_step(
    decoder: &mut DecoderCoGru,
    adam: &mut AdamState,
    batches: &[(&[Complex64], &[f64])],
) -> Result<f64> {
    let mut acc = vec![0.0; decoder.param_count()];
    let mut loss_sum = 0.0;
    for (rx, targets) in batches {
        let (probs, cache) = decoder.forward(rx)?;
        let (loss, g) = mse_loss(&probs.data, targets)?;
        finite(loss, "decoder")?;
        let gout = Mat { rows: probs.rows, cols: probs.cols, data: g };
        let (grads, _) = decoder_cogru_backward(decoder, &cache, &gout)?;
        for (a, b) in acc.iter_mut().zip(grads.to_flat()) {
            *a += b;
        }
        loss_sum += loss;
    }
    let mut flat = decoder.to_flat();
    adam.step(&mut flat, &acc)?;
    decoder.from_flat(&flat);
    Ok(loss_sum / batches.len() as f64)
}

/// One Adam step of the surrogate on MSE against measured rx sequences,
/// gradients summed over the given aligned (tx, rx) pairs.
fn surrogate_step(
    surrogate: &mut SurrogateChannel,
    adam: &mut AdamState,
    pairs: &[(&[Complex64], &[Complex64])],
) -> Result<f64> {
    let e = surrogate.edge_discard();
    let mut acc = vec![0.0; surrogate.param_count()];
    let mut loss_sum = 0.0;
    for (tx, rx) in pairs {
        if tx.len() != rx.len() {
            return Err(Error::ShapeMismatch("surrogate_step: tx/rx lengths".into()));
        }
        let (pred, cache) = surrogate.forward(tx)?;
        let target = symbols_to_mat(&rx[e..rx.len() - e]);
        let (loss, g) = mse_loss(&pred.data, &target.data)?;
        finite(loss, "surrogate")?;
        let gout = Mat { rows: pred.rows, cols: pred.cols, data: g };
        let (grads, _) = cogru_backward(&surrogate.layer, &cache, &gout)?;
        for (a, b) in acc.iter_mut().zip(grads.to_flat()) {
            *a += b;
        }
        loss_sum += loss;
    }
    let mut flat = surrogate.to_flat();
    adam.step(&mut flat, &acc)?;
    surrogate.from_flat(&flat);
    Ok(loss_sum / pairs.len() as f64)
}

/// One Adam step of the encoder through the frozen surrogate and decoder,
/// gradients summed over (index stream, kept-target bits) batches. Targets
/// must be aligned to indices `[e_s + e_d .. n - e_s - e_d)`.
fn encoder_chain_step(
    encoder: &mut Encoder,
    adam: &mut AdamState,
    surrogate: &SurrogateChannel,
    decoder: &DecoderCoGru,
    batches: &[(&[usize], &[f64])],
) -> Result<f64> {
    let mut acc = vec![0.0; encoder.param_count()];
    let mut loss_sum = 0.0;
    for (indices, targets) in batches {
        let (syms, ecache) = encode_indices(encoder, indices)?;
        let (pred, scache) = surrogate.forward(&syms)?;
        let (probs, dcache) = cogru_forward(&decoder.layer, &pred)?;
        let (loss, g) = mse_loss(&probs.data, targets)?;
        finite(loss, "encoder chain")?;
        let gout = Mat { rows: probs.rows, cols: probs.cols, data: g };
        let (_, gpred) = cogru_backward(&decoder.layer, &dcache, &gout)?;
        let (_, gsyms) = cogru_backward(&surrogate.layer, &scache, &gpred)?;
        let stream: Vec<(f64, f64)> =
            (0..gsyms.rows).map(|i| (gsyms.get(i, 0), gsyms.get(i, 1))).collect();
        let point_grads = scatter_stream_grads(&ecache, &stream)?;
        let egrads = encoder_backward(encoder, &ecache, &point_grads)?;
        for (a, b) in acc.iter_mut().zip(egrads.to_flat()) {
            *a += b;
        }
        loss_sum += loss;
    }
    let mut flat = encoder.to_flat();
    adam.step(&mut flat, &acc)?;
    encoder.from_flat(&flat);
    Ok(loss_sum / batches.len() as f64)
}

/// Bit errors and bit count of the Co-GRU decoder on one rx sequence against
/// the natural-binary labels of the transmitted indices (kept region only).
pub fn decoder_ber(
    decoder: &DecoderCoGru,
    rx: &[Complex64],
    indices: &[usize],
    bits: usize,
) -> Result<(usize, usize)> {
    if rx.len() != indices.len() {
        return Err(Error::ShapeMismatch("decoder_ber: rx/index lengths".into()));
    }
    let e = decoder.edge_discard();
    let (probs, _) = decoder.forward(rx)?;
    let decided = hard_bits(&probs);
    let target = index_bits_u8(&indices[e..indices.len() - e], bits);
    if decided.len() != target.len() {
        return Err(Error::ShapeMismatch("decoder_ber: bit counts".into()));
    }
    let errors = decided.iter().zip(&target).filter(|(a, b)| a != b).count();
    Ok((errors, target.len()))
}

/// Warm-start the encoder at the conventional constellation: fit its
/// normalized output table to Gray-mapped square QAM so that index `i` lands
/// on the point whose Gray label is `i`. Training then shapes from parity
/// with the baseline instead of from a random cloud. Deterministic (full
/// batch, no sampling); returns the final table MSE.
pub fn pretrain_encoder(encoder: &mut Encoder, steps: usize, lr: f64) -> Result<f64> {
    let m = encoder.size();
    let qam = square_qam(m)?;
    let mut targets = vec![Complex64::new(0.0, 0.0); m];
    for (p, &label) in qam.points.iter().zip(&qam.labels) {
        targets[label as usize] = *p;
    }
    let mut adam = AdamState::new(encoder.param_count(), lr)?;
    let mut mse = f64::INFINITY;
    for _ in 0..steps {
        let (_, ecache) = encode_indices(encoder, &[])?;
        let mut point_grads = Vec::with_capacity(m);
        let mut err = 0.0;
        for (j, t) in targets.iter().enumerate() {
            let p = Complex64::new(
                ecache.raw.get(j, 0) / ecache.norm,
                ecache.raw.get(j, 1) / ecache.norm,
            );
            let d = p - t;
            err += d.norm_sqr();
            point_grads.push((2.0 * d.re / m as f64, 2.0 * d.im / m as f64));
        }
        mse = err / m as f64;
        if mse < 1e-10 {
            break;
        }
        let egrads = encoder_backward(encoder, &ecache, &point_grads)?;
        let mut flat = encoder.to_flat();
        adam.step(&mut flat, &egrads.to_flat())?;
        encoder.from_flat(&flat);
    }
    finite(mse, "encoder pretrain")?;
    Ok(mse)
}

/// Phase I: encoder and decoder train jointly through the reparameterized
/// NLIN channel; the shaping gradient reaches the noise variance through the
/// constellation's fourth moment.
pub fn phase1_run(state: &mut TrainState, cfg: &ExperimentConfig, epochs: usize) -> Result<()> {
    let t = &cfg.train;
    let sched = &t.schedule;
    let bits = t.bits_per_symbol();
    let m = t.qam_order;
    let e_d = state.decoder.edge_discard();
    let p_dbm = t.launch_power_dbm;
    let mut adam_a = AdamState::new(state.encoder.param_count(), sched.p1_lr_a)?;
    let mut adam_c = AdamState::new(state.decoder.param_count(), sched.p1_lr_c)?;
    for _ in 0..epochs {
        let t0 = Instant::now();
        state.epoch += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed.wrapping_add(state.epoch as u64));
        let batch = t.phase1_symbols_per_epoch() / t.phase1_batches;
        let (mut n_a, mut n_c) = (0usize, 0usize);
        let mut loss_sum = 0.0;
        let (mut errs, mut tot) = (0usize, 0usize);
        for _ in 0..t.phase1_batches {
            let indices = random_indices(batch, m, &mut rng);
            let (syms, ecache) = encode_indices(&state.encoder, &indices)?;
            let points: Vec<Complex64> = (0..m)
                .map(|j| {
                    Complex64::new(
                        ecache.raw.get(j, 0) / ecache.norm,
                        ecache.raw.get(j, 1) / ecache.norm,
                    )
                })
                .collect();
            let (mu4, mu4_grads) = mu4_and_grad(&points);
            let draw = nlin_channel(&syms, mu4, p_dbm, &cfg.nlin, &mut rng)?;

            let (probs, dcache) = state.decoder.forward(&draw.y)?;
            let targets = index_bits_f64(&indices[e_d..batch - e_d], bits);
            let (loss, g) = mse_loss(&probs.data, &targets)?;
            finite(loss, "phase I")?;
            loss_sum += loss;
            let decided = hard_bits(&probs);
            let tbits = index_bits_u8(&indices[e_d..batch - e_d], bits);
            errs += decided.iter().zip(&tbits).filter(|(a, b)| a != b).count();
            tot += tbits.len();

            let gout = Mat { rows: probs.rows, cols: probs.cols, data: g };
            let (dgrads, gy) = decoder_cogru_backward(&state.decoder, &dcache, &gout)?;

            // y = x + sigma eps: the gradient w.r.t. x is gy itself; the
            // shaping term flows through sigma(mu4)
            let mut dl_dsigma = 0.0;
            for (i, eps) in draw.eps.iter().enumerate() {
                dl_dsigma += gy.get(i, 0) * eps.re + gy.get(i, 1) * eps.im;
            }
            let dl_dmu4 = dl_dsigma * cfg.nlin.dsigma_sq_dmu4(p_dbm) / (2.0 * draw.sigma);
            let stream: Vec<(f64, f64)> =
                (0..gy.rows).map(|i| (gy.get(i, 0), gy.get(i, 1))).collect();
            let mut point_grads = scatter_stream_grads(&ecache, &stream)?;
            for (pg, mg) in point_grads.iter_mut().zip(&mu4_grads) {
                pg.0 += dl_dmu4 * mg.0;
                pg.1 += dl_dmu4 * mg.1;
            }
            let egrads = encoder_backward(&state.encoder, &ecache, &point_grads)?;

            let mut flat = state.encoder.to_flat();
            adam_a.step(&mut flat, &egrads.to_flat())?;
            state.encoder.from_flat(&flat);
            n_a += 1;
            let mut flat = state.decoder.to_flat();
            adam_c.step(&mut flat, &dgrads.to_flat())?;
            state.decoder.from_flat(&flat);
            n_c += 1;
        }
        state.history.push(EpochRecord {
            epoch: state.epoch,
            phase: 1,
            period: 0,
            loss: loss_sum / t.phase1_batches as f64,
            mse_surrogate: f64::NAN,
            ber: errs as f64 / tot as f64,
            n_a,
            n_b: 0,
            n_c,
            lr_a: sched.p1_lr_a,
            lr_b: f64::NAN,
            lr_c: sched.p1_lr_c,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(())
}

/// Transmit one epoch of payload through the split-step link and run the
/// full receiver; returns the recovered payload streams per polarization.
pub fn run_link_epoch(
    points: &[Complex64],
    indices_x: &[usize],
    indices_y: &[usize],
    cfg: &ExperimentConfig,
    p_dbm: f64,
    n_spans: usize,
    seed: u64,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let link = LinkConfig { n_spans, ..cfg.link.clone() };
    link.validate()?;
    let payload_x: Vec<Complex64> = indices_x.iter().map(|&i| points[i]).collect();
    let payload_y: Vec<Complex64> = indices_y.iter().map(|&i| points[i]).collect();
    let frame = Frame::build(&payload_x, &payload_y, &cfg.dsp, seed ^ 0x9E37_79B9_7F4A_7C15)?;
    let pulse = rrc_taps(cfg.pulse.rolloff, link.sps, cfg.pulse.span)?;
    let fs = link.sample_rate();
    let mut tx = transmit_frame(&frame, &pulse, fs)?;
    set_launch_power(&mut tx, p_dbm)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00_5EED_1234);
    let rx_signal = if link.n_channels > 1 {
        // co-propagating neighbors carry independent Gray square-QAM data
        let q = square_qam(64)?;
        let n_syms = tx.len() / link.sps;
        let mut channels = Vec::with_capacity(link.n_channels);
        for k in 0..link.n_channels {
            if k == link.n_channels / 2 {
                channels.push(tx.clone());
                continue;
            }
            let mut nrng = ChaCha8Rng::seed_from_u64(seed ^ (0xAAAA_0000 + k as u64));
            let sx: Vec<Complex64> =
                (0..n_syms).map(|_| q.points[nrng.gen_range(0..64)]).collect();
            let sy: Vec<Complex64> =
                (0..n_syms).map(|_| q.points[nrng.gen_range(0..64)]).collect();
            let mut ch = DualPolSignal::new(
                shape_pulse(&sx, &pulse)?,
                shape_pulse(&sy, &pulse)?,
                fs,
            )?;
            set_launch_power(&mut ch, p_dbm)?;
            channels.push(ch);
        }
        let muxed = wdm_mux(&channels, link.spacing_hz)?;
        let propagated = ssfm_link(&muxed, &link, &mut rng)?;
        wdm_demux(
            &propagated,
            link.n_channels / 2,
            link.n_channels,
            link.spacing_hz,
            link.baud * (1.0 + cfg.pulse.rolloff),
        )?
    } else {
        ssfm_link(&tx, &link, &mut rng)?
    };

    let out = receive(&rx_signal, &frame, &pulse, &link, &cfg.dsp)?;
    Ok((out.payload_x, out.payload_y))
}

/// `run_link_epoch` with retry on synchronization failure: each retry uses a
/// perturbed seed (new preamble and noise) and is logged.
pub fn run_link_epoch_retry(
    points: &[Complex64],
    indices_x: &[usize],
    indices_y: &[usize],
    cfg: &ExperimentConfig,
    p_dbm: f64,
    n_spans: usize,
    seed: u64,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let mut attempt = 0u64;
    loop {
        match run_link_epoch(
            points,
            indices_x,
            indices_y,
            cfg,
            p_dbm,
            n_spans,
            seed.wrapping_add(attempt * 0x517C_C1B7),
        ) {
            Err(Error::SyncFailure(msg)) if attempt < 3 => {
                attempt += 1;
                log::warn!("sync failure (attempt {attempt}): {msg}; retrying with new seed");
            }
            other => return other,
        }
    }
}

struct SsfmEpoch {
    indices_x: Vec<usize>,
    indices_y: Vec<usize>,
    tx_x: Vec<Complex64>,
    tx_y: Vec<Complex64>,
    rx_x: Vec<Complex64>,
    rx_y: Vec<Complex64>,
}

fn ssfm_epoch_data(
    points: &[Complex64],
    cfg: &ExperimentConfig,
    data_seed: u64,
) -> Result<SsfmEpoch> {
    let t = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let indices_x = random_indices(t.symbols_per_epoch, points.len(), &mut rng);
    let indices_y = random_indices(t.symbols_per_epoch, points.len(), &mut rng);
    let (rx_x, rx_y) = run_link_epoch_retry(
        points,
        &indices_x,
        &indices_y,
        cfg,
        t.launch_power_dbm,
        cfg.link.n_spans,
        data_seed,
    )?;
    let tx_x = indices_x.iter().map(|&i| points[i]).collect();
    let tx_y = indices_y.iter().map(|&i| points[i]).collect();
    Ok(SsfmEpoch { indices_x, indices_y, tx_x, tx_y, rx_x, rx_y })
}

fn epoch_ber(state: &TrainState, data: &SsfmEpoch, bits: usize) -> Result<f64> {
    let (e1, t1) = decoder_ber(&state.decoder, &data.rx_x, &data.indices_x, bits)?;
    let (e2, t2) = decoder_ber(&state.decoder, &data.rx_y, &data.indices_y, bits)?;
    Ok((e1 + e2) as f64 / (t1 + t2) as f64)
}

/// Phase II: the encoder is frozen; every epoch transmits fresh data through
/// the fiber link, then the surrogate and the decoder each take their
/// scheduled number of Adam steps on the measured sequences.
pub fn phase2_run(state: &mut TrainState, cfg: &ExperimentConfig, epochs: usize) -> Result<()> {
    let t = &cfg.train;
    let sched = &t.schedule;
    let bits = t.bits_per_symbol();
    let e_d = state.decoder.edge_discard();
    let points = encoder_constellation(&state.encoder)?.points;
    let enc_before = state.encoder.to_flat();
    let mut adam_b = AdamState::new(state.surrogate.param_count(), sched.p2_lr_b)?;
    let mut adam_c = AdamState::new(state.decoder.param_count(), sched.p2_lr_c)?;
    for _ in 0..epochs {
        let t0 = Instant::now();
        state.epoch += 1;
        let data = ssfm_epoch_data(&points, cfg, t.seed.wrapping_add(state.epoch as u64))?;
        let (mut n_b, mut n_c) = (0usize, 0usize);
        let mut smse = f64::NAN;
        for _ in 0..sched.p2_b_steps {
            smse = surrogate_step(
                &mut state.surrogate,
                &mut adam_b,
                &[(&data.tx_x, &data.rx_x), (&data.tx_y, &data.rx_y)],
            )?;
            n_b += 1;
        }
        let n = data.indices_x.len();
        let tgt_x = index_bits_f64(&data.indices_x[e_d..n - e_d], bits);
        let tgt_y = index_bits_f64(&data.indices_y[e_d..n - e_d], bits);
        let mut closs = f64::NAN;
        for _ in 0..sched.p2_c_steps {
            closs = decoder_step(
                &mut state.decoder,
                &mut adam_c,
                &[(&data.rx_x, &tgt_x), (&data.rx_y, &tgt_y)],
            )?;
            n_c += 1;
        }
        let ber = epoch_ber(state, &data, bits)?;
        state.history.push(EpochRecord {
            epoch: state.epoch,
            phase: 2,
            period: 0,
            loss: closs,
            mse_surrogate: smse,
            ber,
            n_a: 0,
            n_b,
            n_c,
            lr_a: f64::NAN,
            lr_b: sched.p2_lr_b,
            lr_c: sched.p2_lr_c,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }
    if state.encoder.to_flat() != enc_before {
        return Err(Error::Numeric("phase II: encoder changed while frozen".into()));
    }
    Ok(())
}

/// Phase III: periods of joint refinement. Returns the index of the selected
/// period, whose end-of-period checkpoint is restored into `state`.
pub fn phase3_run(state: &mut TrainState, cfg: &ExperimentConfig, periods: usize) -> Result<usize> {
    let t = &cfg.train;
    let sched = &t.schedule;
    let bits = t.bits_per_symbol();
    let e_d = state.decoder.edge_discard();
    let e_s = state.surrogate.edge_discard();
    let mut adam_a = AdamState::new(state.encoder.param_count(), sched.p3_lr_a)?;
    let mut adam_b = AdamState::new(state.surrogate.param_count(), sched.p3_lr_b)?;
    let mut adam_c = AdamState::new(state.decoder.param_count(), sched.p3_lr_c)?;
    let mut checkpoints = Vec::with_capacity(periods);
    let mut period_bers: Vec<Vec<f64>> = Vec::with_capacity(periods);
    for period in 0..periods {
        let mut bers = Vec::with_capacity(sched.p3_period_epochs);
        for epoch_in_period in 1..=sched.p3_period_epochs {
            let t0 = Instant::now();
            state.epoch += 1;
            // the constellation moves with the encoder, so data generation
            // re-reads it every epoch
            let points = encoder_constellation(&state.encoder)?.points;
            let data = ssfm_epoch_data(&points, cfg, t.seed.wrapping_add(state.epoch as u64))?;
            let early = epoch_in_period <= sched.p3_early_epochs;
            let (mut n_a, mut n_b, mut n_c) = (0usize, 0usize, 0usize);
            let mut aloss = f64::NAN;
            let n = data.indices_x.len();
            if early {
                let edge = e_s + e_d;
                let chain_x = index_bits_f64(&data.indices_x[edge..n - edge], bits);
                let chain_y = index_bits_f64(&data.indices_y[edge..n - edge], bits);
                for _ in 0..sched.p3_a_steps {
                    aloss = encoder_chain_step(
                        &mut state.encoder,
                        &mut adam_a,
                        &state.surrogate,
                        &state.decoder,
                        &[
                            (data.indices_x.as_slice(), chain_x.as_slice()),
                            (data.indices_y.as_slice(), chain_y.as_slice()),
                        ],
                    )?;
                    n_a += 1;
                }
            }
            let b_steps = if early { sched.p3_b_steps_early } else { sched.p3_b_steps_late };
            let c_steps = if early { sched.p3_c_steps_early } else { sched.p3_c_steps_late };
            let mut smse = f64::NAN;
            for _ in 0..b_steps {
                smse = surrogate_step(
                    &mut state.surrogate,
                    &mut adam_b,
                    &[(&data.tx_x, &data.rx_x), (&data.tx_y, &data.rx_y)],
                )?;
                n_b += 1;
            }
            let tgt_x = index_bits_f64(&data.indices_x[e_d..n - e_d], bits);
            let tgt_y = index_bits_f64(&data.indices_y[e_d..n - e_d], bits);
            let mut closs = f64::NAN;
            for _ in 0..c_steps {
                closs = decoder_step(
                    &mut state.decoder,
                    &mut adam_c,
                    &[(&data.rx_x, &tgt_x), (&data.rx_y, &tgt_y)],
                )?;
                n_c += 1;
            }
            let ber = epoch_ber(state, &data, bits)?;
            bers.push(ber);
            let _ = aloss;
            state.history.push(EpochRecord {
                epoch: state.epoch,
                phase: 3,
                period,
                loss: closs,
                mse_surrogate: smse,
                ber,
                n_a,
                n_b,
                n_c,
                lr_a: if early { sched.p3_lr_a } else { f64::NAN },
                lr_b: sched.p3_lr_b,
                lr_c: sched.p3_lr_c,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }
        checkpoints.push(state.to_checkpoint());
        period_bers.push(bers);
    }
    let best = select_best_period(&period_bers, sched.p3_select_last)?;
    state.restore(&checkpoints[best])?;
    Ok(best)
}

/// Index of the period with the lowest mean BER over the last `last` epochs
/// of its period; ties resolve to the earlier period.
pub fn select_best_period(period_bers: &[Vec<f64>], last: usize) -> Result<usize> {
    if period_bers.is_empty() || period_bers.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidArgument("select_best_period: empty history".into()));
    }
    let mut best = 0usize;
    let mut best_mean = f64::INFINITY;
    for (i, bers) in period_bers.iter().enumerate() {
        let tail = &bers[bers.len().saturating_sub(last)..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        if mean < best_mean {
            best_mean = mean;
            best = i;
        }
    }
    Ok(best)
}

/// Run the full schedule: phases I, II and III with configured epoch counts.
/// Returns the selected phase-III period.
pub fn train_all(state: &mut TrainState, cfg: &ExperimentConfig) -> Result<usize> {
    pretrain_encoder(&mut state.encoder, 3000, 1e-2)?;
    phase1_run(state, cfg, cfg.train.phase1_epochs)?;
    phase2_run(state, cfg, cfg.train.phase2_epochs)?;
    phase3_run(state, cfg, cfg.train.phase3_periods)
}

/// One system's metrics at one (power, distance) grid point.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub system: String,
    pub p_dbm: f64,
    pub distance_km: f64,
    pub report: MetricReport,
}

/// CSV dump of an evaluation sweep.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(
        "system,p_dbm,distance_km,ber,q2_db,gmi_bits_per_sym,evm_db,sigma_sq_fit,n_bits,n_syms\n",
    );
    for r in rows {
        writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            r.system,
            r.p_dbm,
            r.distance_km,
            r.report.ber,
            r.report.q2_db.unwrap_or(f64::NAN),
            r.report.gmi_bits_per_sym,
            r.report.evm_db,
            r.report.sigma_sq_fit,
            r.report.n_bits,
            r.report.n_syms
        )
        .unwrap();
    }
    s
}

fn report_from(
    cons: &Constellation,
    errors: usize,
    total_bits: usize,
    tx: &[Complex64],
    rx: &[Complex64],
) -> Result<MetricReport> {
    let ber = errors as f64 / total_bits as f64;
    let sigma_sq = fit_noise_variance(tx, rx)?;
    let gmi = gmi_gauss_hermite(cons, sigma_sq, 10)?;
    Ok(MetricReport {
        ber,
        q2_db: q2_from_ber(ber).ok(),
        gmi_bits_per_sym: gmi,
        evm_db: evm_db(rx, tx),
        n_bits: total_bits,
        n_syms: rx.len(),
        sigma_sq_fit: sigma_sq,
        inversion_warning: ber > 0.5,
    })
}

/// Sweep the power/distance grid, running the conventional Gray square-QAM
/// system — and, when a trained state is given, the learned transceiver —
/// over the same payload indices and the same channel noise seeds.
pub fn evaluate(state: Option<&TrainState>, cfg: &ExperimentConfig) -> Result<Vec<EvalRow>> {
    let t = &cfg.train;
    let bits = t.bits_per_symbol();
    let trained = match state {
        Some(s) => Some((encoder_constellation(&s.encoder)?, s)),
        None => None,
    };
    let q = square_qam(t.qam_order)?;
    let n = t.symbols_per_epoch;
    let mut rows = Vec::new();
    for (di, &dist) in cfg.sweep.distances_km.iter().enumerate() {
        let n_spans = (dist / cfg.link.span_km).round() as usize;
        for (pi, &p_dbm) in cfg.sweep.powers_dbm.iter().enumerate() {
            let seed = t
                .seed
                .wrapping_add(0xE7A1_0000)
                .wrapping_add((di as u64) << 32)
                .wrapping_add((pi as u64) << 16);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ix = random_indices(n, t.qam_order, &mut rng);
            let iy = random_indices(n, t.qam_order, &mut rng);

            if let Some((cons, s)) = &trained {
                let (rx_x, rx_y) =
                    run_link_epoch_retry(&cons.points, &ix, &iy, cfg, p_dbm, n_spans, seed)?;
                let (e1, t1) = decoder_ber(&s.decoder, &rx_x, &ix, bits)?;
                let (e2, t2) = decoder_ber(&s.decoder, &rx_y, &iy, bits)?;
                let mut tx_all: Vec<Complex64> = ix.iter().map(|&i| cons.points[i]).collect();
                tx_all.extend(iy.iter().map(|&i| cons.points[i]));
                let mut rx_all = rx_x.clone();
                rx_all.extend_from_slice(&rx_y);
                rows.push(EvalRow {
                    system: "trained".into(),
                    p_dbm,
                    distance_km: dist,
                    report: report_from(cons, e1 + e2, t1 + t2, &tx_all, &rx_all)?,
                });
            }

            let (bx, by) = run_link_epoch_retry(&q.points, &ix, &iy, cfg, p_dbm, n_spans, seed)?;
            let mut errors = 0usize;
            let mut total = 0usize;
            let mut tx_all: Vec<Complex64> = ix.iter().map(|&i| q.points[i]).collect();
            tx_all.extend(iy.iter().map(|&i| q.points[i]));
            let mut rx_all = bx.clone();
            rx_all.extend_from_slice(&by);
            for (idxs, rx) in [(&ix, &bx), (&iy, &by)] {
                for (&i, &r) in idxs.iter().zip(rx.iter()) {
                    let dec = q.nearest(r);
                    errors += (q.labels[dec] ^ q.labels[i]).count_ones() as usize;
                    total += bits;
                }
            }
            rows.push(EvalRow {
                system: "baseline".into(),
                p_dbm,
                distance_km: dist,
                report: report_from(&q, errors, total, &tx_all, &rx_all)?,
            });
        }
    }
    Ok(rows)
}

/// One timing measurement of the compute benchmark.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub model: String,
    /// Full window length (2L+1); for the Co-GRU this is the window whose
    /// half-length was used as edge discard.
    pub window: usize,
    pub seq_len: usize,
    pub median_ms: f64,
}

/// CSV dump of benchmark rows.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("model,window,seq_len,median_ms\n");
    for r in rows {
        writeln!(s, "{},{},{},{:.16e}", r.model, r.window, r.seq_len, r.median_ms).unwrap();
    }
    s
}

fn median_ms(times: &mut [f64]) -> f64 {
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

/// Forward+backward wall time of the Co-GRU layer against the sliding-window
/// Bi-GRU reference at the given full window lengths (odd). Both run the same
/// parameters on the same sequence, single-threaded, with `warmup` discarded
/// runs and the median over `reps` timed runs reported.
pub fn benchmark_compute(
    seq_len: usize,
    hidden: usize,
    windows: &[usize],
    warmup: usize,
    reps: usize,
) -> Result<Vec<BenchRow>> {
    use crate::nn::{windowed_bigru_forward_backward, Activation, CoGruLayer};
    if reps == 0 {
        return Err(Error::InvalidArgument("benchmark: need at least one rep".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE7C);
    let mut seq = Mat::zeros(seq_len, 2);
    for v in seq.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Numeric(format!("benchmark: thread pool: {e}")))?;
    let mut rows = Vec::new();
    for &w in windows {
        if w % 2 == 0 || seq_len < w {
            return Err(Error::InvalidArgument(format!("benchmark: bad window {w}")));
        }
        let half = w / 2;
        let layer = CoGruLayer::kaiming(hidden, 2, 6, Activation::Sigmoid, half, &mut rng)?;
        let grad = Mat {
            rows: seq_len - 2 * half,
            cols: 6,
            data: vec![1.0; (seq_len - 2 * half) * 6],
        };
        for model in ["cogru", "windowed"] {
            let mut times = Vec::with_capacity(reps);
            for i in 0..warmup + reps {
                let t0 = Instant::now();
                pool.install(|| -> Result<()> {
                    if model == "cogru" {
                        let (out, cache) = cogru_forward(&layer, &seq)?;
                        let _ = cogru_backward(&layer, &cache, &grad)?;
                        let _ = out;
                    } else {
                        let _ = windowed_bigru_forward_backward(&layer, &seq, half, &grad)?;
                    }
                    Ok(())
                })?;
                if i >= warmup {
                    times.push(t0.elapsed().as_secs_f64() * 1e3);
                }
            }
            rows.push(BenchRow {
                model: model.into(),
                window: w,
                seq_len,
                median_ms: median_ms(&mut times),
            });
        }
    }
    Ok(rows)
}
