//! Transmit-side symbol and waveform construction: bit/symbol mapping,
//! square-QAM baselines, RRC pulse shaping, resampling, WDM multiplexing and
//! launch-power normalization.
//!
//! All filtering is circular (FFT-domain, zero-phase for symmetric taps), so
//! loopback chains are exact up to arithmetic noise and no edge transients
//! leak into the payload.

use crate::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::fmt::Write as _;

/// M labeled complex points with unit mean power.
///
/// `labels[i]` is the m-bit label of point `i`; the label set is always a
/// permutation of all m-bit strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub points: Vec<Complex64>,
    pub labels: Vec<u32>,
}

impl Constellation {
    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Bits per symbol.
    pub fn bits_per_symbol(&self) -> usize {
        self.size().trailing_zeros() as usize
    }

    pub fn mean_power(&self) -> f64 {
        self.points.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.size() as f64
    }

    /// Fourth moment E|c|^4 / (E|c|^2)^2 — the modulation factor of the
    /// nonlinear-interference variance model.
    pub fn mu4(&self) -> f64 {
        let p2 = self.mean_power();
        let p4 = self.points.iter().map(|c| c.norm_sqr().powi(2)).sum::<f64>() / self.size() as f64;
        p4 / (p2 * p2)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.size();
        if !m.is_power_of_two() || m < 2 {
            return Err(Error::InvalidArgument(format!("constellation size {m}")));
        }
        if self.labels.len() != m {
            return Err(Error::ShapeMismatch("labels/points length".into()));
        }
        let mut seen = vec![false; m];
        for &l in &self.labels {
            let l = l as usize;
            if l >= m || seen[l] {
                return Err(Error::InvalidArgument("labels are not a permutation".into()));
            }
            seen[l] = true;
        }
        if (self.mean_power() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mean power {} is not 1",
                self.mean_power()
            )));
        }
        Ok(())
    }

    /// Index of the nearest point to `y` (Euclidean hard decision).
    pub fn nearest(&self, y: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Text dump: index, label bits, real, imag with 17 significant digits.
    pub fn dump(&self) -> String {
        let m = self.bits_per_symbol();
        let mut s = String::from("index,label,real,imag\n");
        for (i, p) in self.points.iter().enumerate() {
            let mut bits = String::new();
            for k in (0..m).rev() {
                bits.push(if (self.labels[i] >> k) & 1 == 1 { '1' } else { '0' });
            }
            writeln!(s, "{i},{bits},{:.16e},{:.16e}", p.re, p.im).unwrap();
        }
        s
    }
}

fn gray(n: u32) -> u32 {
    n ^ (n >> 1)
}

/// Square Gray-labeled QAM scaled to unit mean power.
pub fn square_qam(m: usize) -> Result<Constellation> {
    if !matches!(m, 4 | 16 | 64 | 256) {
        return Err(Error::InvalidArgument(format!("square_qam: unsupported order {m}")));
    }
    let side = (m as f64).sqrt() as usize;
    let bits_per_axis = side.trailing_zeros();
    // mean power of the odd-integer grid: 2*(m-1)/3
    let scale = (2.0 * (m as f64 - 1.0) / 3.0).sqrt();
    let mut points = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for a in 0..side {
        for b in 0..side {
            let re = (2.0 * a as f64 - (side as f64 - 1.0)) / scale;
            let im = (2.0 * b as f64 - (side as f64 - 1.0)) / scale;
            points.push(Complex64::new(re, im));
            labels.push((gray(a as u32) << bits_per_axis) | gray(b as u32));
        }
    }
    Ok(Constellation { points, labels })
}

/// Map a bit stream (groups of m bits, MSB first) to constellation symbols.
pub fn bits_to_symbols(bits: &[u8], constellation: &Constellation) -> Result<Vec<Complex64>> {
    let m = constellation.bits_per_symbol();
    if bits.len() % m != 0 {
        return Err(Error::InvalidArgument(format!(
            "bit count {} is not a multiple of {m}",
            bits.len()
        )));
    }
    // label -> point index
    let mut index_of = vec![0usize; constellation.size()];
    for (i, &l) in constellation.labels.iter().enumerate() {
        index_of[l as usize] = i;
    }
    let mut out = Vec::with_capacity(bits.len() / m);
    for chunk in bits.chunks(m) {
        let mut label = 0u32;
        for &b in chunk {
            label = (label << 1) | (b as u32 & 1);
        }
        out.push(constellation.points[index_of[label as usize]]);
    }
    Ok(out)
}

/// Bits (MSB first) of the label of each symbol index.
pub fn labels_to_bits(labels: &[u32], m: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * m);
    for &l in labels {
        for k in (0..m).rev() {
            out.push(((l >> k) & 1) as u8);
        }
    }
    out
}

/// One-hot rows for a list of point indices.
pub fn symbols_to_onehot(indices: &[usize], m: usize) -> crate::nn::Mat {
    let mut out = crate::nn::Mat::zeros(indices.len(), m);
    for (row, &idx) in indices.iter().enumerate() {
        assert!(idx < m);
        out.set(row, idx, 1.0);
    }
    out
}

/// Root-raised-cosine taps: rolloff, samples per symbol, half-length in
/// symbols. Taps are symmetric and energy-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShape {
    pub rolloff: f64,
    pub sps: usize,
    pub span: usize,
    pub taps: Vec<f64>,
}

/// Closed-form RRC impulse response with the t=0 and t=±T/(4β) singularities
/// replaced by their analytic limits.
pub fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Result<PulseShape> {
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(Error::InvalidArgument(format!("rrc rolloff {rolloff}")));
    }
    if sps < 2 {
        return Err(Error::InvalidArgument(format!("rrc sps {sps}")));
    }
    let b = rolloff;
    let half = (span * sps) as i64;
    let mut taps = Vec::with_capacity((2 * half + 1) as usize);
    for k in -half..=half {
        let t = k as f64 / sps as f64; // in symbol periods
        let v = if k == 0 {
            1.0 - b + 4.0 * b / std::f64::consts::PI
        } else if (4.0 * b * t).abs() == 1.0 || ((4.0 * b * t).abs() - 1.0).abs() < 1e-12 {
            let a = std::f64::consts::PI / (4.0 * b);
            b / std::f64::consts::SQRT_2
                * ((1.0 + 2.0 / std::f64::consts::PI) * a.sin()
                    + (1.0 - 2.0 / std::f64::consts::PI) * a.cos())
        } else {
            let pi = std::f64::consts::PI;
            let num = (pi * t * (1.0 - b)).sin() + 4.0 * b * t * (pi * t * (1.0 + b)).cos();
            let den = pi * t * (1.0 - (4.0 * b * t).powi(2));
            num / den
        };
        taps.push(v);
    }
    let energy: f64 = taps.iter().map(|v| v * v).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|v| *v /= norm);
    Ok(PulseShape { rolloff, sps, span, taps })
}

/// Zero-phase circular convolution of a complex signal with real symmetric taps.
pub fn filter_circular(signal: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    let n = signal.len();
    assert!(n >= taps.len(), "signal shorter than filter");
    // kernel with center tap at index 0
    let mut kernel = vec![Complex64::new(0.0, 0.0); n];
    let half = (taps.len() - 1) / 2;
    for (i, &t) in taps.iter().enumerate() {
        let shift = i as i64 - half as i64;
        let idx = shift.rem_euclid(n as i64) as usize;
        kernel[idx] += Complex64::new(t, 0.0);
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut sig = signal.to_vec();
    fft.process(&mut sig);
    fft.process(&mut kernel);
    for (s, k) in sig.iter_mut().zip(&kernel) {
        *s *= k;
    }
    ifft.process(&mut sig);
    let scale = 1.0 / n as f64;
    sig.iter_mut().for_each(|v| *v *= scale);
    sig
}

/// Zero-stuff symbols to `pulse.sps` samples per symbol and apply the RRC
/// filter circularly.
pub fn shape_pulse(symbols: &[Complex64], pulse: &PulseShape) -> Result<Vec<Complex64>> {
    if symbols.is_empty() {
        return Err(Error::InvalidArgument("shape_pulse: empty input".into()));
    }
    let up = upsample(symbols, pulse.sps);
    Ok(filter_circular(&up, &pulse.taps))
}

/// Matched filtering with the identical taps.
pub fn matched_filter(samples: &[Complex64], pulse: &PulseShape) -> Vec<Complex64> {
    filter_circular(samples, &pulse.taps)
}

pub fn upsample(signal: &[Complex64], factor: usize) -> Vec<Complex64> {
    assert!(factor >= 1);
    let mut out = vec![Complex64::new(0.0, 0.0); signal.len() * factor];
    for (i, &s) in signal.iter().enumerate() {
        out[i * factor] = s;
    }
    out
}

pub fn downsample(signal: &[Complex64], factor: usize, phase: usize) -> Vec<Complex64> {
    assert!(factor >= 1 && phase < factor);
    signal.iter().skip(phase).step_by(factor).copied().collect()
}

/// Complex baseband dual-polarization waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolSignal {
    pub x_pol: Vec<Complex64>,
    pub y_pol: Vec<Complex64>,
    pub sample_rate: f64,
    pub center_offset: f64,
}

impl DualPolSignal {
    pub fn new(x_pol: Vec<Complex64>, y_pol: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if x_pol.len() != y_pol.len() {
            return Err(Error::ShapeMismatch("polarisations differ in length".into()));
        }
        Ok(DualPolSignal { x_pol, y_pol, sample_rate, center_offset: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.x_pol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_pol.is_empty()
    }

    /// Mean sample power across both polarizations, in the signal's power unit.
    pub fn mean_power(&self) -> f64 {
        let n = self.len() as f64;
        let p: f64 = self
            .x_pol
            .iter()
            .zip(&self.y_pol)
            .map(|(x, y)| x.norm_sqr() + y.norm_sqr())
            .sum();
        p / n
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.x_pol.iter_mut().chain(self.y_pol.iter_mut()) {
            *v *= factor;
        }
    }
}

/// Multiply by exp(j 2 pi f n / fs). The shift is quantized to an integer
/// number of cycles over the buffer so circular processing stays consistent.
pub fn frequency_shift(signal: &mut DualPolSignal, f_hz: f64) {
    let n = signal.len();
    let cycles = (f_hz * n as f64 / signal.sample_rate).round();
    let w = 2.0 * std::f64::consts::PI * cycles / n as f64;
    for i in 0..n {
        let rot = Complex64::from_polar(1.0, w * i as f64);
        signal.x_pol[i] *= rot;
        signal.y_pol[i] *= rot;
    }
}

/// Sum of frequency-shifted channels. Channel `k` of `count` sits at offset
/// `(k - count/2) * spacing_hz`; the channel count must be odd so the center
/// channel stays at baseband.
pub fn wdm_mux(channels: &[DualPolSignal], spacing_hz: f64) -> Result<DualPolSignal> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("wdm_mux: no channels".into()));
    }
    if channels.len() % 2 == 0 {
        return Err(Error::InvalidArgument("wdm_mux: channel count must be odd".into()));
    }
    let n = channels[0].len();
    let fs = channels[0].sample_rate;
    let total_bw = channels.len() as f64 * spacing_hz;
    if total_bw > fs {
        return Err(Error::InvalidArgument(format!(
            "wdm_mux: aggregate bandwidth {total_bw} exceeds sample rate {fs}"
        )));
    }
    let center = (channels.len() / 2) as i64;
    let mut out = DualPolSignal::new(
        vec![Complex64::new(0.0, 0.0); n],
        vec![Complex64::new(0.0, 0.0); n],
        fs,
    )?;
    for (k, ch) in channels.iter().enumerate() {
        if ch.len() != n || ch.sample_rate != fs {
            return Err(Error::ShapeMismatch("wdm_mux: inconsistent channels".into()));
        }
        let mut shifted = ch.clone();
        frequency_shift(&mut shifted, (k as i64 - center) as f64 * spacing_hz);
        for i in 0..n {
            out.x_pol[i] += shifted.x_pol[i];
            out.y_pol[i] += shifted.y_pol[i];
        }
    }
    Ok(out)
}

/// Shift channel `index` to baseband and brickwall low-pass to `lpf_bw` (full
/// two-sided bandwidth).
pub fn wdm_demux(
    signal: &DualPolSignal,
    index: usize,
    count: usize,
    spacing_hz: f64,
    lpf_bw: f64,
) -> Result<DualPolSignal> {
    if index >= count || count % 2 == 0 {
        return Err(Error::InvalidArgument("wdm_demux: bad channel index/count".into()));
    }
    let center = (count / 2) as i64;
    let mut out = signal.clone();
    frequency_shift(&mut out, -((index as i64 - center) as f64) * spacing_hz);
    lowpass_brickwall(&mut out, lpf_bw)?;
    Ok(out)
}

/// FFT-domain brickwall low-pass with two-sided bandwidth `bw`.
pub fn lowpass_brickwall(signal: &mut DualPolSignal, bw: f64) -> Result<()> {
    let n = signal.len();
    if bw <= 0.0 || bw > signal.sample_rate {
        return Err(Error::InvalidArgument(format!("lowpass bandwidth {bw}")));
    }
    let fs = signal.sample_rate;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    for pol in [&mut signal.x_pol, &mut signal.y_pol] {
        fft.process(pol);
        for (i, v) in pol.iter_mut().enumerate() {
            let f = bin_frequency(i, n, fs);
            if f.abs() > bw / 2.0 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        ifft.process(pol);
        let scale = 1.0 / n as f64;
        pol.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(())
}

/// Signed frequency of FFT bin `i` for an `n`-point transform at rate `fs`.
pub fn bin_frequency(i: usize, n: usize, fs: f64) -> f64 {
    let k = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    k * fs / n as f64
}

/// Scale the signal so the mean power across both polarizations equals
/// `10^(p_dbm/10)` milliwatts; the signal's power unit is watts.
pub fn set_launch_power(signal: &mut DualPolSignal, p_dbm: f64) -> Result<()> {
    let current = signal.mean_power();
    if current <= 0.0 {
        return Err(Error::InvalidArgument("set_launch_power: zero-energy input".into()));
    }
    let target_w = 1e-3 * 10f64.powf(p_dbm / 10.0);
    signal.scale((target_w / current).sqrt());
    Ok(())
}

/// RMS error vector magnitude in dB relative to the reference mean power.
pub fn evm_db(rx: &[Complex64], reference: &[Complex64]) -> f64 {
    assert_eq!(rx.len(), reference.len());
    let err: f64 = rx.iter().zip(reference).map(|(a, b)| (a - b).norm_sqr()).sum();
    let pwr: f64 = reference.iter().map(|b| b.norm_sqr()).sum();
    10.0 * (err / pwr).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn qam64_scale_factor() {
        let c = square_qam(64).unwrap();
        c.validate().unwrap();
        // corner point (±7,±7)/sqrt(42)
        let max = c.points.iter().map(|p| p.re.abs()).fold(0.0, f64::max);
        assert!((max - 7.0 / 42f64.sqrt()).abs() < 1e-12);
        assert!((c.mean_power() - 1.0).abs() < 1e-12);
        assert!((c.mu4() - 1.380952380952381).abs() < 1e-12);
    }

    #[test]
    fn qam4_is_qpsk() {
        let c = square_qam(4).unwrap();
        for p in &c.points {
            assert!((p.re.abs() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
            assert!((p.im.abs() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        }
        assert!(square_qam(8).is_err());
    }

    #[test]
    fn gray_labels_differ_in_one_bit_between_neighbours() {
        for m in [4usize, 16, 64, 256] {
            let c = square_qam(m).unwrap();
            let side = (m as f64).sqrt() as usize;
            let label_at = |a: usize, b: usize| c.labels[a * side + b];
            for a in 0..side {
                for b in 0..side {
                    if a + 1 < side {
                        let d = label_at(a, b) ^ label_at(a + 1, b);
                        assert_eq!(d.count_ones(), 1, "M={m} axis a");
                    }
                    if b + 1 < side {
                        let d = label_at(a, b) ^ label_at(a, b + 1);
                        assert_eq!(d.count_ones(), 1, "M={m} axis b");
                    }
                }
            }
        }
    }

    #[test]
    fn bit_mapping_round_trip() {
        let c = square_qam(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits: Vec<u8> = (0..6 * 100).map(|_| rng.gen_range(0..2) as u8).collect();
        let syms = bits_to_symbols(&bits, &c).unwrap();
        assert_eq!(syms.len(), 100);
        // noiseless nearest-point + label read-back is the identity
        let mut back = Vec::new();
        for s in &syms {
            let idx = c.nearest(*s);
            for k in (0..6).rev() {
                back.push(((c.labels[idx] >> k) & 1) as u8);
            }
        }
        assert_eq!(bits, back);
        // all-zero bits map to the point labeled 0
        let zeros = vec![0u8; 12];
        let s0 = bits_to_symbols(&zeros, &c).unwrap();
        let idx0 = c.labels.iter().position(|&l| l == 0).unwrap();
        assert_eq!(s0[0], c.points[idx0]);
        assert_eq!(s0[1], c.points[idx0]);
        assert!(bits_to_symbols(&bits[..5], &c).is_err());
    }

    #[test]
    fn two_symbols_against_table() {
        let c = square_qam(64).unwrap();
        let bits = [1u8, 0, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0];
        let syms = bits_to_symbols(&bits, &c).unwrap();
        for (k, chunk) in bits.chunks(6).enumerate() {
            let label = chunk.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
            let idx = c.labels.iter().position(|&l| l == label).unwrap();
            assert_eq!(syms[k], c.points[idx]);
        }
    }

    #[test]
    fn rrc_symmetry_unit_energy_and_center_value() {
        let p = rrc_taps(0.1, 8, 16).unwrap();
        let n = p.taps.len();
        for i in 0..n / 2 {
            assert!((p.taps[i] - p.taps[n - 1 - i]).abs() < 1e-15);
        }
        let energy: f64 = p.taps.iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-12);
        // center tap is the analytic limit divided by the same normalizer
        let b = 0.1;
        let unnorm_center = 1.0 - b + 4.0 * b / std::f64::consts::PI;
        let ratio = unnorm_center / p.taps[n / 2];
        // the ratio is exactly the energy normalizer, which is positive
        assert!(ratio > 0.0);
        let reconstructed: Vec<f64> = p.taps.iter().map(|v| v * ratio).collect();
        assert!((reconstructed[n / 2] - unnorm_center).abs() < 1e-12);
        assert!(rrc_taps(0.0, 8, 16).is_err());
        assert!(rrc_taps(1.5, 8, 16).is_err());
    }

    #[test]
    fn rrc_self_convolution_is_nyquist() {
        let p = rrc_taps(0.1, 4, 32).unwrap();
        // full linear self-convolution sampled at symbol spacing
        let n = p.taps.len();
        let mut conv = vec![0.0; 2 * n - 1];
        for i in 0..n {
            for j in 0..n {
                conv[i + j] += p.taps[i] * p.taps[j];
            }
        }
        let center = n - 1;
        let peak = conv[center];
        for k in 1..16 {
            let off = conv[center + k * p.sps].abs() / peak;
            assert!(off < 1e-3, "ISI at offset {k}: {off}");
        }
    }

    #[test]
    fn impulse_response_recovered() {
        let p = rrc_taps(0.2, 4, 8).unwrap();
        let n_sym = 64;
        let mut symbols = vec![Complex64::new(0.0, 0.0); n_sym];
        symbols[n_sym / 2] = Complex64::new(1.0, 0.0);
        let shaped = shape_pulse(&symbols, &p).unwrap();
        let center = n_sym / 2 * p.sps;
        let half = (p.taps.len() - 1) / 2;
        for (i, &t) in p.taps.iter().enumerate() {
            let idx = center + i - half;
            assert!((shaped[idx].re - t).abs() < 1e-12);
            assert!(shaped[idx].im.abs() < 1e-12);
        }
    }

    #[test]
    fn up_down_round_trip() {
        let x: Vec<Complex64> =
            (0..32).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let up = upsample(&x, 4);
        let down = downsample(&up, 4, 0);
        assert_eq!(x, down);
    }

    #[test]
    fn back_to_back_shaping_is_isi_free() {
        let c = square_qam(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let bits: Vec<u8> = (0..6 * 512).map(|_| rng.gen_range(0..2) as u8).collect();
        let syms = bits_to_symbols(&bits, &c).unwrap();
        let p = rrc_taps(0.01, 8, 128).unwrap();
        let shaped = shape_pulse(&syms, &p).unwrap();
        let matched = matched_filter(&shaped, &p);
        let rx = downsample(&matched, p.sps, 0);
        let evm = evm_db(&rx, &syms);
        assert!(evm < -40.0, "EVM {evm} dB");
    }

    #[test]
    fn launch_power_settings() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Complex64> =
            (0..4096).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let y = x.clone();
        let mut s = DualPolSignal::new(x, y, 64e9).unwrap();
        set_launch_power(&mut s, 0.0).unwrap();
        assert!((s.mean_power() - 1e-3).abs() < 1e-15);
        set_launch_power(&mut s, -1.0).unwrap();
        assert!((s.mean_power() - 1e-3 * 10f64.powf(-0.1)).abs() < 1e-18);
        // scale invariance
        let mut s2 = s.clone();
        s2.scale(2.0);
        set_launch_power(&mut s2, -1.0).unwrap();
        for (a, b) in s.x_pol.iter().zip(&s2.x_pol) {
            assert!((a - b).norm() < 1e-12);
        }
        let mut zero = DualPolSignal::new(
            vec![Complex64::new(0.0, 0.0); 4],
            vec![Complex64::new(0.0, 0.0); 4],
            1.0,
        )
        .unwrap();
        assert!(set_launch_power(&mut zero, 0.0).is_err());
    }

    #[test]
    fn wdm_single_channel_identity_and_loopback() {
        let c = square_qam(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bits: Vec<u8> = (0..2 * 1024).map(|_| rng.gen_range(0..2) as u8).collect();
        let syms = bits_to_symbols(&bits, &c).unwrap();
        let p = rrc_taps(0.01, 16, 128).unwrap();
        let baud = 32e9;
        let fs = baud * 16.0;
        let shaped = shape_pulse(&syms, &p).unwrap();
        let ch = DualPolSignal::new(shaped.clone(), shaped.clone(), fs).unwrap();

        // single channel: mux is identity
        let muxed = wdm_mux(std::slice::from_ref(&ch), 40e9).unwrap();
        for (a, b) in muxed.x_pol.iter().zip(&ch.x_pol) {
            assert!((a - b).norm() < 1e-12);
        }

        // three channels: demux recovers the edge channel
        let chans = vec![ch.clone(), ch.clone(), ch.clone()];
        let muxed = wdm_mux(&chans, 40e9).unwrap();
        let rec = wdm_demux(&muxed, 0, 3, 40e9, baud * 1.1).unwrap();
        let matched = matched_filter(&rec.x_pol, &p);
        let rx = downsample(&matched, p.sps, 0);
        let evm = evm_db(&rx, &syms);
        assert!(evm < -30.0, "WDM loopback EVM {evm} dB");
    }

    #[test]
    fn wdm_power_is_additive_at_orthogonal_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let make = |rng: &mut ChaCha8Rng| {
            let x: Vec<Complex64> = (0..8192)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let y: Vec<Complex64> = (0..8192)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut s = DualPolSignal::new(x, y, 512e9).unwrap();
            lowpass_brickwall(&mut s, 35e9).unwrap();
            s
        };
        let chans: Vec<DualPolSignal> = (0..3).map(|_| make(&mut rng)).collect();
        let total_in: f64 = chans.iter().map(|c| c.mean_power()).sum();
        let muxed = wdm_mux(&chans, 40e9).unwrap();
        let rel = (muxed.mean_power() - total_in).abs() / total_in;
        assert!(rel < 1e-9, "power drift {rel}");
    }

    #[test]
    fn wdm_rejects_overfull_band() {
        let s = DualPolSignal::new(
            vec![Complex64::new(1.0, 0.0); 64],
            vec![Complex64::new(1.0, 0.0); 64],
            100e9,
        )
        .unwrap();
        let chans = vec![s.clone(), s.clone(), s];
        assert!(wdm_mux(&chans, 40e9).is_err());
    }

    #[test]
    fn constellation_power_preserved_through_mapping() {
        let c = square_qam(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 60_000;
        let bits: Vec<u8> = (0..6 * n).map(|_| rng.gen_range(0..2) as u8).collect();
        let syms = bits_to_symbols(&bits, &c).unwrap();
        let p: f64 = syms.iter().map(|s| s.norm_sqr()).sum::<f64>() / n as f64;
        // 3 sigma of the power estimator
        let var: f64 = c.points.iter().map(|x| (x.norm_sqr() - 1.0).powi(2)).sum::<f64>() / 64.0;
        let tol = 3.0 * (var / n as f64).sqrt();
        assert!((p - 1.0).abs() < tol, "power {p}, tol {tol}");
    }
}
