//! BER, Q2-factor, Gauss-Hermite GMI, EVM and supporting numerics.

use crate::signal::Constellation;
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Aggregated receiver metrics for one evaluation point.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub ber: f64,
    pub q2_db: Option<f64>,
    pub gmi_bits_per_sym: f64,
    pub evm_db: f64,
    pub n_bits: usize,
    pub n_syms: usize,
    pub sigma_sq_fit: f64,
    /// Set when the raw error ratio exceeded 0.5 (labeling inversion).
    pub inversion_warning: bool,
}

/// Hamming distance over length. Ratios above 0.5 indicate a labeling
/// inversion and are reported as-is with a warning flag.
pub fn ber(tx_bits: &[u8], rx_bits: &[u8]) -> Result<(f64, bool)> {
    if tx_bits.len() != rx_bits.len() || tx_bits.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "ber: {} vs {} bits",
            tx_bits.len(),
            rx_bits.len()
        )));
    }
    let errors = tx_bits.iter().zip(rx_bits).filter(|(a, b)| a != b).count();
    let r = errors as f64 / tx_bits.len() as f64;
    Ok((r, r > 0.5))
}

/// Inverse complementary error function, accurate to better than 1e-10
/// absolute on (0, 2): rational initial guess polished by Newton on erfc.
pub fn erfc_inv(y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 2.0) {
        return Err(Error::InvalidArgument(format!("erfc_inv: argument {y} outside (0,2)")));
    }
    // initial guess from the inverse normal CDF: erfcinv(y) = -probit(y/2)/sqrt(2)
    let mut x = -probit_acklam(y / 2.0) / std::f64::consts::SQRT_2;
    let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
    for _ in 0..4 {
        let f = libm::erfc(x) - y;
        let df = -two_over_sqrt_pi * (-x * x).exp();
        let step = f / df;
        x -= step;
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    Ok(x)
}

/// Acklam's rational approximation to the standard normal quantile.
fn probit_acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -probit_acklam(1.0 - p)
    }
}

/// Q2 = 20 log10(sqrt(2) erfcinv(2 BER)), defined on BER in (0, 0.5).
/// Values below a floor of -100 dB are rejected as undefined.
pub fn q2_from_ber(ber: f64) -> Result<f64> {
    if !(ber > 0.0 && ber < 0.5) {
        return Err(Error::InvalidArgument(format!("q2_from_ber: BER {ber} outside (0, 0.5)")));
    }
    let q = std::f64::consts::SQRT_2 * erfc_inv(2.0 * ber)?;
    let q2 = 20.0 * q.log10();
    if q2 < -100.0 {
        return Err(Error::Numeric(format!("q2_from_ber: Q2 {q2} dB below floor")));
    }
    Ok(q2)
}

/// Inverse of `q2_from_ber`.
pub fn ber_from_q2(q2_db: f64) -> f64 {
    let q = 10f64.powf(q2_db / 20.0);
    libm::erfc(q / std::f64::consts::SQRT_2) / 2.0
}

/// Nodes and weights of n-point Gauss-Hermite quadrature
/// (weight function e^{-t^2} on the real line).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && n <= 64);
    // Roots of H_n by interlacing: bracket each root of H_k between
    // consecutive roots of H_{k-1} plus outer bounds, bisect, Newton-polish.
    let hermite = |k: usize, x: f64| -> f64 {
        let mut h0 = 1.0f64;
        if k == 0 {
            return h0;
        }
        let mut h1 = 2.0 * x;
        for j in 1..k {
            let h2 = 2.0 * x * h1 - 2.0 * j as f64 * h0;
            h0 = h1;
            h1 = h2;
        }
        h1
    };
    let mut roots: Vec<f64> = vec![];
    for k in 1..=n {
        let bound = (2.0 * k as f64 + 1.0).sqrt();
        let mut brackets = Vec::with_capacity(k + 1);
        brackets.push(-bound);
        brackets.extend_from_slice(&roots);
        brackets.push(bound);
        let mut new_roots = Vec::with_capacity(k);
        for w in brackets.windows(2) {
            let (mut lo, mut hi) = (w[0], w[1]);
            let flo = hermite(k, lo);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let fm = hermite(k, mid);
                if (fm > 0.0) == (flo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mut x = 0.5 * (lo + hi);
            // Newton: H_n'(x) = 2n H_{n-1}(x)
            for _ in 0..3 {
                let f = hermite(k, x);
                let df = 2.0 * k as f64 * hermite(k - 1, x);
                if df != 0.0 {
                    x -= f / df;
                }
            }
            new_roots.push(x);
        }
        roots = new_roots;
    }
    // w_i = 2^{n-1} n! sqrt(pi) / (n^2 H_{n-1}(x_i)^2)
    let mut factorial = 1.0f64;
    for j in 1..=n {
        factorial *= j as f64;
    }
    let coeff = 2f64.powi(n as i32 - 1) * factorial * std::f64::consts::PI.sqrt()
        / (n as f64 * n as f64);
    let weights: Vec<f64> = roots
        .iter()
        .map(|&x| {
            let h = hermite(n - 1, x);
            coeff / (h * h)
        })
        .collect();
    (roots, weights)
}

/// log2 of the bit-metric penalty sum(den)/sum(num) at received point `y`.
fn bit_penalty(
    constellation: &Constellation,
    y: Complex64,
    sigma_sq: f64,
    bit: usize,
    bit_value: u32,
) -> f64 {
    // log-sum-exp over all points and over the matching-bit subset
    let mut max_all = f64::NEG_INFINITY;
    let exps: Vec<f64> = constellation
        .points
        .iter()
        .map(|c| {
            let e = -(y - c).norm_sqr() / sigma_sq;
            if e > max_all {
                max_all = e;
            }
            e
        })
        .collect();
    let mut den = 0.0;
    let mut num = 0.0;
    for (i, &e) in exps.iter().enumerate() {
        let v = (e - max_all).exp();
        den += v;
        if (constellation.labels[i] >> bit) & 1 == bit_value {
            num += v;
        }
    }
    (den / num).log2()
}

/// GMI for bit-metric decoding over a circular Gaussian channel with total
/// per-symbol noise variance `sigma_sq`, via 2-D Gauss-Hermite quadrature.
pub fn gmi_gauss_hermite(constellation: &Constellation, sigma_sq: f64, nodes: usize) -> Result<f64> {
    if !(sigma_sq > 0.0) {
        return Err(Error::InvalidArgument(format!("gmi: sigma_sq {sigma_sq}")));
    }
    if nodes < 4 {
        return Err(Error::InvalidArgument("gmi: need at least 4 quadrature nodes".into()));
    }
    let m_bits = constellation.bits_per_symbol();
    let m = constellation.size();
    let (t, w) = gauss_hermite(nodes);
    let sigma = sigma_sq.sqrt();
    let inv_pi = 1.0 / std::f64::consts::PI;
    let mut penalty = 0.0;
    for (i, &x) in constellation.points.iter().enumerate() {
        let label = constellation.labels[i];
        for a in 0..nodes {
            for b in 0..nodes {
                let z = Complex64::new(sigma * t[a], sigma * t[b]);
                let y = x + z;
                let wq = w[a] * w[b] * inv_pi;
                for k in 0..m_bits {
                    penalty += wq * bit_penalty(constellation, y, sigma_sq, k, (label >> k) & 1);
                }
            }
        }
    }
    Ok(m_bits as f64 - penalty / m as f64)
}

/// Monte-Carlo GMI reference: same integrand as `gmi_gauss_hermite`, with
/// `draws` noise samples spread uniformly over the constellation points.
pub fn gmi_monte_carlo<R: Rng>(
    constellation: &Constellation,
    sigma_sq: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(sigma_sq > 0.0) {
        return Err(Error::InvalidArgument(format!("gmi: sigma_sq {sigma_sq}")));
    }
    let m_bits = constellation.bits_per_symbol();
    let m = constellation.size();
    let s = (sigma_sq / 2.0).sqrt();
    let mut penalty = 0.0;
    let mut count = 0usize;
    for d in 0..draws {
        let i = d % m;
        let x = constellation.points[i];
        let label = constellation.labels[i];
        let g1: f64 = StandardNormal.sample(rng);
        let g2: f64 = StandardNormal.sample(rng);
        let y = x + Complex64::new(s * g1, s * g2);
        for k in 0..m_bits {
            penalty += bit_penalty(constellation, y, sigma_sq, k, (label >> k) & 1);
        }
        count += 1;
    }
    Ok(m_bits as f64 - penalty / count as f64)
}

/// Pooled circularly-symmetric noise variance: mean |rx - tx|^2.
pub fn fit_noise_variance(tx: &[Complex64], rx: &[Complex64]) -> Result<f64> {
    if tx.len() != rx.len() || tx.is_empty() {
        return Err(Error::ShapeMismatch("fit_noise_variance: stream lengths".into()));
    }
    Ok(tx.iter().zip(rx).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>() / tx.len() as f64)
}

/// Exact Gray-coded square M-QAM bit error rate over AWGN at symbol SNR
/// `snr` (linear, Es/N0). Cho & Yoon closed form.
pub fn gray_qam_ber_theory(m: usize, snr: f64) -> Result<f64> {
    if !matches!(m, 4 | 16 | 64 | 256) {
        return Err(Error::InvalidArgument(format!("gray_qam_ber_theory: order {m}")));
    }
    let sqrt_m = (m as f64).sqrt();
    let log2_sqrt_m = (sqrt_m as usize).trailing_zeros() as usize;
    let mut total = 0.0;
    for k in 1..=log2_sqrt_m {
        let upper = ((1.0 - 2f64.powi(-(k as i32))) * sqrt_m) as usize;
        let mut pk = 0.0;
        for i in 0..upper {
            let t = (i as f64 * 2f64.powi(k as i32 - 1) / sqrt_m).floor();
            let sign = if (t as i64) % 2 == 0 { 1.0 } else { -1.0 };
            let weight = 2f64.powi(k as i32 - 1)
                - (i as f64 * 2f64.powi(k as i32 - 1) / sqrt_m + 0.5).floor();
            let arg = (2.0 * i as f64 + 1.0) * (3.0 * snr / (2.0 * (m as f64 - 1.0))).sqrt();
            pk += sign * weight * libm::erfc(arg);
        }
        total += pk / sqrt_m;
    }
    Ok(total / log2_sqrt_m as f64)
}
