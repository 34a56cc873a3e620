//! Channel models: the split-step Fourier (Manakov) physical channel with
//! lumped EDFA amplification, and the differentiable NLIN statistical channel
//! used for joint pretraining.
//!
//! Propagation is forward-only; gradients are never taken through the SSFM.
//! The NLIN channel exposes a reparameterized noise draw so gradients can flow
//! through both the transmitted symbols and, via the constellation's fourth
//! moment, through the noise standard deviation.

use crate::signal::{bin_frequency, DualPolSignal};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0; // m/s
pub const PLANCK: f64 = 6.626_070_15e-34; // J s

/// Fiber, amplifier, WDM and pulse-shaping parameters of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub span_km: f64,
    pub n_spans: usize,
    pub alpha_db_per_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub gamma_per_w_km: f64,
    pub nf_db: f64,
    pub wavelength_nm: f64,
    pub step_km: f64,
    pub n_channels: usize,
    pub spacing_hz: f64,
    pub baud: f64,
    pub sps: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            span_km: 80.0,
            n_spans: 12,
            alpha_db_per_km: 0.2,
            dispersion_ps_nm_km: 17.0,
            gamma_per_w_km: 1.3,
            nf_db: 5.0,
            wavelength_nm: 1550.0,
            step_km: 0.5,
            n_channels: 5,
            spacing_hz: 40e9,
            baud: 32e9,
            sps: 16,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.span_km <= 0.0
            || self.step_km <= 0.0
            || self.n_spans < 1
            || self.alpha_db_per_km < 0.0
            || self.gamma_per_w_km < 0.0
            || self.wavelength_nm <= 0.0
            || self.baud <= 0.0
            || self.sps < 1
        {
            return Err(Error::Config("link: parameters must be positive".into()));
        }
        if self.step_km > self.span_km {
            return Err(Error::Config("link: step_km exceeds span_km".into()));
        }
        let steps = self.span_km / self.step_km;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "link: step {} km does not divide span {} km",
                self.step_km, self.span_km
            )));
        }
        if self.n_channels % 2 == 0 {
            return Err(Error::Config("link: channel count must be odd".into()));
        }
        Ok(())
    }

    /// Group-velocity dispersion in SI units (s^2/m).
    pub fn beta2(&self) -> f64 {
        beta2_from_dispersion(self.dispersion_ps_nm_km, self.wavelength_nm)
    }

    /// Accumulated beta2 * z over the whole link (s^2), the argument of CDC.
    pub fn total_beta2_z(&self) -> f64 {
        self.beta2() * self.span_km * 1e3 * self.n_spans as f64
    }

    /// Simulation sample rate in Hz.
    pub fn sample_rate(&self) -> f64 {
        self.baud * self.sps as f64
    }

    /// Power gain of the span-compensating amplifier.
    pub fn span_gain(&self) -> f64 {
        10f64.powf(self.alpha_db_per_km * self.span_km / 10.0)
    }
}

/// beta2 = -D lambda^2 / (2 pi c), with D in ps/nm/km and lambda in nm;
/// result in s^2/m.
pub fn beta2_from_dispersion(d_ps_nm_km: f64, lambda_nm: f64) -> f64 {
    let d_si = d_ps_nm_km * 1e-6; // s/m^2
    let lambda = lambda_nm * 1e-9;
    -d_si * lambda * lambda / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT)
}

/// Applies `exp(j 0.5 beta2 w^2 dz)` dispersion and field loss in the
/// frequency domain for one segment of length `dz_m` meters.
struct LinearOp {
    factors: Vec<Complex64>,
}

impl LinearOp {
    fn new(n: usize, fs: f64, beta2: f64, alpha_db_per_km: f64, dz_km: f64) -> Self {
        let dz_m = dz_km * 1e3;
        let amp = 10f64.powf(-alpha_db_per_km * dz_km / 20.0);
        let factors = (0..n)
            .map(|i| {
                let w = 2.0 * std::f64::consts::PI * bin_frequency(i, n, fs);
                Complex64::from_polar(amp, 0.5 * beta2 * w * w * dz_m)
            })
            .collect();
        LinearOp { factors }
    }
}

/// Split-step propagation over `n_spans * span_km` of fiber, without
/// amplification or noise. Symmetric splitting: half linear step, full
/// nonlinear step, half linear step, with adjacent half steps merged.
pub fn ssfm_propagate(signal: &DualPolSignal, cfg: &LinkConfig) -> Result<DualPolSignal> {
    cfg.validate()?;
    let n = signal.len();
    if n == 0 {
        return Err(Error::InvalidArgument("ssfm: empty signal".into()));
    }
    let fs = signal.sample_rate;
    let beta2 = cfg.beta2();
    let steps_per_span = (cfg.span_km / cfg.step_km).round() as usize;
    let n_steps = steps_per_span * cfg.n_spans;
    let half = LinearOp::new(n, fs, beta2, cfg.alpha_db_per_km, cfg.step_km / 2.0);
    let full = LinearOp::new(n, fs, beta2, cfg.alpha_db_per_km, cfg.step_km);
    let gamma_dz = 8.0 / 9.0 * cfg.gamma_per_w_km * cfg.step_km;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let inv_n = 1.0 / n as f64;
    let mut x = signal.x_pol.clone();
    let mut y = signal.y_pol.clone();

    let apply_linear = |x: &mut Vec<Complex64>, y: &mut Vec<Complex64>, op: &LinearOp| {
        for pol in [&mut *x, &mut *y] {
            fft.process(pol);
            for (v, f) in pol.iter_mut().zip(&op.factors) {
                *v *= f;
            }
            ifft.process(pol);
            pol.iter_mut().for_each(|v| *v *= inv_n);
        }
    };

    let mut max_phase = 0.0f64;
    apply_linear(&mut x, &mut y, &half);
    for step in 0..n_steps {
        for i in 0..n {
            let p = x[i].norm_sqr() + y[i].norm_sqr();
            let phi = gamma_dz * p;
            if phi > max_phase {
                max_phase = phi;
            }
            let rot = Complex64::from_polar(1.0, phi);
            x[i] *= rot;
            y[i] *= rot;
        }
        let op = if step + 1 < n_steps { &full } else { &half };
        apply_linear(&mut x, &mut y, op);
    }
    if max_phase > 0.05 {
        log::warn!(
            "ssfm: nonlinear phase per step {max_phase:.3} rad exceeds 0.05; reduce step_km"
        );
    }
    let mut out = DualPolSignal::new(x, y, fs)?;
    out.center_offset = signal.center_offset;
    Ok(out)
}

/// Lumped EDFA: amplitude gain sqrt(G) exactly compensating the span loss,
/// plus circular complex Gaussian ASE per polarization with total power
/// n_sp h nu (G - 1) B_sim over the simulation bandwidth.
pub fn edfa_amplify<R: Rng>(
    signal: &mut DualPolSignal,
    cfg: &LinkConfig,
    rng: &mut R,
) -> Result<()> {
    let g = cfg.span_gain();
    let amp = g.sqrt();
    let nu = SPEED_OF_LIGHT / (cfg.wavelength_nm * 1e-9);
    let n_sp = 10f64.powf(cfg.nf_db / 10.0) / 2.0;
    let p_ase = n_sp * PLANCK * nu * (g - 1.0) * signal.sample_rate; // W per pol
    let sigma_q = (p_ase / 2.0).sqrt(); // per quadrature
    for pol in [&mut signal.x_pol, &mut signal.y_pol] {
        for v in pol.iter_mut() {
            *v *= amp;
            if sigma_q > 0.0 {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                *v += Complex64::new(sigma_q * re, sigma_q * im);
            }
        }
    }
    Ok(())
}

/// One span of fiber followed by its compensating amplifier.
pub fn ssfm_span<R: Rng>(
    signal: &DualPolSignal,
    cfg: &LinkConfig,
    rng: &mut R,
) -> Result<DualPolSignal> {
    let one_span = LinkConfig { n_spans: 1, ..cfg.clone() };
    let mut out = ssfm_propagate(signal, &one_span)?;
    edfa_amplify(&mut out, cfg, rng)?;
    Ok(out)
}

/// The full link: `n_spans` spans in physical order.
pub fn ssfm_link<R: Rng>(
    signal: &DualPolSignal,
    cfg: &LinkConfig,
    rng: &mut R,
) -> Result<DualPolSignal> {
    cfg.validate()?;
    let mut s = signal.clone();
    for _ in 0..cfg.n_spans {
        s = ssfm_span(&s, cfg, rng)?;
    }
    Ok(s)
}

/// Coefficients of the statistical nonlinear-interference channel
/// `sigma^2 = sigma_ase_sq + P^3 (eta_nl + kappa_coeff (mu4 - 2))`,
/// with P the linear launch power in milliwatt units and mu4 the
/// constellation's normalized fourth moment. The coefficients carry these
/// units implicitly; they come from a fit against split-step measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlinConfig {
    pub sigma_ase_sq: f64,
    pub eta_nl: f64,
    pub kappa_coeff: f64,
}

impl Default for NlinConfig {
    fn default() -> Self {
        NlinConfig { sigma_ase_sq: 1e-2, eta_nl: 1e-3, kappa_coeff: 0.0 }
    }
}

/// Linear launch power in milliwatt units.
pub fn linear_power(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0)
}

impl NlinConfig {
    /// Per-symbol noise variance at launch power `p_dbm` for a constellation
    /// with fourth moment `mu4`.
    pub fn sigma_sq(&self, p_dbm: f64, mu4: f64) -> Result<f64> {
        let p = linear_power(p_dbm);
        let s = self.sigma_ase_sq + p.powi(3) * (self.eta_nl + self.kappa_coeff * (mu4 - 2.0));
        if s <= 0.0 {
            return Err(Error::Numeric(format!("nlin: variance {s} is not positive")));
        }
        Ok(s)
    }

    /// d(sigma^2)/d(mu4), the scalar through which shaping gradients reach
    /// the noise standard deviation.
    pub fn dsigma_sq_dmu4(&self, p_dbm: f64) -> f64 {
        linear_power(p_dbm).powi(3) * self.kappa_coeff
    }
}

/// One reparameterized draw through the NLIN channel: `y = x + sigma * eps`
/// with `eps` unit-variance circular Gaussian kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NlinDraw {
    pub y: Vec<Complex64>,
    pub eps: Vec<Complex64>,
    pub sigma: f64,
    pub sigma_sq: f64,
}

pub fn nlin_channel<R: Rng>(
    x: &[Complex64],
    mu4: f64,
    p_dbm: f64,
    cfg: &NlinConfig,
    rng: &mut R,
) -> Result<NlinDraw> {
    let sigma_sq = cfg.sigma_sq(p_dbm, mu4)?;
    let sigma = sigma_sq.sqrt();
    let mut y = Vec::with_capacity(x.len());
    let mut eps = Vec::with_capacity(x.len());
    for &xi in x {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let e = Complex64::new(re / 2f64.sqrt(), im / 2f64.sqrt());
        eps.push(e);
        y.push(xi + sigma * e);
    }
    Ok(NlinDraw { y, eps, sigma, sigma_sq })
}

/// Normalized fourth moment `mu4 = E|c|^4 / (E|c|^2)^2` of a point set and
/// its gradient with respect to each point's (re, im).
pub fn mu4_and_grad(points: &[Complex64]) -> (f64, Vec<(f64, f64)>) {
    let m = points.len() as f64;
    let p2: f64 = points.iter().map(|c| c.norm_sqr()).sum::<f64>() / m;
    let p4: f64 = points.iter().map(|c| c.norm_sqr().powi(2)).sum::<f64>() / m;
    let mu4 = p4 / (p2 * p2);
    // d mu4 / d re_i = (4 re_i / (M p2^2)) (|c_i|^2 - p4 / p2)
    let grads = points
        .iter()
        .map(|c| {
            let common = 4.0 / (m * p2 * p2) * (c.norm_sqr() - p4 / p2);
            (common * c.re, common * c.im)
        })
        .collect();
    (mu4, grads)
}

/// Least-squares fit of `sigma^2 = a + b P^3` over measured (power, variance)
/// pairs, then split of `b` into `eta_nl` given a fixed `kappa_coeff` and the
/// fourth moment of the constellation used for the measurements.
pub fn fit_nlin_coefficients(
    powers_dbm: &[f64],
    variances: &[f64],
    mu4_ref: f64,
    kappa_coeff: f64,
) -> Result<NlinConfig> {
    if powers_dbm.len() != variances.len() || powers_dbm.len() < 2 {
        return Err(Error::InvalidArgument("nlin fit: need >= 2 (power, variance) pairs".into()));
    }
    // normal equations for least squares on [1, P^3]
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&p_dbm, &v) in powers_dbm.iter().zip(variances) {
        let u = linear_power(p_dbm).powi(3);
        s0 += 1.0;
        s1 += u;
        s2 += u * u;
        t0 += v;
        t1 += u * v;
    }
    let det = s0 * s2 - s1 * s1;
    if det.abs() < 1e-30 {
        return Err(Error::Numeric("nlin fit: degenerate power grid".into()));
    }
    let a = (s2 * t0 - s1 * t1) / det;
    let b = (s0 * t1 - s1 * t0) / det;
    Ok(NlinConfig {
        sigma_ase_sq: a.max(0.0),
        eta_nl: b - kappa_coeff * (mu4_ref - 2.0),
        kappa_coeff,
    })
}
