//! End-to-end learned coherent optical transmission laboratory.
//!
//! Simulates a dual-polarization WDM fiber link (split-step Fourier / Manakov),
//! trains a geometric-shaping encoder and a center-oriented GRU decoder through
//! a Co-GRU surrogate channel, and reports BER, Q2-factor and GMI against a
//! conventional square-QAM baseline.

pub mod autoencoder;
pub mod channel;
pub mod config;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
