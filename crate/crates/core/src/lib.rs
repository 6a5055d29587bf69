//! Downlink beamforming for a two-user MISO-NOMA pair.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`] draws Rayleigh + path-loss channels, builds the two-vector
//!   orthonormal basis and the seven network input features.
//! * [`ber`] evaluates the closed-form conditional QAM bit error rates of both
//!   users and the max-BER fairness objective.
//! * [`beamformer`] maps the seven reduced parameters to beamforming vectors,
//!   provides the MRT / ZFBF benchmarks, the SIC feasibility constraints and
//!   the post-network repair procedure.
//! * [`linksim`] is a symbol-level Monte Carlo simulator used as an oracle for
//!   the analytic expressions.
//! * [`optimizer`] solves the min-max problem by multi-start penalised
//!   Nelder–Mead search.
//! * [`learner`] is a small two-headed MLP trained with Nesterov-Adam.
//! * [`dataset`] generates, labels, persists and quantizes training data.
//! * [`harness`] evaluates techniques, emits ECDFs and measures timing.

pub mod beamformer;
pub mod ber;
pub mod channel;
pub mod dataset;
mod error;
pub mod harness;
pub mod learner;
pub mod linksim;
pub mod optimizer;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64;

use std::f64::consts::TAU;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Signed angular difference `a - b` mapped into `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}
