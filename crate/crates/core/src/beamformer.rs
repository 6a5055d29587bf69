//! Beamformer parameterization, benchmarks, SIC constraints and repair.
//!
//! Both beamformers live in `span{u1, u2}`:
//!
//! ```text
//! w1 = ρ1 e^{jθ1} u1 + ρ2 e^{jθ2} u2
//! w2 = δ1 e^{jφ1} u1 + δ2 e^{jφ2} u2
//! ```
//!
//! The global phase is fixed by `θ1 = φ1 − τ1`, and `θ2` is chosen so that
//! the two components of `w1` add coherently at U2.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ber::{sic_gain, u2_signal_gain, DecisionGains, ModulationSpec};
use crate::channel::{inner, norm, BasisProjections, OrthonormalBasis, Scenario};
use crate::{angle_diff, wrap_angle, Error, Result};

/// The seven reduced beamforming parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub rho1: f64,
    pub rho2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub tau1: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl BeamParams {
    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            rho1: v[0],
            rho2: v[1],
            delta1: v[2],
            delta2: v[3],
            tau1: v[4],
            phi1: v[5],
            phi2: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.rho1,
            self.rho2,
            self.delta1,
            self.delta2,
            self.tau1,
            self.phi1,
            self.phi2,
        ]
    }

    pub fn amplitudes(&self) -> [f64; 4] {
        [self.rho1, self.rho2, self.delta1, self.delta2]
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.tau1, self.phi1, self.phi2]
    }

    /// `ρ1² + ρ2² + δ1² + δ2²`, the total transmit power.
    pub fn power(&self) -> f64 {
        self.amplitudes().iter().map(|a| a * a).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Amplitudes in `[0, 1]` and angles in `[0, 2π)`.
    pub fn in_range(&self) -> bool {
        self.amplitudes().iter().all(|a| (0.0..=1.0).contains(a))
            && self.angles().iter().all(|a| (0.0..TAU).contains(a))
    }

    pub fn wrapped(mut self) -> Self {
        self.tau1 = wrap_angle(self.tau1);
        self.phi1 = wrap_angle(self.phi1);
        self.phi2 = wrap_angle(self.phi2);
        self
    }

    /// Multiplies all four amplitudes by `factor`.
    fn scale_amplitudes(&mut self, factor: f64) {
        self.rho1 *= factor;
        self.rho2 *= factor;
        self.delta1 *= factor;
        self.delta2 *= factor;
    }
}

/// Beamforming vectors of both users.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPair {
    pub w1: Vec<Complex64>,
    pub w2: Vec<Complex64>,
}

impl BeamPair {
    pub fn power(&self) -> f64 {
        norm(&self.w1).powi(2) + norm(&self.w2).powi(2)
    }
}

/// `θ1` under the gauge `θ1 = φ1 − τ1`, and the coherent `θ2`.
fn w1_phases(params: &BeamParams, proj: &BasisProjections) -> (f64, f64) {
    let theta1 = params.phi1 - params.tau1;
    // h2ᴴu2 is real positive, so its angle is zero
    let theta2 = theta1 + proj.g21_angle;
    (theta1, theta2)
}

pub fn assemble_beamformers(
    params: &BeamParams,
    basis: &OrthonormalBasis,
    proj: &BasisProjections,
) -> BeamPair {
    let (theta1, theta2) = w1_phases(params, proj);
    let c11 = Complex64::from_polar(params.rho1, theta1);
    let c12 = Complex64::from_polar(params.rho2, theta2);
    let c21 = Complex64::from_polar(params.delta1, params.phi1);
    let c22 = Complex64::from_polar(params.delta2, params.phi2);
    let w1 = basis.u1.iter().zip(&basis.u2).map(|(a, b)| c11 * a + c12 * b).collect();
    let w2 = basis.u1.iter().zip(&basis.u2).map(|(a, b)| c21 * a + c22 * b).collect();
    BeamPair { w1, w2 }
}

/// `τ1` that makes U1's symbol arrive at U2 in phase with U2's own symbol.
///
/// Under the gauge used by [`assemble_beamformers`], `∠h2ᴴw1 = φ1 − τ1 +
/// ∠h2ᴴu1`; equating it with `∠h2ᴴw2` pins `τ1`. The closed-form U2 BER is
/// exact for the assembled vectors only at this value.
pub fn aligned_tau1(params: &BeamParams, proj: &BasisProjections) -> f64 {
    let h2w2 = Complex64::from_polar(params.delta1, params.phi1) * proj.g21()
        + Complex64::from_polar(params.delta2 * proj.g22, params.phi2);
    let target = if h2w2.norm() > 0.0 { h2w2.arg() } else { params.phi1 + proj.g21_angle };
    wrap_angle(params.phi1 + proj.g21_angle - target)
}

/// Phase-corrected decision gains of actual beamforming vectors.
pub fn decision_gains(pair: &BeamPair, scenario: &Scenario) -> DecisionGains {
    let c11 = inner(&scenario.h1, &pair.w1);
    let c12 = inner(&scenario.h1, &pair.w2);
    let c21 = inner(&scenario.h2, &pair.w1);
    let c22 = inner(&scenario.h2, &pair.w2);
    DecisionGains {
        u1_signal: c11.norm(),
        u1_interference: c12.norm(),
        u1_phase_gap: wrap_angle(c12.arg() - c11.arg()),
        u2_sic: c21.norm(),
        u2_signal: c22.norm(),
        u2_phase_gap: wrap_angle(c21.arg() - c22.arg()),
    }
}

/// Result of projecting a vector pair onto the reduced parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub params: BeamParams,
    /// U2 receives `s1` and `s2` with a common phase (or no `s1` at all), so
    /// the closed-form U2 BER applies to the actual vectors.
    pub aligned: bool,
}

const SPAN_TOL: f64 = 1e-9;

/// Recovers `(ρ, δ, τ1, φ)` from vectors in `span{u1, u2}`.
pub fn params_from_vectors(
    w1: &[Complex64],
    w2: &[Complex64],
    basis: &OrthonormalBasis,
    proj: &BasisProjections,
) -> Result<Projected> {
    let coords = |w: &[Complex64]| -> Result<(Complex64, Complex64)> {
        let a = inner(&basis.u1, w);
        let b = inner(&basis.u2, w);
        let residual: Vec<Complex64> = w
            .iter()
            .zip(basis.u1.iter().zip(&basis.u2))
            .map(|(wi, (u1, u2))| wi - a * u1 - b * u2)
            .collect();
        let r = norm(&residual);
        if r > SPAN_TOL * norm(w).max(1.0) {
            return Err(Error::OutOfSpan(r));
        }
        Ok((a, b))
    };
    let (a1, a2) = coords(w1)?;
    let (b1, b2) = coords(w2)?;
    let params = BeamParams {
        rho1: a1.norm(),
        rho2: a2.norm(),
        delta1: b1.norm(),
        delta2: b2.norm(),
        tau1: wrap_angle(b1.arg() - a1.arg()),
        phi1: wrap_angle(b1.arg()),
        phi2: wrap_angle(b2.arg()),
    }
    .wrapped();

    let g21 = proj.g21();
    let at_u2_s1 = a1 * g21 + a2 * proj.g22;
    let at_u2_s2 = b1 * g21 + b2 * proj.g22;
    let scale = (proj.g21_mag + proj.g22) * (norm(w1) + norm(w2)).max(f64::MIN_POSITIVE);
    let aligned = at_u2_s1.norm() <= SPAN_TOL * scale
        || at_u2_s2.norm() == 0.0
        || angle_diff(at_u2_s1.arg(), at_u2_s2.arg()).abs() <= SPAN_TOL;
    Ok(Projected { params, aligned })
}

/// Power shares of the two users for benchmark beamformers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSplit {
    pub first: f64,
    pub second: f64,
}

impl Default for PowerSplit {
    fn default() -> Self {
        Self {
            first: 0.5,
            second: 0.5,
        }
    }
}

impl PowerSplit {
    fn validate(&self) -> Result<()> {
        if !(self.first >= 0.0 && self.second >= 0.0 && self.first + self.second <= 1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!("invalid power split {self:?}")));
        }
        Ok(())
    }
}

/// Maximum ratio transmission towards `h` with power `p`.
pub fn mrt_vector(h: &[Complex64], p: f64) -> Result<Vec<Complex64>> {
    let n = norm(h);
    if !(n > 0.0) {
        return Err(Error::Domain("MRT towards a zero channel".into()));
    }
    let s = p.sqrt() / n;
    Ok(h.iter().map(|z| z * s).collect())
}

/// Zero-forcing vector for `target` that nulls `other`, with power `p`.
pub fn zf_vector(target: &[Complex64], other: &[Complex64], p: f64) -> Result<Vec<Complex64>> {
    let no = norm(other);
    if !(no > 0.0) {
        return Err(Error::Domain("zero-forcing against a zero channel".into()));
    }
    let mut v = target.to_vec();
    for _ in 0..2 {
        let c = inner(other, &v) / (no * no);
        for (vi, oi) in v.iter_mut().zip(other) {
            *vi -= oi * c;
        }
    }
    let n = norm(&v);
    if !(n > 1e-14 * norm(target)) {
        return Err(Error::DegenerateBasis { residual: n });
    }
    let s = p.sqrt() / n;
    Ok(v.iter().map(|z| z * s).collect())
}

pub fn mrt_pair(h1: &[Complex64], h2: &[Complex64], split: PowerSplit) -> Result<BeamPair> {
    split.validate()?;
    Ok(BeamPair {
        w1: mrt_vector(h1, split.first)?,
        w2: mrt_vector(h2, split.second)?,
    })
}

pub fn zfbf_pair(h1: &[Complex64], h2: &[Complex64], split: PowerSplit) -> Result<BeamPair> {
    split.validate()?;
    Ok(BeamPair {
        w1: zf_vector(h1, h2, split.first)?,
        w2: zf_vector(h2, h1, split.second)?,
    })
}

/// Thresholds of the two SIC ordering constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintContext {
    /// `Y1 = (M1 − 1)/(M2 − 1) · (√M2 − 1)²`.
    pub y1: f64,
    /// `Λ2 = √M2 − 1`.
    pub lambda2: f64,
    /// Strict inequalities are checked as `ratio ≥ Y1 (1 + strict_margin)`.
    pub strict_margin: f64,
}

impl ConstraintContext {
    pub fn new(mods: ModulationSpec) -> Self {
        let side2 = (mods.m2 as f64).sqrt();
        Self {
            y1: (mods.m1 as f64 - 1.0) / (mods.m2 as f64 - 1.0) * (side2 - 1.0).powi(2),
            lambda2: side2 - 1.0,
            strict_margin: 1e-9,
        }
    }

    fn threshold(&self) -> f64 {
        self.y1 * (1.0 + self.strict_margin)
    }
}

/// Outcome of the three feasibility checks plus range bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    /// `|ρ1 / (δ1 (cos τ1 − sin τ1) Λ2)|`, infinite when undefined.
    pub u1_ratio: f64,
    /// `G1 / G2`, infinite when `G2 = 0`.
    pub u2_ratio: f64,
    pub power: f64,
    pub u1_ok: bool,
    pub u2_ok: bool,
    pub power_ok: bool,
    pub ranges_ok: bool,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.u1_ok && self.u2_ok && self.power_ok
    }

    /// Feasible and inside the parameter box.
    pub fn valid(&self) -> bool {
        self.feasible() && self.ranges_ok
    }

    /// Relative slack of the first SIC constraint (negative when violated).
    pub fn u1_margin(&self, ctx: &ConstraintContext) -> f64 {
        self.u1_ratio / ctx.threshold() - 1.0
    }

    pub fn u2_margin(&self, ctx: &ConstraintContext) -> f64 {
        self.u2_ratio / ctx.threshold() - 1.0
    }
}

const POWER_TOL: f64 = 1e-12;

fn u1_ratio(params: &BeamParams, ctx: &ConstraintContext) -> f64 {
    let trig = params.tau1.cos() - params.tau1.sin();
    let den = params.delta1 * trig * ctx.lambda2;
    if den == 0.0 {
        f64::INFINITY
    } else {
        (params.rho1 / den).abs()
    }
}

fn u2_ratio(params: &BeamParams, proj: &BasisProjections) -> f64 {
    let den = u2_signal_gain(params, proj);
    if den == 0.0 {
        f64::INFINITY
    } else {
        sic_gain(params, proj) / den
    }
}

pub fn check_constraints(
    params: &BeamParams,
    proj: &BasisProjections,
    ctx: &ConstraintContext,
) -> FeasibilityReport {
    let r1 = u1_ratio(params, ctx);
    let r2 = u2_ratio(params, proj);
    let power = params.power();
    FeasibilityReport {
        u1_ratio: r1,
        u2_ratio: r2,
        power,
        u1_ok: r1 >= ctx.threshold(),
        u2_ok: r2 >= ctx.threshold(),
        power_ok: power <= 1.0 + POWER_TOL,
        ranges_ok: params.in_range(),
    }
}

/// Fallback amplitudes and nudges of the post-network repair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    pub rho_defaults: [f64; 2],
    pub delta_defaults: [f64; 2],
    pub kappa1: f64,
    pub kappa2: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            rho_defaults: [0.5, 0.5],
            delta_defaults: [0.5, 0.5],
            kappa1: 1e-5,
            kappa2: 1e-5,
        }
    }
}

impl RepairConfig {
    /// Defaults set to the mean amplitudes of a set of labels.
    pub fn from_labels<'a, I: IntoIterator<Item = &'a BeamParams>>(labels: I) -> Result<Self> {
        let mut sums = [0.0; 4];
        let mut n = 0usize;
        for p in labels {
            for (s, a) in sums.iter_mut().zip(p.amplitudes()) {
                *s += a;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mean = sums.map(|s| (s / n as f64).clamp(1e-3, 1.0));
        let cfg = Self {
            rho_defaults: [mean[0], mean[1]],
            delta_defaults: [mean[2], mean[3]],
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let defaults_ok = self
            .rho_defaults
            .iter()
            .chain(&self.delta_defaults)
            .all(|d| *d > 0.0 && *d <= 1.0);
        if !defaults_ok || !(self.kappa1 > 0.0) || !(self.kappa2 > 0.0) {
            return Err(Error::InvalidInput(format!("invalid repair config {self:?}")));
        }
        Ok(())
    }
}

/// Cap on explicit iterations of each shrink loop.
pub const REPAIR_ITERATION_CAP: usize = 10_000;

/// Smallest `n ≥ 0` such that dividing by `factor^n` satisfies `ok`, found
/// by a logarithmic jump followed by explicit steps.
fn shrink_until<F>(value: &mut f64, factor: f64, needed_ratio: f64, mut ok: F) -> Result<()>
where
    F: FnMut(f64) -> bool,
{
    if ok(*value) {
        return Ok(());
    }
    if !(factor > 1.0) || !needed_ratio.is_finite() {
        return Err(Error::RepairFailure(0));
    }
    // jump to two steps short of the predicted count, then step one at a time
    let predicted = (needed_ratio.ln() / factor.ln()).ceil();
    if predicted.is_finite() && predicted > 2.0 {
        *value /= factor.powf(predicted - 2.0);
    }
    for _ in 0..REPAIR_ITERATION_CAP {
        if ok(*value) {
            return Ok(());
        }
        *value /= factor;
    }
    if ok(*value) {
        Ok(())
    } else {
        Err(Error::RepairFailure(REPAIR_ITERATION_CAP))
    }
}

/// Post-network repair: makes any raw parameter vector feasible.
///
/// Steps: replace non-positive amplitudes by defaults, rescale to unit power,
/// nudge `τ1` off the `cos τ1 = sin τ1` line, shrink `δ1` until the U1
/// constraint holds, nudge `δ2` if U2's signal gain vanishes, shrink both `δ`
/// until the U2 constraint holds, rescale again. Angles are finally wrapped
/// into `[0, 2π)`.
pub fn repair_params(
    raw: &BeamParams,
    proj: &BasisProjections,
    ctx: &ConstraintContext,
    cfg: &RepairConfig,
) -> Result<BeamParams> {
    if raw.angles().iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput("non-finite angle".into()));
    }
    let mut p = *raw;
    // NaN amplitudes fall through to the defaults as well
    if !(p.rho1 > 0.0) {
        p.rho1 = cfg.rho_defaults[0];
    }
    if !(p.rho2 > 0.0) {
        p.rho2 = cfg.rho_defaults[1];
    }
    if !(p.delta1 > 0.0) {
        p.delta1 = cfg.delta_defaults[0];
    }
    if !(p.delta2 > 0.0) {
        p.delta2 = cfg.delta_defaults[1];
    }
    if !p.is_finite() {
        return Err(Error::InvalidInput("non-finite amplitude".into()));
    }

    let s = p.power();
    if s > 1.0 {
        p.scale_amplitudes(1.0 / s.sqrt());
    }

    if (p.tau1.cos() - p.tau1.sin()).abs() <= 1e-12 {
        p.tau1 += cfg.kappa1;
    }

    let threshold = ctx.threshold();
    {
        // the U1 ratio is inversely proportional to δ1
        let base = p;
        let needed = threshold / u1_ratio(&base, ctx).max(f64::MIN_POSITIVE);
        shrink_until(&mut p.delta1, base.rho1 + 1.0, needed, |d| {
            u1_ratio(&BeamParams { delta1: d, ..base }, ctx) >= threshold
        })?;
    }

    if u2_signal_gain(&p, proj) <= 1e-15 * (proj.g21_mag + proj.g22) {
        p.delta2 += cfg.kappa2;
    }

    {
        // scaling both δ by 1/f scales G2 by 1/f and leaves G1 unchanged
        let factor = p.rho1 + p.rho2 + 1.0;
        let mut scale = 1.0;
        let base = p;
        let needed = threshold / u2_ratio(&base, proj).max(f64::MIN_POSITIVE);
        shrink_until(&mut scale, factor, needed, |s| {
            let trial = BeamParams {
                delta1: base.delta1 * s,
                delta2: base.delta2 * s,
                ..base
            };
            u2_ratio(&trial, proj) >= threshold
        })?;
        p.delta1 = base.delta1 * scale;
        p.delta2 = base.delta2 * scale;
    }

    let s = p.power();
    if s > 1.0 {
        p.scale_amplitudes(1.0 / s.sqrt());
    }
    Ok(p.wrapped())
}

/// Maps parameters to an equivalent representative with identical BERs and
/// constraint values.
///
/// * `(φ1, φ2)` are shifted jointly so that `φ1 = 0` (only `φ2 − φ1` is
///   observable).
/// * `τ1` is folded into `[π/4, 3π/4]` using `τ → τ + π` and
///   `τ → π/2 − τ`, which leave both the U1 interference set and
///   `|cos τ1 − sin τ1|` unchanged.
/// * Angles that do not influence anything (`δ1 = 0` or `δ2 = 0`) are set to
///   fixed values.
pub fn canonicalize(params: &BeamParams, proj: &BasisProjections) -> BeamParams {
    let mut p = *params;
    p.phi2 = wrap_angle(p.phi2 - p.phi1);
    p.phi1 = 0.0;
    if p.delta1 == 0.0 || p.delta2 == 0.0 {
        p.phi2 = proj.g21_angle;
    }
    if p.delta1 == 0.0 {
        p.tau1 = FRAC_PI_2;
    } else {
        let mut t = wrap_angle(p.tau1);
        // reflect about π/4 into [π/4, 5π/4)
        if !(FRAC_PI_4..FRAC_PI_4 + PI).contains(&t) {
            t = wrap_angle(FRAC_PI_2 - t);
        }
        // translate the upper half by −π: [3π/4, 5π/4) → [−π/4, π/4), reflect back
        if t > 3.0 * FRAC_PI_4 {
            t = wrap_angle(FRAC_PI_2 - (t - PI));
        }
        p.tau1 = t;
    }
    p.wrapped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ber::BerEvaluator;
    use crate::channel::{analyze, sample_scenario, Geometry};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_params(rng: &mut ChaCha8Rng) -> BeamParams {
        let mut a = [0.0f64; 4];
        for v in &mut a {
            *v = 0.05 + 0.95 * rng.random::<f64>();
        }
        let s: f64 = a.iter().map(|v| v * v).sum();
        let k = if s > 1.0 { 1.0 / s.sqrt() } else { 1.0 };
        BeamParams::from_array([
            a[0] * k,
            a[1] * k,
            a[2] * k,
            a[3] * k,
            rng.random::<f64>() * TAU,
            rng.random::<f64>() * TAU,
            rng.random::<f64>() * TAU,
        ])
    }

    #[test]
    fn single_component_assembly() {
        let s = sample_scenario(3, &Geometry::default(), 1).unwrap();
        let (basis, proj) = analyze(&s).unwrap();
        let p = BeamParams::from_array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pair = assemble_beamformers(&p, &basis, &proj);
        for (w, u) in pair.w1.iter().zip(&basis.u1) {
            assert_abs_diff_eq!((w - u).norm(), 0.0, epsilon = 1e-15);
        }
        assert!(pair.w2.iter().all(|w| w.norm() == 0.0));
    }

    #[test]
    fn assembled_power_matches_amplitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..100 {
            let s = sample_scenario(2 + (seed as usize % 4), &Geometry::default(), seed).unwrap();
            let (basis, proj) = analyze(&s).unwrap();
            let p = random_params(&mut rng);
            let pair = assemble_beamformers(&p, &basis, &proj);
            assert_abs_diff_eq!(pair.power(), p.power(), epsilon = 1e-12);
        }
    }

    #[test]
    fn reduced_gains_equal_full_vector_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for seed in 0..200 {
            let s = sample_scenario(2 + (seed as usize % 4), &Geometry::default(), seed).unwrap();
            let (basis, proj) = analyze(&s).unwrap();
            let p = random_params(&mut rng);
            let full = decision_gains(&assemble_beamformers(&p, &basis, &proj), &s);
            let reduced = DecisionGains::reduced(&p, &proj);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            assert!(rel(full.u1_signal, reduced.u1_signal) < 1e-10);
            assert!(rel(full.u1_interference, reduced.u1_interference) < 1e-10);
            assert!(angle_diff(full.u1_phase_gap, reduced.u1_phase_gap).abs() < 1e-10);
            assert!(rel(full.u2_sic, reduced.u2_sic) < 1e-10);
            assert!(rel(full.u2_signal, reduced.u2_signal) < 1e-10);
        }
    }

    #[test]
    fn aligned_tau_removes_u2_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for seed in 0..100 {
            let s = sample_scenario(3, &Geometry::default(), seed).unwrap();
            let (basis, proj) = analyze(&s).unwrap();
            let mut p = random_params(&mut rng);
            p.tau1 = aligned_tau1(&p, &proj);
            let g = decision_gains(&assemble_beamformers(&p, &basis, &proj), &s);
            assert!(angle_diff(g.u2_phase_gap, 0.0).abs() < 1e-9);
            let pair = assemble_beamformers(&p, &basis, &proj);
            assert!(params_from_vectors(&pair.w1, &pair.w2, &basis, &proj).unwrap().aligned);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for seed in 0..100 {
            let s = sample_scenario(4, &Geometry::default(), seed).unwrap();
            let (basis, proj) = analyze(&s).unwrap();
            let p = random_params(&mut rng).wrapped();
            let pair = assemble_beamformers(&p, &basis, &proj);
            let back = params_from_vectors(&pair.w1, &pair.w2, &basis, &proj).unwrap().params;
            for (a, b) in p.amplitudes().iter().zip(back.amplitudes()) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
            }
            for (a, b) in p.angles().iter().zip(back.angles()) {
                assert!(angle_diff(*a, b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_span_is_rejected() {
        let s = sample_scenario(3, &Geometry::default(), 4).unwrap();
        let (basis, proj) = analyze(&s).unwrap();
        // a vector orthogonal to both h1 and h2 in C^3
        let mut w = vec![c(1.0, 0.0), c(0.0, 1.0), c(0.5, 0.5)];
        for u in [&basis.u1, &basis.u2] {
            let k = inner(u, &w);
            for (wi, ui) in w.iter_mut().zip(u.iter()) {
                *wi -= ui * k;
            }
        }
        let zero = vec![c(0.0, 0.0); 3];
        assert!(matches!(
            params_from_vectors(&w, &zero, &basis, &proj),
            Err(Error::OutOfSpan(_))
        ));
    }

    #[test]
    fn mrt_examples() {
        let h = vec![c(3.0, 0.0), c(4.0, 0.0)];
        let w = mrt_vector(&h, 1.0).unwrap();
        assert_abs_diff_eq!((w[0] - c(0.6, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((w[1] - c(0.8, 0.0)).norm(), 0.0, epsilon = 1e-15);

        let s = sample_scenario(4, &Geometry::default(), 2).unwrap();
        let pair = mrt_pair(&s.h1, &s.h2, PowerSplit::default()).unwrap();
        assert_abs_diff_eq!(pair.power(), 1.0, epsilon = 1e-12);
        let g = inner(&s.h1, &pair.w1).norm();
        assert_abs_diff_eq!(g / (0.5f64.sqrt() * norm(&s.h1)), 1.0, epsilon = 1e-12);
        assert!(mrt_vector(&[c(0.0, 0.0), c(0.0, 0.0)], 1.0).is_err());
    }

    #[test]
    fn zfbf_hand_example() {
        let h1 = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let h2 = vec![c(0.6, 0.0), c(0.8, 0.0)];
        let pair = zfbf_pair(&h1, &h2, PowerSplit::default()).unwrap();
        let r = 0.5f64.sqrt();
        assert_abs_diff_eq!((pair.w1[0] - c(0.8 * r, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((pair.w1[1] - c(-0.6 * r, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pair.w2[0].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((pair.w2[1] - c(r, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert!(zfbf_pair(&h1, &[c(2.0, 0.0), c(0.0, 0.0)], PowerSplit::default()).is_err());
    }

    #[test]
    fn zfbf_nulls_and_projects() {
        for seed in 0..200 {
            let nt = 2 + (seed as usize % 4);
            let s = sample_scenario(nt, &Geometry::default(), seed).unwrap();
            let pair = zfbf_pair(&s.h1, &s.h2, PowerSplit::default()).unwrap();
            let scale = norm(&s.h1).max(norm(&s.h2));
            assert!(inner(&s.h2, &pair.w1).norm() <= 1e-12 * scale);
            assert!(inner(&s.h1, &pair.w2).norm() <= 1e-12 * scale);
            let (basis, proj) = analyze(&s).unwrap();
            let projected = params_from_vectors(&pair.w1, &pair.w2, &basis, &proj).unwrap();
            assert!(projected.params.delta1 < 1e-12);
            assert!(projected.aligned);
            if nt == 2 {
                // the orthogonal complement of h1 in C^2 is u2 itself
                let k = inner(&basis.u2, &pair.w2);
                for (w, u) in pair.w2.iter().zip(&basis.u2) {
                    assert_abs_diff_eq!((w - u * k).norm(), 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn mrt_is_generally_misaligned() {
        let mut misaligned = 0;
        for seed in 0..50 {
            let s = sample_scenario(2, &Geometry::default(), seed).unwrap();
            let (basis, proj) = analyze(&s).unwrap();
            let pair = mrt_pair(&s.h1, &s.h2, PowerSplit::default()).unwrap();
            if !params_from_vectors(&pair.w1, &pair.w2, &basis, &proj).unwrap().aligned {
                misaligned += 1;
            }
        }
        assert!(misaligned >= 45, "{misaligned}");
    }

    #[test]
    fn constraint_thresholds() {
        let ctx = ConstraintContext::new(ModulationSpec::qpsk());
        assert_eq!(ctx.y1, 1.0);
        assert_eq!(ctx.lambda2, 1.0);
        let ctx = ConstraintContext::new(ModulationSpec::new(4, 16).unwrap());
        assert_abs_diff_eq!(ctx.y1, 1.8, epsilon = 1e-12);
    }

    #[test]
    fn constraint_hand_example() {
        let ctx = ConstraintContext::new(ModulationSpec::qpsk());
        let proj = BasisProjections {
            h1_norm: 1.0,
            g21_mag: 0.8,
            g21_angle: 0.0,
            g22: 0.6,
        };
        let p = BeamParams::from_array([0.8, 0.1, 0.3, 0.2, PI, 0.0, 0.0]);
        let r = check_constraints(&p, &proj, &ctx);
        assert_abs_diff_eq!(r.power, 0.78, epsilon = 1e-12);
        assert!(r.power_ok);
        assert_abs_diff_eq!(r.u1_ratio, 0.8 / 0.3, epsilon = 1e-12);
        assert!(r.u1_ok);
        // G1 = 0.8·0.8 + 0.1·0.6 = 0.70, G2 = 0.3·0.8 + 0.2·0.6 = 0.36
        assert_abs_diff_eq!(r.u2_ratio, 0.70 / 0.36, epsilon = 1e-12);
        assert!(r.feasible());
    }

    #[test]
    fn constraint_degenerate_cases_are_satisfied() {
        let ctx = ConstraintContext::new(ModulationSpec::qpsk());
        let proj = BasisProjections {
            h1_norm: 1.0,
            g21_mag: 0.0,
            g21_angle: 0.0,
            g22: 0.6,
        };
        let p = BeamParams::from_array([0.5, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let r = check_constraints(&p, &proj, &ctx);
        assert!(r.u1_ratio.is_infinite() && r.u2_ratio.is_infinite());
        assert!(r.feasible());
    }

    fn qpsk_ctx() -> ConstraintContext {
        ConstraintContext::new(ModulationSpec::qpsk())
    }

    fn some_proj() -> BasisProjections {
        BasisProjections {
            h1_norm: 1.0,
            g21_mag: 0.7,
            g21_angle: 0.9,
            g22: 0.5,
        }
    }

    #[test]
    fn repair_replaces_non_positive_amplitudes() {
        let cfg = RepairConfig {
            rho_defaults: [0.6, 0.3],
            ..RepairConfig::default()
        };
        let raw = BeamParams::from_array([-0.1, 0.2, 0.1, 0.1, 2.0, 0.0, 0.0]);
        let out = repair_params(&raw, &some_proj(), &qpsk_ctx(), &cfg).unwrap();
        assert_eq!(out.rho1, 0.6);
        assert_eq!(out.rho2, 0.2);
    }

    #[test]
    fn repair_rescales_power() {
        // after rescaling, |cos τ1 − sin τ1| ≈ 0.4 gives a U1 ratio of 2.5 and
        // the quadrature φ2 gives G1/G2 = √2, so only the rescale acts
        let proj = BasisProjections {
            h1_norm: 1.0,
            g21_mag: 0.5,
            g21_angle: 0.0,
            g22: 0.5,
        };
        let raw = BeamParams::from_array([0.8, 0.8, 0.8, 0.8, 0.5, 0.0, FRAC_PI_2]);
        let out = repair_params(&raw, &proj, &qpsk_ctx(), &RepairConfig::default()).unwrap();
        for a in out.amplitudes() {
            assert_abs_diff_eq!(a, 0.5, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(out.power(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn repair_nudges_tau() {
        let raw = BeamParams::from_array([0.5, 0.5, 0.1, 0.1, FRAC_PI_4, 0.0, 0.0]);
        let out = repair_params(&raw, &some_proj(), &qpsk_ctx(), &RepairConfig::default()).unwrap();
        assert_abs_diff_eq!(out.tau1, FRAC_PI_4 + 1e-5, epsilon = 1e-15);
    }

    #[test]
    fn repair_output_is_feasible_for_feasible_input() {
        let ctx = qpsk_ctx();
        let proj = some_proj();
        let p = BeamParams::from_array([0.8, 0.1, 0.3, 0.2, PI, 0.0, 0.0]);
        let out = repair_params(&p, &proj, &ctx, &RepairConfig::default()).unwrap();
        assert!(check_constraints(&out, &proj, &ctx).valid());
    }

    #[test]
    fn repair_is_total_on_adversarial_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let ctx = qpsk_ctx();
        let cfg = RepairConfig::default();
        for i in 0..2000u64 {
            let s = sample_scenario(2 + (i as usize % 4), &Geometry::default(), i).unwrap();
            let (_, proj) = analyze(&s).unwrap();
            let mut v = [0.0; 7];
            for a in v.iter_mut().take(4) {
                *a = -1.0 + 3.0 * rng.random::<f64>();
            }
            for a in v.iter_mut().skip(4) {
                *a = -10.0 + 20.0 * rng.random::<f64>();
            }
            let out = repair_params(&BeamParams::from_array(v), &proj, &ctx, &cfg).unwrap();
            assert!(check_constraints(&out, &proj, &ctx).valid(), "{v:?} -> {out:?}");
        }
    }

    #[test]
    fn repair_handles_tiny_rho1() {
        let raw = BeamParams::from_array([1e-7, 1.5, 2.0, 1.9, 0.0, 0.0, 0.0]);
        let out = repair_params(&raw, &some_proj(), &qpsk_ctx(), &RepairConfig::default()).unwrap();
        assert!(check_constraints(&out, &some_proj(), &qpsk_ctx()).valid());
    }

    #[test]
    fn canonical_form_preserves_objective_and_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eval = BerEvaluator::new(ModulationSpec::qpsk());
        let ctx = qpsk_ctx();
        for seed in 0..300 {
            let s = sample_scenario(2, &Geometry::default(), seed).unwrap();
            let (_, proj) = analyze(&s).unwrap();
            let mut p = random_params(&mut rng);
            if seed % 7 == 0 {
                p.delta1 = 0.0;
            }
            let n0 = 1e-13;
            let q = canonicalize(&p, &proj);
            assert!((FRAC_PI_4..=3.0 * FRAC_PI_4 + 1e-12).contains(&q.tau1), "{}", q.tau1);
            assert_eq!(q.phi1, 0.0);
            let (a, b) = (eval.pair(&p, &proj, n0).unwrap(), eval.pair(&q, &proj, n0).unwrap());
            assert_abs_diff_eq!(a.pe1, b.pe1, epsilon = 1e-14);
            assert_abs_diff_eq!(a.pe2, b.pe2, epsilon = 1e-14);
            let (ra, rb) = (check_constraints(&p, &proj, &ctx), check_constraints(&q, &proj, &ctx));
            assert_eq!(ra.feasible(), rb.feasible());
            if ra.u1_ratio.is_finite() {
                assert!((ra.u1_ratio - rb.u1_ratio).abs() <= 1e-9 * ra.u1_ratio);
            }
            assert_eq!(canonicalize(&q, &proj), q);
        }
    }

    proptest! {
        #[test]
        fn repair_always_valid(
            amps in prop::array::uniform4(-1.0f64..2.0),
            angles in prop::array::uniform3(-20.0f64..20.0),
            g21 in 0.0f64..2.0,
            g21_angle in 0.0f64..TAU,
            g22 in 1e-3f64..2.0,
        ) {
            let proj = BasisProjections { h1_norm: 1.0, g21_mag: g21, g21_angle, g22 };
            let raw = BeamParams::from_array([amps[0], amps[1], amps[2], amps[3], angles[0], angles[1], angles[2]]);
            let out = repair_params(&raw, &proj, &qpsk_ctx(), &RepairConfig::default()).unwrap();
            prop_assert!(check_constraints(&out, &proj, &qpsk_ctx()).valid());
        }
    }
}
