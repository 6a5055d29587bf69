//! Closed-form conditional bit error rates of both NOMA users.
//!
//! Both expressions are sums of Gaussian tail probabilities whose arguments
//! are built from the received decision statistics:
//!
//! * U1 sees `ρ1‖h1‖ s1 + δ1‖h1‖ e^{jτ1} s2 + noise` and slices for `s1`
//!   directly. The bit error probability is the Gray-coded PAM expression per
//!   axis, averaged over the `M2` interference points.
//! * U2 sees `G1 s1 + G2 s2 + noise` (both real after phase correction),
//!   detects `s1` first, subtracts it and slices for `s2`.
//!
//! Term coefficients depend only on the modulation pair and are tabulated
//! once in a [`BerTermTable`].

use serde::{Deserialize, Serialize};

use crate::beamformer::BeamParams;
use crate::channel::BasisProjections;
use crate::{Error, Result};

/// Gaussian tail probability `Q(x) = P(Z > x)`.
///
/// Evaluated as `erfc(x/√2)/2` with the musl `erfc`, whose relative error is
/// below one ulp; the scaling of the argument adds at most ~1e-14 relative
/// error for `|x| ≤ 8`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Square QAM orders of the two users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModulationSpec {
    pub m1: u32,
    pub m2: u32,
}

fn check_order(m: u32) -> Result<()> {
    match m {
        4 | 16 | 64 => Ok(()),
        other => Err(Error::UnsupportedModulation(other)),
    }
}

impl ModulationSpec {
    pub fn new(m1: u32, m2: u32) -> Result<Self> {
        check_order(m1)?;
        check_order(m2)?;
        Ok(Self { m1, m2 })
    }

    pub fn qpsk() -> Self {
        Self { m1: 4, m2: 4 }
    }

    /// `√M_n` for user 1 or 2.
    pub fn side(m: u32) -> u32 {
        (m as f64).sqrt().round() as u32
    }

    /// `E_n = 2(M_n − 1)/3`, the mean energy of the unnormalized grid.
    pub fn energy(m: u32) -> f64 {
        2.0 * (m as f64 - 1.0) / 3.0
    }

    pub fn e1(&self) -> f64 {
        Self::energy(self.m1)
    }

    pub fn e2(&self) -> f64 {
        Self::energy(self.m2)
    }

    pub fn bits_per_symbol(m: u32) -> u32 {
        m.trailing_zeros()
    }
}

impl Default for ModulationSpec {
    fn default() -> Self {
        Self::qpsk()
    }
}

/// Per-user BERs and the max-BER objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPair {
    pub pe1: f64,
    pub pe2: f64,
    pub psi: f64,
}

impl BerPair {
    pub fn new(pe1: f64, pe2: f64) -> Self {
        Self {
            pe1,
            pe2,
            psi: psi(pe1, pe2),
        }
    }
}

/// Max-BER fairness objective.
pub fn psi(pe1: f64, pe2: f64) -> f64 {
    pe1.max(pe2)
}

/// Amplitudes and phase gaps of the phase-corrected decision statistics.
///
/// Built either from reduced parameters ([`DecisionGains::reduced`]) or from
/// actual beamforming vectors (see `beamformer::decision_gains`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionGains {
    /// `|h1ᴴw1|`.
    pub u1_signal: f64,
    /// `|h1ᴴw2|`.
    pub u1_interference: f64,
    /// `∠h1ᴴw2 − ∠h1ᴴw1`.
    pub u1_phase_gap: f64,
    /// `|h2ᴴw1|`, the gain of the symbol cancelled by SIC.
    pub u2_sic: f64,
    /// `|h2ᴴw2|`.
    pub u2_signal: f64,
    /// `∠h2ᴴw1 − ∠h2ᴴw2`; the U2 expression requires it to vanish.
    pub u2_phase_gap: f64,
}

impl DecisionGains {
    /// Gains implied by the reduced parameterization with coherent
    /// combining of U1's components at U2.
    pub fn reduced(params: &BeamParams, proj: &BasisProjections) -> Self {
        Self {
            u1_signal: params.rho1 * proj.h1_norm,
            u1_interference: params.delta1 * proj.h1_norm,
            u1_phase_gap: params.tau1,
            u2_sic: sic_gain(params, proj),
            u2_signal: u2_signal_gain(params, proj),
            u2_phase_gap: 0.0,
        }
    }
}

/// `G1 = ρ1|h2ᴴu1| + ρ2|h2ᴴu2|`.
pub fn sic_gain(params: &BeamParams, proj: &BasisProjections) -> f64 {
    params.rho1 * proj.g21_mag + params.rho2 * proj.g22
}

/// `G2 = |δ1 e^{jφ1} h2ᴴu1 + δ2 e^{jφ2} h2ᴴu2|`.
pub fn u2_signal_gain(params: &BeamParams, proj: &BasisProjections) -> f64 {
    let a = params.delta1 * proj.g21_mag;
    let b = params.delta2 * proj.g22;
    let phase = params.phi1 + proj.g21_angle - params.phi2;
    (a * a + b * b + 2.0 * a * b * phase.cos()).max(0.0).sqrt()
}

/// One `coef · Q(·)` term of the U1 expression: argument
/// `a·ρ1‖h1‖/√E1 + δ1‖h1‖/√E2 (b cos τ1 + c sin τ1)` over `√(N0/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct U1Term {
    coef: f64,
    a: f64,
}

/// One `coef · Q(g2±(l, b))` term of the U2 expression.
#[derive(Debug, Clone, Copy, PartialEq)]
struct U2Term {
    coef: f64,
    l: f64,
    b: f64,
    plus: bool,
}

/// Coefficients of both closed-form expressions for one modulation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BerTermTable {
    mods: ModulationSpec,
    u1_terms: Vec<U1Term>,
    /// Interference coordinates `(b, c)` ranging over U2's grid.
    u1_interference: Vec<(f64, f64)>,
    u1_scale: f64,
    u2_terms: Vec<U2Term>,
    u2_scale: f64,
}

/// `(-1)^n`.
fn alt(n: i64) -> f64 {
    if n.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

impl BerTermTable {
    pub fn new(mods: ModulationSpec) -> Self {
        let side1 = ModulationSpec::side(mods.m1) as i64;
        let side2 = ModulationSpec::side(mods.m2) as i64;
        let bits1 = side1.trailing_zeros() as i64; // log2 √M1
        let bits2 = side2.trailing_zeros() as i64; // log2 √M2
        let lambda1 = side1 - 1;
        let lambda2 = side2 - 1;

        // U1: Σ_i Σ_k D1(i,k) Σ_{l,m} Q(g1(2k+1, ·, ·))
        let mut u1_terms = Vec::new();
        for i in 1..=bits1 {
            let p = 1i64 << (i - 1);
            let last_k = side1 - side1 / (1 << i) - 1; // (1 − 2^{−i})√M1 − 1
            for k in 0..=last_k {
                let lam = (k * p) / side1;
                let rounded = (2 * k * p + side1) / (2 * side1); // ⌊k 2^{i−1}/√M1 + ½⌋
                let d1 = alt(lam) * (p - rounded) as f64;
                u1_terms.push(U1Term {
                    coef: d1,
                    a: (2 * k + 1) as f64,
                });
            }
        }
        let mut u1_interference = Vec::with_capacity((side2 * side2) as usize);
        for l in 0..=lambda2 {
            for m in 0..=lambda2 {
                u1_interference.push(((2 * l - side2 + 1) as f64, (2 * m - side2 + 1) as f64));
            }
        }
        let u1_scale = 2.0 / bits1 as f64 / (mods.m2 as f64 * side1 as f64);

        // U2: coefficients as printed; only validated pairs are exposed.
        let mut u2_terms = Vec::new();
        let d3_exponent = |i: i64| 1.0 - (i - 1) as f64 * ((side1 - 1) as f64).log2();
        for i in 1..=bits2 {
            let p = 1i64 << (i - 1);
            let last_k = side2 - side2 / (1 << i) - 1;
            for k in 0..=last_k {
                let lam = (k * p) / side2;
                let rounded = (2 * k * p + side2) / (2 * side2);
                let d2 = (p - rounded) as f64;
                for l in 0..=(2 * lambda1) {
                    let s_exp = (l << (bits2 + i - 1)) / side2 + lam;
                    let s = alt(s_exp);
                    let d3 = (1i64 << bits1) as f64
                        - (l as f64 / 2f64.powf(d3_exponent(i)) + 0.5).floor();
                    let coef = s * d2 * d3;
                    let b = (2 * k + 1) as f64;
                    u2_terms.push(U2Term {
                        coef,
                        l: l as f64,
                        b,
                        plus: true,
                    });
                    if l >= 1 {
                        u2_terms.push(U2Term {
                            coef: -coef,
                            l: l as f64,
                            b,
                            plus: false,
                        });
                    }
                }
            }
        }
        u2_terms.retain(|t| t.coef != 0.0);
        let u2_scale = 2.0 / bits2 as f64 / ((mods.m1 * mods.m2) as f64).sqrt();

        Self {
            mods,
            u1_terms,
            u1_interference,
            u1_scale,
            u2_terms,
            u2_scale,
        }
    }

    pub fn modulation(&self) -> ModulationSpec {
        self.mods
    }

    /// Number of Q-function evaluations per call for (U1, U2).
    pub fn term_counts(&self) -> (usize, usize) {
        (
            self.u1_terms.len() * self.u1_interference.len(),
            self.u2_terms.len(),
        )
    }

    /// U1's BER from its decision gains, without modulation gating or
    /// clamping.
    pub fn u1_raw(&self, signal: f64, interference: f64, tau: f64, n0_eff: f64) -> f64 {
        let sigma = (n0_eff / 2.0).sqrt();
        let sig = signal / self.mods.e1().sqrt() / sigma;
        let itf = interference / self.mods.e2().sqrt() / sigma;
        let (sin_t, cos_t) = tau.sin_cos();
        let mut total = 0.0;
        for t in &self.u1_terms {
            let base = t.a * sig;
            let inner: f64 = self
                .u1_interference
                .iter()
                .map(|&(b, c)| q_function(base + itf * (b * cos_t + c * sin_t)))
                .sum();
            total += t.coef * inner;
        }
        self.u1_scale * total
    }

    /// U2's BER from aligned decision gains, without modulation gating or
    /// clamping.
    pub fn u2_raw(&self, sic: f64, signal: f64, n0_eff: f64) -> f64 {
        let sigma = (n0_eff / 2.0).sqrt();
        let a = sic / self.mods.e1().sqrt() / sigma;
        let b = signal / self.mods.e2().sqrt() / sigma;
        let total: f64 = self
            .u2_terms
            .iter()
            .map(|t| {
                let arg = if t.plus { t.l * a + t.b * b } else { t.l * a - t.b * b };
                t.coef * q_function(arg)
            })
            .sum();
        self.u2_scale * total
    }
}

/// Modulation pairs whose closed form agrees with symbol-level simulation
/// (see `tests/ber_vs_montecarlo.rs`).
pub const VALIDATED_U1: &[(u32, u32)] = &[(4, 4), (4, 16), (4, 64), (16, 4), (16, 16), (16, 64), (64, 4)];
pub const VALIDATED_U2: &[(u32, u32)] = &[(4, 4), (16, 4), (64, 4)];

pub fn is_validated(mods: ModulationSpec, user: u8) -> bool {
    let list = if user == 1 { VALIDATED_U1 } else { VALIDATED_U2 };
    list.contains(&(mods.m1, mods.m2))
}

fn require_validated(mods: ModulationSpec, user: u8) -> Result<()> {
    if is_validated(mods, user) {
        Ok(())
    } else {
        Err(Error::UnvalidatedModulation {
            m1: mods.m1,
            m2: mods.m2,
            user: if user == 1 { "U1" } else { "U2" },
        })
    }
}

/// Clamps a probability, rejecting violations beyond rounding error.
fn clamp_probability(p: f64) -> Result<f64> {
    if !(p >= -1e-12 && p <= 1.0 + 1e-12) {
        return Err(Error::ProbabilityOutOfRange { value: p });
    }
    Ok(p.clamp(0.0, 1.0))
}

fn check_noise(n0_eff: f64) -> Result<()> {
    if !(n0_eff > 0.0) || !n0_eff.is_finite() {
        return Err(Error::Domain(format!("noise variance must be positive, got {n0_eff}")));
    }
    Ok(())
}

/// Evaluator bound to one modulation pair; reuses its term table.
#[derive(Debug, Clone)]
pub struct BerEvaluator {
    table: BerTermTable,
    validated_u1: bool,
    validated_u2: bool,
}

impl BerEvaluator {
    pub fn new(mods: ModulationSpec) -> Self {
        Self {
            table: BerTermTable::new(mods),
            validated_u1: is_validated(mods, 1),
            validated_u2: is_validated(mods, 2),
        }
    }

    pub fn modulation(&self) -> ModulationSpec {
        self.table.mods
    }

    pub fn user1(&self, params: &BeamParams, proj: &BasisProjections, n0_eff: f64) -> Result<f64> {
        self.user1_gains(&DecisionGains::reduced(params, proj), n0_eff)
    }

    pub fn user2(&self, params: &BeamParams, proj: &BasisProjections, n0_eff: f64) -> Result<f64> {
        self.user2_gains(&DecisionGains::reduced(params, proj), n0_eff)
    }

    pub fn pair(&self, params: &BeamParams, proj: &BasisProjections, n0_eff: f64) -> Result<BerPair> {
        self.pair_gains(&DecisionGains::reduced(params, proj), n0_eff)
    }

    pub fn user1_gains(&self, g: &DecisionGains, n0_eff: f64) -> Result<f64> {
        if !self.validated_u1 {
            require_validated(self.table.mods, 1)?;
        }
        check_noise(n0_eff)?;
        clamp_probability(self.table.u1_raw(g.u1_signal, g.u1_interference, g.u1_phase_gap, n0_eff))
    }

    /// U2's BER; the SIC symbol must arrive phase aligned with U2's own
    /// symbol unless its gain is zero.
    pub fn user2_gains(&self, g: &DecisionGains, n0_eff: f64) -> Result<f64> {
        if !self.validated_u2 {
            require_validated(self.table.mods, 2)?;
        }
        check_noise(n0_eff)?;
        let scale = g.u2_sic.max(g.u2_signal).max(f64::MIN_POSITIVE);
        let aligned = g.u2_sic <= 1e-12 * scale
            || g.u2_signal == 0.0
            || crate::angle_diff(g.u2_phase_gap, 0.0).abs() <= 1e-9;
        if !aligned {
            return Err(Error::NotAligned);
        }
        clamp_probability(self.table.u2_raw(g.u2_sic, g.u2_signal, n0_eff))
    }

    pub fn pair_gains(&self, g: &DecisionGains, n0_eff: f64) -> Result<BerPair> {
        Ok(BerPair::new(self.user1_gains(g, n0_eff)?, self.user2_gains(g, n0_eff)?))
    }
}

/// `P_e^(1)` for the reduced parameters.
pub fn ber_user1(
    params: &BeamParams,
    proj: &BasisProjections,
    mods: ModulationSpec,
    n0_eff: f64,
) -> Result<f64> {
    BerEvaluator::new(mods).user1(params, proj, n0_eff)
}

/// `P_e^(2)` for the reduced parameters.
pub fn ber_user2(
    params: &BeamParams,
    proj: &BasisProjections,
    mods: ModulationSpec,
    n0_eff: f64,
) -> Result<f64> {
    BerEvaluator::new(mods).user2(params, proj, n0_eff)
}

pub fn ber_pair(
    params: &BeamParams,
    proj: &BasisProjections,
    mods: ModulationSpec,
    n0_eff: f64,
) -> Result<BerPair> {
    BerEvaluator::new(mods).pair(params, proj, n0_eff)
}

/// Both BERs written out for `M1 = M2 = 4`.
pub fn ber_4qam_appendix(
    params: &BeamParams,
    proj: &BasisProjections,
    mods: ModulationSpec,
    n0_eff: f64,
) -> Result<BerPair> {
    if mods != ModulationSpec::qpsk() {
        return Err(Error::InvalidInput(format!(
            "4-QAM expressions need M1 = M2 = 4, got ({}, {})",
            mods.m1, mods.m2
        )));
    }
    check_noise(n0_eff)?;
    let sigma = (n0_eff / 2.0).sqrt();
    let sqrt2 = std::f64::consts::SQRT_2;
    let sig1 = params.rho1 * proj.h1_norm / sqrt2;
    let itf1 = params.delta1 * proj.h1_norm / sqrt2;
    let (sin_t, cos_t) = params.tau1.sin_cos();
    let g1 = |a: f64, b: f64, c: f64| (a * sig1 + itf1 * (b * cos_t + c * sin_t)) / sigma;
    let pe1 = 0.25
        * (q_function(g1(1.0, -1.0, -1.0))
            + q_function(g1(1.0, -1.0, 1.0))
            + q_function(g1(1.0, 1.0, -1.0))
            + q_function(g1(1.0, 1.0, 1.0)));

    let big1 = sic_gain(params, proj) / sqrt2;
    let big2 = u2_signal_gain(params, proj) / sqrt2;
    let gp = |a: f64, b: f64| (a * big1 + b * big2) / sigma;
    let gm = |a: f64, b: f64| (a * big1 - b * big2) / sigma;
    let pe2 = 0.5
        * (2.0 * q_function(gp(0.0, 1.0)) - q_function(gp(1.0, 1.0)) + q_function(gp(2.0, 1.0))
            + q_function(gm(1.0, 1.0))
            - q_function(gm(2.0, 1.0)));
    Ok(BerPair::new(clamp_probability(pe1)?, clamp_probability(pe2)?))
}
