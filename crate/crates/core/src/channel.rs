//! Channel realizations, the two-vector orthonormal basis and network features.
//!
//! Channels follow `h = sqrt(beta) * h_tilde` with `h_tilde ~ CN(0, I)` and a
//! large-scale attenuation `beta = 10^(-PL/10)`. The weak user (U1) is always
//! the one with the smaller channel norm.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{rng, wrap_angle, Error, Result};

/// Noise and power budget of the downlink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub tx_power_watt: f64,
}

impl Default for LinkBudget {
    /// 2 GHz carrier, 10 MHz, -174 dBm/Hz, 100 mW.
    fn default() -> Self {
        Self {
            carrier_freq_hz: 2e9,
            bandwidth_hz: 10e6,
            noise_density_dbm_hz: -174.0,
            tx_power_watt: 0.1,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_freq_hz > 0.0 && self.bandwidth_hz > 0.0 && self.tx_power_watt > 0.0)
            || !self.noise_density_dbm_hz.is_finite()
        {
            return Err(Error::Domain(format!("invalid link budget {self:?}")));
        }
        Ok(())
    }

    /// Receiver noise variance `N0 = N_PD * B` in watts.
    pub fn noise_variance_watt(&self) -> f64 {
        10f64.powf((self.noise_density_dbm_hz + 10.0 * self.bandwidth_hz.log10() - 30.0) / 10.0)
    }

    /// Noise variance seen by unit-power beamformers, `N0 / P_tx`.
    pub fn effective_noise_watt(&self) -> f64 {
        self.noise_variance_watt() / self.tx_power_watt
    }
}

/// Path loss in dB, `128.1 + 37.6 log10(d)` with `d` in kilometres.
pub fn path_loss_db(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) || !d_km.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {d_km}")));
    }
    Ok(128.1 + 37.6 * d_km.log10())
}

/// Linear large-scale gain for a path loss in dB (attenuation).
pub fn large_scale_gain(path_loss_db: f64) -> f64 {
    10f64.powf(-path_loss_db / 10.0)
}

/// User placement for scenario generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Distance interval of the weak user, metres.
    pub d1_range_m: (f64, f64),
    /// Distance interval of the strong user, metres.
    pub d2_range_m: (f64, f64),
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            d1_range_m: (600.0, 650.0),
            d2_range_m: (350.0, 400.0),
        }
    }
}

impl Geometry {
    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.d1_range_m, self.d2_range_m] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::Domain(format!("invalid distance interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// One channel realization of a user pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nt: usize,
    pub h1: Vec<Complex64>,
    pub h2: Vec<Complex64>,
    pub d1_m: f64,
    pub d2_m: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Scenario {
    /// Builds a scenario from explicit channels, swapping user roles if
    /// needed so that `‖h1‖ ≤ ‖h2‖`.
    pub fn from_channels(
        h1: Vec<Complex64>,
        h2: Vec<Complex64>,
        d1_m: f64,
        d2_m: f64,
        seed: u64,
    ) -> Result<Self> {
        if h1.len() != h2.len() || h1.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "channel lengths {} and {} (need equal, >= 2)",
                h1.len(),
                h2.len()
            )));
        }
        if h1.iter().chain(&h2).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite channel entry".into()));
        }
        let beta1 = large_scale_gain(path_loss_db(d1_m / 1000.0)?);
        let beta2 = large_scale_gain(path_loss_db(d2_m / 1000.0)?);
        let mut s = Self {
            nt: h1.len(),
            h1,
            h2,
            d1_m,
            d2_m,
            beta1,
            beta2,
            seed,
        };
        if norm(&s.h1) > norm(&s.h2) {
            s.swap_users();
        }
        Ok(s)
    }

    fn swap_users(&mut self) {
        std::mem::swap(&mut self.h1, &mut self.h2);
        std::mem::swap(&mut self.d1_m, &mut self.d2_m);
        std::mem::swap(&mut self.beta1, &mut self.beta2);
    }
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `aᴴ b`.
pub(crate) fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Draws one `CN(0, 1)` sample.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws a scenario. Deterministic in `seed`.
pub fn sample_scenario(nt: usize, geometry: &Geometry, seed: u64) -> Result<Scenario> {
    if nt < 2 {
        return Err(Error::Domain(format!("need at least 2 antennas, got {nt}")));
    }
    geometry.validate()?;
    let mut rng = rng::stream(seed, &[]);
    let (lo1, hi1) = geometry.d1_range_m;
    let (lo2, hi2) = geometry.d2_range_m;
    let d1_m = lo1 + (hi1 - lo1) * rng.random::<f64>();
    let d2_m = lo2 + (hi2 - lo2) * rng.random::<f64>();
    let beta1 = large_scale_gain(path_loss_db(d1_m / 1000.0)?);
    let beta2 = large_scale_gain(path_loss_db(d2_m / 1000.0)?);
    let (s1, s2) = (beta1.sqrt(), beta2.sqrt());
    let h1: Vec<Complex64> = (0..nt).map(|_| complex_gaussian(&mut rng) * s1).collect();
    let h2: Vec<Complex64> = (0..nt).map(|_| complex_gaussian(&mut rng) * s2).collect();
    let mut scenario = Scenario {
        nt,
        h1,
        h2,
        d1_m,
        d2_m,
        beta1,
        beta2,
        seed,
    };
    if norm(&scenario.h1) > norm(&scenario.h2) {
        scenario.swap_users();
    }
    Ok(scenario)
}

/// The first two vectors of an orthonormal basis adapted to the channels.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    pub u1: Vec<Complex64>,
    pub u2: Vec<Complex64>,
}

/// Gram–Schmidt: `u1 = h1/‖h1‖`, `u2 ∝ (I - u1 u1ᴴ) h2`.
pub fn build_basis(scenario: &Scenario) -> Result<OrthonormalBasis> {
    let n1 = norm(&scenario.h1);
    if !(n1 > 0.0) {
        return Err(Error::Domain("h1 is the zero vector".into()));
    }
    let u1: Vec<Complex64> = scenario.h1.iter().map(|z| z / n1).collect();
    let n2 = norm(&scenario.h2);
    let mut r = scenario.h2.clone();
    // two passes keep |u1ᴴu2| at rounding level for nearly parallel channels
    for _ in 0..2 {
        let c = inner(&u1, &r);
        for (ri, ui) in r.iter_mut().zip(&u1) {
            *ri -= ui * c;
        }
    }
    let residual = norm(&r);
    if !(residual >= 1e-14 * n2) || residual == 0.0 {
        return Err(Error::DegenerateBasis { residual });
    }
    let u2 = r.iter().map(|z| z / residual).collect();
    Ok(OrthonormalBasis { u1, u2 })
}

/// Inner products of the channels with the basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisProjections {
    /// `‖h1‖ = h1ᴴu1`.
    pub h1_norm: f64,
    /// `|h2ᴴu1|`.
    pub g21_mag: f64,
    /// `∠h2ᴴu1` in `[0, 2π)`.
    pub g21_angle: f64,
    /// `h2ᴴu2`, real and positive.
    pub g22: f64,
}

impl BasisProjections {
    pub fn g21(&self) -> Complex64 {
        Complex64::from_polar(self.g21_mag, self.g21_angle)
    }
}

pub fn project_channels(scenario: &Scenario, basis: &OrthonormalBasis) -> BasisProjections {
    let g11 = inner(&scenario.h1, &basis.u1);
    let g21 = inner(&scenario.h2, &basis.u1);
    let g22 = inner(&scenario.h2, &basis.u2);
    let g21_mag = g21.norm();
    BasisProjections {
        h1_norm: g11.re,
        g21_mag,
        g21_angle: if g21_mag > 0.0 { wrap_angle(g21.arg()) } else { 0.0 },
        g22: g22.re,
    }
}

/// Basis and projections in one step.
pub fn analyze(scenario: &Scenario) -> Result<(OrthonormalBasis, BasisProjections)> {
    let basis = build_basis(scenario)?;
    let proj = project_channels(scenario, &basis);
    Ok((basis, proj))
}

/// How the three squared features are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SquaredScaling {
    /// `(ξ·m)²`: all seven inputs are O(1) for the default geometry.
    #[default]
    SquareOfScaled,
    /// `ξ·m²`.
    ScaledSquare,
}

pub const FEATURE_DIM: usize = 7;

/// Seven network inputs; identical layout for every antenna count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

/// Default equalization factor.
pub const DEFAULT_XI: f64 = 1e6;

pub fn extract_features(proj: &BasisProjections, xi: f64) -> FeatureVector {
    extract_features_with(proj, xi, SquaredScaling::default())
}

pub fn extract_features_with(
    proj: &BasisProjections,
    xi: f64,
    scaling: SquaredScaling,
) -> FeatureVector {
    let mags = [proj.h1_norm, proj.g22, proj.g21_mag];
    let scaled = mags.map(|m| xi * m);
    let squared = match scaling {
        SquaredScaling::SquareOfScaled => scaled.map(|s| s * s),
        SquaredScaling::ScaledSquare => mags.map(|m| xi * m * m),
    };
    FeatureVector([
        scaled[0],
        scaled[1],
        scaled[2],
        squared[0],
        squared[1],
        squared[2],
        proj.g21_angle,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn path_loss_values() {
        assert_eq!(path_loss_db(1.0).unwrap(), 128.1);
        assert_abs_diff_eq!(path_loss_db(0.6).unwrap(), 119.76, epsilon = 0.01);
        assert_abs_diff_eq!(path_loss_db(0.375).unwrap(), 112.08, epsilon = 0.01);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-1.0).is_err());
    }

    #[test]
    fn link_budget_noise() {
        let b = LinkBudget::default();
        // -174 dBm/Hz + 70 dB(Hz) = -104 dBm
        assert_abs_diff_eq!(b.noise_variance_watt(), 10f64.powf(-13.4), epsilon = 1e-25);
        assert_eq!(b.effective_noise_watt(), b.noise_variance_watt() / 0.1);
    }

    #[test]
    fn scenario_is_ordered_and_deterministic() {
        let g = Geometry::default();
        let a = sample_scenario(2, &g, 7).unwrap();
        let b = sample_scenario(2, &g, 7).unwrap();
        assert_eq!(a, b);
        assert!(norm(&a.h1) <= norm(&a.h2));
        for seed in 0..500 {
            let s = sample_scenario(3, &g, seed).unwrap();
            assert!(norm(&s.h1) <= norm(&s.h2));
            assert!(s.beta1 > 0.0 && s.beta2 > 0.0);
        }
        assert!(sample_scenario(1, &g, 0).is_err());
    }

    #[test]
    fn small_scale_fading_has_unit_variance_per_entry() {
        let g = Geometry::default();
        let nt = 4;
        let draws = 10_000;
        let mut acc = 0.0;
        for seed in 0..draws {
            let s = sample_scenario(nt, &g, seed).unwrap();
            // swapping permutes users but keeps the pair's total energy
            acc += (norm(&s.h1).powi(2) / s.beta1 + norm(&s.h2).powi(2) / s.beta2) / 2.0;
        }
        let mean = acc / draws as f64;
        assert!((mean - nt as f64).abs() < 0.05 * nt as f64, "mean {mean}");
    }

    #[test]
    fn basis_hand_example() {
        let s = Scenario::from_channels(vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.6, 0.0), c(0.8, 0.0)], 600.0, 400.0, 0)
            .unwrap();
        let b = build_basis(&s).unwrap();
        assert_abs_diff_eq!((b.u1[0] - c(1.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.u1[1].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.u2[0].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((b.u2[1] - c(1.0, 0.0)).norm(), 0.0, epsilon = 1e-15);

        let p = project_channels(&s, &b);
        assert_abs_diff_eq!(p.h1_norm, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.g21_mag, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p.g21_angle, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.g22, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn parallel_channels_are_degenerate() {
        let h1 = vec![c(0.3, -0.2), c(0.1, 0.5)];
        let h2: Vec<_> = h1.iter().map(|z| z * 2.0).collect();
        let s = Scenario::from_channels(h1, h2, 600.0, 400.0, 0).unwrap();
        assert!(matches!(build_basis(&s), Err(Error::DegenerateBasis { .. })));
    }

    #[test]
    fn orthogonal_channels_have_no_cross_term() {
        let s = Scenario::from_channels(vec![c(0.0, 0.5), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.3, 0.9)], 600.0, 400.0, 0)
            .unwrap();
        let (_, p) = analyze(&s).unwrap();
        assert_abs_diff_eq!(p.g21_mag, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn feature_hand_example() {
        let p = BasisProjections {
            h1_norm: 1.4e-6,
            g21_mag: 5e-7,
            g21_angle: 1.0,
            g22: 1.2e-6,
        };
        let f = extract_features(&p, 1e6).0;
        let expected = [1.4, 1.2, 0.5, 1.96, 1.44, 0.25, 1.0];
        for (a, b) in f.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let alt = extract_features_with(&p, 1e6, SquaredScaling::ScaledSquare).0;
        assert_abs_diff_eq!(alt[3], 1.96e-6, epsilon = 1e-18);
    }

    #[test]
    fn feature_identity_scale() {
        let p = BasisProjections {
            h1_norm: 1.0,
            g21_mag: 1.0,
            g21_angle: 0.5,
            g22: 1.0,
        };
        let f = extract_features(&p, 1.0).0;
        for i in 0..3 {
            assert_eq!(f[i], f[i + 3].sqrt());
        }
    }

    #[test]
    fn feature_dimension_is_independent_of_antennas() {
        let g = Geometry::default();
        for nt in [2, 5] {
            let s = sample_scenario(nt, &g, 11).unwrap();
            let (_, p) = analyze(&s).unwrap();
            let f = extract_features(&p, DEFAULT_XI);
            assert_eq!(f.0.len(), FEATURE_DIM);
            assert!(f.0[..6].iter().all(|&v| v >= 0.0));
            assert!((0.0..std::f64::consts::TAU).contains(&f.0[6]));
        }
    }
}
