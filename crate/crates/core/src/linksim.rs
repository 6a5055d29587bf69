//! Symbol-level Monte Carlo simulation of the two-user downlink.
//!
//! Each symbol period draws Gray-coded QAM symbols for both users, sends
//! `x = w1 s1 + w2 s2`, and adds complex Gaussian noise at each receiver.
//! U1 slices its phase-corrected statistic directly; U2 first detects `s1`,
//! subtracts it, then detects `s2`.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::beamformer::BeamPair;
use crate::ber::ModulationSpec;
use crate::channel::{inner, Scenario};
use crate::rng::stream;
use crate::{Error, Result};

/// Symbols per independently seeded block.
pub const BLOCK_SYMBOLS: u64 = 1 << 16;

/// Square Gray-coded QAM constellation with unit average energy.
///
/// A word of `log2 M` bits is read MSB first; the upper half selects the
/// in-phase level and the lower half the quadrature level. Along each axis,
/// level `j` (counting down from the most positive amplitude `√M − 1`) carries
/// the binary-reflected Gray code `j ^ (j >> 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    order: u32,
    side: u32,
    half_bits: u32,
    /// Constellation point of each bit word.
    points: Vec<Complex64>,
    /// Axis sub-word of each level index.
    level_code: Vec<u32>,
    /// Level index of each axis sub-word.
    code_level: Vec<u32>,
    scale: f64,
}

impl GrayMap {
    pub fn new(order: u32) -> Result<Self> {
        let side = (order as f64).sqrt().round() as u32;
        if order < 4 || side * side != order || !side.is_power_of_two() {
            return Err(Error::UnsupportedModulation(order));
        }
        let half_bits = side.trailing_zeros();
        let level_code: Vec<u32> = (0..side).map(|j| j ^ (j >> 1)).collect();
        let mut code_level = vec![0; side as usize];
        for (j, &g) in level_code.iter().enumerate() {
            code_level[g as usize] = j as u32;
        }
        let scale = 1.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let amp = |j: u32| (side as f64 - 1.0 - 2.0 * j as f64) * scale;
        let points = (0..order)
            .map(|word| {
                let (gi, gq) = (word >> half_bits, word & (side - 1));
                Complex64::new(amp(code_level[gi as usize]), amp(code_level[gq as usize]))
            })
            .collect();
        Ok(Self {
            order,
            side,
            half_bits,
            points,
            level_code,
            code_level,
            scale,
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        2 * self.half_bits
    }

    /// `1/√E`, the factor applied to the odd-integer grid.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn point(&self, word: u32) -> Complex64 {
        self.points[word as usize]
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    fn slice_axis(&self, v: f64) -> u32 {
        // level j sits at (side − 1 − 2j)·scale
        let j = ((self.side as f64 - 1.0 - v / self.scale) / 2.0).round();
        j.clamp(0.0, self.side as f64 - 1.0) as u32
    }

    /// Nearest constellation point, returned as its bit word.
    pub fn slice(&self, z: Complex64) -> u32 {
        let gi = self.level_code[self.slice_axis(z.re) as usize];
        let gq = self.level_code[self.slice_axis(z.im) as usize];
        (gi << self.half_bits) | gq
    }

    /// Exhaustive minimum-distance detection of `y = gain·s + noise`.
    pub fn ml_detect(&self, y: Complex64, gain: f64) -> u32 {
        (0..self.order)
            .min_by(|&a, &b| {
                let da = (y - self.point(a) * gain).norm_sqr();
                let db = (y - self.point(b) * gain).norm_sqr();
                da.total_cmp(&db)
            })
            .expect("constellation is non-empty")
    }

    /// The full bit table, one `(bits, point)` row per word.
    pub fn table(&self) -> Vec<(String, Complex64)> {
        let width = self.bits_per_symbol() as usize;
        (0..self.order)
            .map(|w| (format!("{w:0width$b}"), self.point(w)))
            .collect()
    }

    /// Level index along one axis for a sub-word.
    pub fn level_of(&self, code: u32) -> u32 {
        self.code_level[code as usize]
    }
}

/// Maps a bit slice (MSB first) to its constellation point.
pub fn modulate_gray(bits: &[u8], map: &GrayMap) -> Result<Complex64> {
    if bits.len() != map.bits_per_symbol() as usize {
        return Err(Error::InvalidInput(format!(
            "expected {} bits, got {}",
            map.bits_per_symbol(),
            bits.len()
        )));
    }
    let mut word = 0u32;
    for &b in bits {
        if b > 1 {
            return Err(Error::InvalidInput(format!("bit value {b}")));
        }
        word = (word << 1) | b as u32;
    }
    Ok(map.point(word))
}

/// Binomial standard error of a bit error rate estimate.
pub fn standard_error(ber: f64, n_bits: u64) -> f64 {
    if n_bits == 0 {
        return f64::NAN;
    }
    (ber * (1.0 - ber) / n_bits as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimResult {
    pub symbols: u64,
    pub bits_sent: [u64; 2],
    pub bit_errors: [u64; 2],
    pub ber1: f64,
    pub ber2: f64,
    /// Fraction of symbol periods in which U2's estimate of `s1` was wrong.
    pub sic_symbol_error_rate: f64,
}

impl SimResult {
    pub fn psi(&self) -> f64 {
        self.ber1.max(self.ber2)
    }

    pub fn standard_errors(&self) -> [f64; 2] {
        [
            standard_error(self.ber1, self.bits_sent[0]),
            standard_error(self.ber2, self.bits_sent[1]),
        ]
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    errors1: u64,
    errors2: u64,
    sic_errors: u64,
}

impl Counts {
    fn merge(self, o: Self) -> Self {
        Self {
            errors1: self.errors1 + o.errors1,
            errors2: self.errors2 + o.errors2,
            sic_errors: self.sic_errors + o.sic_errors,
        }
    }
}

/// Effective scalar channels `c_nk = h_nᴴ w_k`.
#[derive(Debug, Clone, Copy)]
struct Link {
    c11: Complex64,
    c12: Complex64,
    c21: Complex64,
    c22: Complex64,
}

struct Receivers<'a> {
    link: Link,
    map1: &'a GrayMap,
    map2: &'a GrayMap,
    sigma: f64,
    /// U1 derotation and gain.
    rot1: Complex64,
    gain1: f64,
    /// U2 derotation, its own gain, and the derotated `s1` coefficient.
    rot2: Complex64,
    gain2: f64,
    a2: Complex64,
}

impl<'a> Receivers<'a> {
    fn new(link: Link, map1: &'a GrayMap, map2: &'a GrayMap, n0: f64) -> Self {
        let unit = |c: Complex64| {
            if c.norm() > 0.0 {
                Complex64::from_polar(1.0, -c.arg())
            } else {
                Complex64::new(1.0, 0.0)
            }
        };
        let rot1 = unit(link.c11);
        let rot2 = unit(link.c22);
        Self {
            link,
            map1,
            map2,
            sigma: (n0 / 2.0).sqrt(),
            rot1,
            gain1: link.c11.norm(),
            rot2,
            gain2: link.c22.norm(),
            a2: link.c21 * rot2,
        }
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> Complex64 {
        if self.sigma == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * self.sigma
    }

    fn detect(map: &GrayMap, z: Complex64, gain: Complex64, rng: &mut ChaCha8Rng) -> u32 {
        if gain.norm() > 0.0 {
            map.slice(z / gain)
        } else {
            rng.random_range(0..map.order())
        }
    }

    fn run_block(&self, n: u64, rng: &mut ChaCha8Rng) -> Counts {
        let mut counts = Counts::default();
        let (m1, m2) = (self.map1.order(), self.map2.order());
        for _ in 0..n {
            let b1 = rng.random_range(0..m1);
            let b2 = rng.random_range(0..m2);
            let (s1, s2) = (self.map1.point(b1), self.map2.point(b2));
            let y1 = self.link.c11 * s1 + self.link.c12 * s2 + self.noise(rng);
            let y2 = self.link.c21 * s1 + self.link.c22 * s2 + self.noise(rng);

            let d1 = Self::detect(self.map1, y1 * self.rot1, self.gain1.into(), rng);
            counts.errors1 += (d1 ^ b1).count_ones() as u64;

            let z2 = y2 * self.rot2;
            let s1_hat = Self::detect(self.map1, z2, self.a2, rng);
            if s1_hat != b1 {
                counts.sic_errors += 1;
            }
            let residual = z2 - self.a2 * self.map1.point(s1_hat);
            let d2 = Self::detect(self.map2, residual, self.gain2.into(), rng);
            counts.errors2 += (d2 ^ b2).count_ones() as u64;
        }
        counts
    }
}

/// Simulates `n_symbols` symbol periods and counts bit errors per user.
///
/// Blocks of [`BLOCK_SYMBOLS`] use independent streams derived from
/// `(seed, block)`, so the result does not depend on thread scheduling.
pub fn simulate_ber_pair(
    pair: &BeamPair,
    scenario: &Scenario,
    mods: ModulationSpec,
    n0_eff: f64,
    n_symbols: u64,
    seed: u64,
) -> Result<SimResult> {
    if n_symbols == 0 {
        return Err(Error::InvalidInput("n_symbols must be at least 1".into()));
    }
    if !(n0_eff >= 0.0) || !n0_eff.is_finite() {
        return Err(Error::Domain(format!("noise variance {n0_eff}")));
    }
    if pair.w1.len() != scenario.nt || pair.w2.len() != scenario.nt {
        return Err(Error::InvalidInput("beamformer length differs from nt".into()));
    }
    let map1 = GrayMap::new(mods.m1)?;
    let map2 = GrayMap::new(mods.m2)?;
    let link = Link {
        c11: inner(&scenario.h1, &pair.w1),
        c12: inner(&scenario.h1, &pair.w2),
        c21: inner(&scenario.h2, &pair.w1),
        c22: inner(&scenario.h2, &pair.w2),
    };
    let rx = Receivers::new(link, &map1, &map2, n0_eff);
    let blocks = n_symbols.div_ceil(BLOCK_SYMBOLS);
    let counts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let n = BLOCK_SYMBOLS.min(n_symbols - b * BLOCK_SYMBOLS);
            rx.run_block(n, &mut stream(seed, &[b]))
        })
        .reduce(Counts::default, Counts::merge);

    let bits1 = n_symbols * map1.bits_per_symbol() as u64;
    let bits2 = n_symbols * map2.bits_per_symbol() as u64;
    Ok(SimResult {
        symbols: n_symbols,
        bits_sent: [bits1, bits2],
        bit_errors: [counts.errors1, counts.errors2],
        ber1: counts.errors1 as f64 / bits1 as f64,
        ber2: counts.errors2 as f64 / bits2 as f64,
        sic_symbol_error_rate: counts.sic_errors as f64 / n_symbols as f64,
    })
}
