//! Multi-start penalized local search for the min-max BER problem.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamformer::{
    check_constraints, repair_params, BeamParams, ConstraintContext, FeasibilityReport,
    RepairConfig,
};
use crate::ber::{BerEvaluator, ModulationSpec};
use crate::channel::BasisProjections;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoConfig {
    pub n_starts: usize,
    /// Simplex iterations per penalty round.
    pub max_iterations: usize,
    /// Penalty weights, applied in order, each round starting from the
    /// previous round's best point.
    pub penalty_schedule: Vec<f64>,
    /// Relative spread of `ln Ψ` across the simplex at which a round stops.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for CoConfig {
    fn default() -> Self {
        Self {
            n_starts: 20,
            max_iterations: 1500,
            penalty_schedule: vec![1e2, 1e4],
            tolerance: 1e-9,
            seed: 0,
        }
    }
}

impl CoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0
            || self.max_iterations == 0
            || self.penalty_schedule.is_empty()
            || self.penalty_schedule.iter().any(|m| !(*m >= 0.0))
            || !(self.tolerance > 0.0)
        {
            return Err(Error::InvalidInput(format!("invalid optimizer config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: usize,
    pub psi: f64,
    pub feasible: bool,
    /// Every penalty round stopped on the tolerance rather than the cap.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoSolution {
    pub params: BeamParams,
    pub psi_value: f64,
    pub trace: Vec<StartTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalResult {
    pub params: BeamParams,
    pub psi: f64,
    pub converged: bool,
}

/// Squared normalized constraint violations.
fn violation_sq(report: &FeasibilityReport, ctx: &ConstraintContext) -> f64 {
    let v27 = (-report.u1_margin(ctx)).max(0.0);
    let v28 = (-report.u2_margin(ctx)).max(0.0);
    let v29 = (report.power - 1.0).max(0.0);
    v27 * v27 + v28 * v28 + v29 * v29
}

struct Problem<'a> {
    eval: BerEvaluator,
    proj: &'a BasisProjections,
    ctx: ConstraintContext,
    n0: f64,
}

impl<'a> Problem<'a> {
    fn new(proj: &'a BasisProjections, mods: ModulationSpec, n0: f64) -> Self {
        Self {
            eval: BerEvaluator::new(mods),
            proj,
            ctx: ConstraintContext::new(mods),
            n0,
        }
    }

    fn psi(&self, p: &BeamParams) -> Result<f64> {
        Ok(self.eval.pair(p, self.proj, self.n0)?.psi)
    }

    /// Objective of one penalty round, plus the plain Ψ when the point is
    /// feasible.
    fn penalized(&self, p: &BeamParams, mu: f64) -> Result<(f64, Option<f64>)> {
        let psi = self.psi(p)?;
        let report = check_constraints(p, self.proj, &self.ctx);
        let v = violation_sq(&report, &self.ctx);
        let feasible = report.feasible() && report.ranges_ok;
        Ok((psi + mu * v, feasible.then_some(psi)))
    }
}

/// `Ψ(params) + mu · Σ max(0, violation)²` over the two SIC constraints and
/// the power budget, with violations normalized by their thresholds.
pub fn penalized_objective(
    params: &BeamParams,
    proj: &BasisProjections,
    mods: ModulationSpec,
    n0_eff: f64,
    mu: f64,
) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidInput(format!("penalty weight {mu}")));
    }
    Ok(Problem::new(proj, mods, n0_eff).penalized(params, mu)?.0)
}

/// Maps an unconstrained simplex vertex to parameters and its box penalty.
fn decode(x: &[f64; 7]) -> (BeamParams, f64) {
    let mut v = *x;
    let mut outside = 0.0;
    for a in v.iter_mut().take(4) {
        let c = a.clamp(0.0, 1.0);
        outside += (*a - c).powi(2);
        *a = c;
    }
    (BeamParams::from_array(v).wrapped(), outside)
}

struct Simplex {
    points: Vec<[f64; 7]>,
    values: Vec<f64>,
}

impl Simplex {
    fn order(&mut self) {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.points = idx.iter().map(|&i| self.points[i]).collect();
        self.values = idx.iter().map(|&i| self.values[i]).collect();
    }
}

fn lerp(a: &[f64; 7], b: &[f64; 7], t: f64) -> [f64; 7] {
    std::array::from_fn(|i| a[i] + t * (b[i] - a[i]))
}

/// Nelder–Mead on `f`, minimizing `ln f`-spread to a relative tolerance.
/// Returns the best vertex and whether the tolerance was reached.
fn nelder_mead<F>(x0: [f64; 7], steps: [f64; 7], max_iter: usize, tol: f64, mut f: F) -> ([f64; 7], bool)
where
    F: FnMut(&[f64; 7]) -> f64,
{
    let mut s = Simplex {
        points: vec![x0],
        values: vec![f(&x0)],
    };
    for i in 0..7 {
        let mut x = x0;
        x[i] += steps[i];
        s.values.push(f(&x));
        s.points.push(x);
    }
    let logf = |v: f64| v.max(1e-300).ln();
    for _ in 0..max_iter {
        s.order();
        let (lo, hi) = (logf(s.values[0]), logf(s.values[7]));
        if (hi - lo).abs() <= tol * lo.abs().max(1.0) {
            return (s.points[0], true);
        }
        let centroid: [f64; 7] =
            std::array::from_fn(|i| s.points[..7].iter().map(|p| p[i]).sum::<f64>() / 7.0);
        let worst = s.points[7];
        let xr = lerp(&centroid, &worst, -1.0);
        let fr = f(&xr);
        if fr < s.values[0] {
            let xe = lerp(&centroid, &worst, -2.0);
            let fe = f(&xe);
            if fe < fr {
                s.points[7] = xe;
                s.values[7] = fe;
            } else {
                s.points[7] = xr;
                s.values[7] = fr;
            }
            continue;
        }
        if fr < s.values[6] {
            s.points[7] = xr;
            s.values[7] = fr;
            continue;
        }
        let (xc, fc) = if fr < s.values[7] {
            let xc = lerp(&centroid, &xr, 0.5);
            (xc, f(&xc))
        } else {
            let xc = lerp(&centroid, &worst, 0.5);
            (xc, f(&xc))
        };
        if fc < s.values[7].min(fr) {
            s.points[7] = xc;
            s.values[7] = fc;
            continue;
        }
        let best = s.points[0];
        for i in 1..8 {
            s.points[i] = lerp(&best, &s.points[i], 0.5);
            s.values[i] = f(&s.points[i]);
        }
    }
    s.order();
    (s.points[0], false)
}

/// One penalized local search from `start`, followed by repair.
///
/// The returned Ψ is the smaller of the repaired end point and the best
/// feasible point visited, so a feasible start is never made worse.
pub fn local_search(
    start: &BeamParams,
    proj: &BasisProjections,
    mods: ModulationSpec,
    n0_eff: f64,
    cfg: &CoConfig,
) -> Result<LocalResult> {
    cfg.validate()?;
    let problem = Problem::new(proj, mods, n0_eff);
    // surfaces modulation and noise errors before the search
    problem.psi(start)?;

    let mut best_feasible: Option<(f64, BeamParams)> = None;
    let mut x = start.to_array();
    let mut converged = true;
    for &mu in &cfg.penalty_schedule {
        let mut objective = |v: &[f64; 7]| {
            let (p, outside) = decode(v);
            match problem.penalized(&p, mu) {
                Ok((value, feasible_psi)) => {
                    if let Some(psi) = feasible_psi {
                        if best_feasible.is_none_or(|(b, _)| psi < b) {
                            best_feasible = Some((psi, p));
                        }
                    }
                    value + mu * outside
                }
                Err(_) => f64::INFINITY,
            }
        };
        let steps: [f64; 7] = std::array::from_fn(|i| {
            if i < 4 {
                if x[i] > 0.5 { -0.1 } else { 0.1 }
            } else {
                0.5
            }
        });
        let (xb, ok) = nelder_mead(x, steps, cfg.max_iterations, cfg.tolerance, &mut objective);
        x = xb;
        converged &= ok;
    }

    let (end, _) = decode(&x);
    let repaired = repair_params(&end, proj, &problem.ctx, &RepairConfig::default())?;
    let mut result = LocalResult {
        params: repaired,
        psi: problem.psi(&repaired)?,
        converged,
    };
    if let Some((psi, p)) = best_feasible {
        if psi < result.psi {
            result.params = p;
            result.psi = psi;
        }
    }
    Ok(result)
}

/// Random start: uniform amplitudes scaled into the power budget, uniform
/// angles.
pub fn random_start<R: Rng>(rng: &mut R) -> BeamParams {
    let mut a: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
    let s: f64 = a.iter().map(|v| v * v).sum();
    if s > 1.0 {
        a.iter_mut().for_each(|v| *v /= s.sqrt());
    }
    let angles: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * TAU);
    BeamParams::from_array([a[0], a[1], a[2], a[3], angles[0], angles[1], angles[2]])
}

/// Start `i` of a solve seeded with `seed`; identical for any `n_starts > i`.
pub fn start_point(seed: u64, i: usize) -> BeamParams {
    random_start(&mut stream(seed, &[i as u64]))
}

/// Best feasible result of `cfg.n_starts` local searches.
pub fn co_solve(
    proj: &BasisProjections,
    mods: ModulationSpec,
    n0_eff: f64,
    cfg: &CoConfig,
) -> Result<CoSolution> {
    cfg.validate()?;
    let ctx = ConstraintContext::new(mods);
    let results: Vec<Result<LocalResult>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|i| local_search(&start_point(cfg.seed, i), proj, mods, n0_eff, cfg))
        .collect();

    let mut trace = Vec::with_capacity(cfg.n_starts);
    let mut best: Option<LocalResult> = None;
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        let feasible = check_constraints(&r.params, proj, &ctx).valid();
        trace.push(StartTrace {
            start: i,
            psi: r.psi,
            feasible,
            converged: r.converged,
        });
        if feasible && best.is_none_or(|b| r.psi < b.psi) {
            best = Some(r);
        }
    }
    let best = best.ok_or(Error::NoFeasibleSolution(cfg.n_starts))?;
    Ok(CoSolution {
        params: best.params,
        psi_value: best.psi,
        trace,
    })
}
