//! Technique comparison, ECDF reporting, timing and the analytic-versus-
//! simulation validation suite.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::beamformer::{
    aligned_tau1, assemble_beamformers, check_constraints, decision_gains, mrt_vector,
    params_from_vectors, zf_vector, zfbf_pair, BeamPair, ConstraintContext, PowerSplit,
    RepairConfig,
};
use crate::ber::{BerEvaluator, ModulationSpec};
use crate::channel::{analyze, extract_features, sample_scenario, Geometry, LinkBudget, Scenario};
use crate::dataset::DatasetRecord;
use crate::learner::{predict_params, MlpModel};
use crate::linksim::{simulate_ber_pair, standard_error};
use crate::optimizer::{co_solve, random_start, CoConfig};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
pub enum Technique {
    #[serde(rename = "NN")]
    Nn,
    #[serde(rename = "CO")]
    Co,
    #[serde(rename = "ZFBF")]
    Zfbf,
    #[serde(rename = "MRT")]
    Mrt,
    #[serde(rename = "MRT1_ZFBF2")]
    Mrt1Zfbf2,
    #[serde(rename = "ZFBF1_MRT2")]
    Zfbf1Mrt2,
}

impl Technique {
    pub const ALL: [Technique; 6] = [
        Technique::Nn,
        Technique::Co,
        Technique::Zfbf,
        Technique::Mrt,
        Technique::Mrt1Zfbf2,
        Technique::Zfbf1Mrt2,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Technique::Nn => "NN",
            Technique::Co => "CO",
            Technique::Zfbf => "ZFBF",
            Technique::Mrt => "MRT",
            Technique::Mrt1Zfbf2 => "MRT1_ZFBF2",
            Technique::Zfbf1Mrt2 => "ZFBF1_MRT2",
        }
    }

    /// Techniques with an MRT component have no closed-form BER.
    pub fn uses_mrt(self) -> bool {
        matches!(self, Technique::Mrt | Technique::Mrt1Zfbf2 | Technique::Zfbf1Mrt2)
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Technique::ALL
            .into_iter()
            .find(|t| t.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown technique {s:?}")))
    }
}

impl Serialize for Technique {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub technique: Technique,
    pub nt: usize,
    pub scenario_id: u64,
    pub psi: f64,
    pub mode: EvalMode,
    pub mc_symbols: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub m1: u32,
    pub m2: u32,
    pub budget: LinkBudget,
    pub split: PowerSplit,
    pub mc_symbols: u64,
    pub co: CoConfig,
    pub repair: RepairConfig,
    /// Reuse stored labels for CO instead of re-solving.
    pub reuse_labels: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            m1: 4,
            m2: 4,
            budget: LinkBudget::default(),
            split: PowerSplit::default(),
            mc_symbols: 1_000_000,
            co: CoConfig::default(),
            repair: RepairConfig::default(),
            reuse_labels: true,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn modulation(&self) -> Result<ModulationSpec> {
        ModulationSpec::new(self.m1, self.m2)
    }
}

/// Benchmark beamformer pair of a technique without a parameterization.
pub fn benchmark_pair(t: Technique, s: &Scenario, split: PowerSplit) -> Result<BeamPair> {
    let (p1, p2) = (split.first, split.second);
    Ok(match t {
        Technique::Zfbf => zfbf_pair(&s.h1, &s.h2, split)?,
        Technique::Mrt => BeamPair {
            w1: mrt_vector(&s.h1, p1)?,
            w2: mrt_vector(&s.h2, p2)?,
        },
        Technique::Mrt1Zfbf2 => BeamPair {
            w1: mrt_vector(&s.h1, p1)?,
            w2: zf_vector(&s.h2, &s.h1, p2)?,
        },
        Technique::Zfbf1Mrt2 => BeamPair {
            w1: zf_vector(&s.h1, &s.h2, p1)?,
            w2: mrt_vector(&s.h2, p2)?,
        },
        Technique::Nn | Technique::Co => {
            return Err(Error::InvalidInput(format!("{t} is not a fixed benchmark")))
        }
    })
}

struct Evaluator<'a> {
    cfg: &'a EvalConfig,
    model: Option<&'a MlpModel>,
    mods: ModulationSpec,
    ber: BerEvaluator,
    ctx: ConstraintContext,
    n0: f64,
}

impl Evaluator<'_> {
    fn monte_carlo(&self, t: Technique, pair: &BeamPair, s: &Scenario) -> Result<(f64, EvalMode, Option<u64>)> {
        let seed = derive_seed(self.cfg.seed, &[s.seed, t as u64]);
        let r = simulate_ber_pair(pair, s, self.mods, self.n0, self.cfg.mc_symbols, seed)?;
        Ok((r.psi(), EvalMode::MonteCarlo, Some(self.cfg.mc_symbols)))
    }

    fn row(&self, t: Technique, record: &DatasetRecord) -> Result<EvalRow> {
        let s = record.scenario()?;
        let (basis, proj) = analyze(&s)?;
        let (psi, mode, mc_symbols) = match t {
            Technique::Nn => {
                let model = self.model.ok_or(Error::MissingModel)?;
                let f = extract_features(&proj, model.xi);
                let p = predict_params(model, &f, &proj, &self.ctx, &self.cfg.repair)?;
                (self.ber.pair(&p, &proj, self.n0)?.psi, EvalMode::Analytic, None)
            }
            Technique::Co => {
                let psi = match (self.cfg.reuse_labels, record.psi_co) {
                    (true, Some(psi)) => psi,
                    _ => {
                        let co = CoConfig {
                            seed: derive_seed(self.cfg.co.seed, &[record.seed]),
                            ..self.cfg.co.clone()
                        };
                        co_solve(&proj, self.mods, self.n0, &co)?.psi_value
                    }
                };
                (psi, EvalMode::Analytic, None)
            }
            _ => {
                let pair = benchmark_pair(t, &s, self.cfg.split)?;
                if t.uses_mrt() {
                    self.monte_carlo(t, &pair, &s)?
                } else if params_from_vectors(&pair.w1, &pair.w2, &basis, &proj)?.aligned {
                    let g = decision_gains(&pair, &s);
                    (self.ber.pair_gains(&g, self.n0)?.psi, EvalMode::Analytic, None)
                } else {
                    self.monte_carlo(t, &pair, &s)?
                }
            }
        };
        assert!(
            !(t.uses_mrt() && mode == EvalMode::Analytic),
            "{t} must not be evaluated analytically"
        );
        Ok(EvalRow {
            technique: t,
            nt: s.nt,
            scenario_id: record.seed,
            psi,
            mode,
            mc_symbols,
        })
    }
}

/// Ψ of every technique on every record, ordered by record then technique.
pub fn run_eval(
    records: &[DatasetRecord],
    model: Option<&MlpModel>,
    techniques: &[Technique],
    cfg: &EvalConfig,
) -> Result<Vec<EvalRow>> {
    if techniques.contains(&Technique::Nn) && model.is_none() {
        return Err(Error::MissingModel);
    }
    cfg.budget.validate()?;
    let mods = cfg.modulation()?;
    let ev = Evaluator {
        cfg,
        model,
        mods,
        ber: BerEvaluator::new(mods),
        ctx: ConstraintContext::new(mods),
        n0: cfg.budget.effective_noise_watt(),
    };
    let jobs: Vec<(usize, Technique)> = (0..records.len())
        .flat_map(|i| techniques.iter().map(move |&t| (i, t)))
        .collect();
    jobs.par_iter().map(|&(i, t)| ev.row(t, &records[i])).collect()
}

/// Ψ values of one technique, optionally restricted to one antenna count.
pub fn psi_values(rows: &[EvalRow], t: Technique, nt: Option<usize>) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.technique == t && nt.is_none_or(|n| r.nt == n))
        .map(|r| r.psi)
        .collect()
}

/// Smallest value whose empirical CDF reaches `q`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64) - 1e-9).ceil().max(1.0) as usize - 1;
    Some(v[idx.min(v.len() - 1)])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EcdfRow {
    pub technique: Technique,
    /// Antenna count, or `all` for the merged distribution.
    pub nt: String,
    pub psi_sorted: f64,
    pub cumulative_fraction: f64,
}

fn ecdf_group(t: Technique, nt: String, mut psi: Vec<f64>, out: &mut Vec<EcdfRow>) {
    psi.sort_by(f64::total_cmp);
    let n = psi.len() as f64;
    out.extend(psi.into_iter().enumerate().map(|(i, p)| EcdfRow {
        technique: t,
        nt: nt.clone(),
        psi_sorted: p,
        cumulative_fraction: (i + 1) as f64 / n,
    }));
}

/// Exact empirical CDFs per technique: one per antenna count, then merged.
pub fn emit_ecdf(rows: &[EvalRow]) -> Result<Vec<EcdfRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut techniques: Vec<Technique> = rows.iter().map(|r| r.technique).collect();
    techniques.sort();
    techniques.dedup();
    let mut nts: Vec<usize> = rows.iter().map(|r| r.nt).collect();
    nts.sort();
    nts.dedup();
    let mut out = Vec::new();
    for t in techniques {
        for &nt in &nts {
            let psi = psi_values(rows, t, Some(nt));
            if !psi.is_empty() {
                ecdf_group(t, nt.to_string(), psi, &mut out);
            }
        }
        ecdf_group(t, "all".into(), psi_values(rows, t, None), &mut out);
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    #[derive(Deserialize)]
    struct Raw {
        technique: String,
        nt: usize,
        scenario_id: u64,
        psi: f64,
        mode: EvalMode,
        mc_symbols: Option<u64>,
    }
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<Raw>()
        .map(|r| {
            let r = r?;
            Ok(EvalRow {
                technique: r.technique.parse()?,
                nt: r.nt,
                scenario_id: r.scenario_id,
                psi: r.psi,
                mode: r.mode,
                mc_symbols: r.mc_symbols,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub technique: Technique,
    pub nt: usize,
    pub mean_seconds: f64,
    pub instances: usize,
}

/// Mean wall time per instance for NN inference and the full multi-start CO
/// solve, per antenna count, measured on a single thread.
///
/// NN time covers feature extraction, the forward pass and repair; both
/// include building the basis from the raw channels.
pub fn run_timing(
    records: &[DatasetRecord],
    model: &MlpModel,
    cfg: &EvalConfig,
) -> Result<Vec<TimingRow>> {
    let mods = cfg.modulation()?;
    let ctx = ConstraintContext::new(mods);
    let n0 = cfg.budget.effective_noise_watt();
    let scenarios: Vec<Scenario> = records.iter().map(|r| r.scenario()).collect::<Result<_>>()?;
    let mut nts: Vec<usize> = scenarios.iter().map(|s| s.nt).collect();
    nts.sort();
    nts.dedup();

    let nn = |s: &Scenario| -> Result<f64> {
        let (_, proj) = analyze(s)?;
        let f = extract_features(&proj, model.xi);
        Ok(predict_params(model, &f, &proj, &ctx, &cfg.repair)?.rho1)
    };
    let co = |s: &Scenario| -> Result<f64> {
        let (_, proj) = analyze(s)?;
        let c = CoConfig {
            seed: derive_seed(cfg.co.seed, &[s.seed]),
            ..cfg.co.clone()
        };
        Ok(co_solve(&proj, mods, n0, &c)?.psi_value)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    pool.install(|| {
        let mut rows = Vec::new();
        for (t, f) in [(Technique::Nn, &nn as &dyn Fn(&Scenario) -> Result<f64>), (Technique::Co, &co)] {
            for &nt in &nts {
                let group: Vec<&Scenario> = scenarios.iter().filter(|s| s.nt == nt).collect();
                std::hint::black_box(f(group[0])?);
                let start = Instant::now();
                for s in &group {
                    std::hint::black_box(f(s)?);
                }
                rows.push(TimingRow {
                    technique: t,
                    nt,
                    mean_seconds: start.elapsed().as_secs_f64() / group.len() as f64,
                    instances: group.len(),
                });
            }
        }
        Ok(rows)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCase {
    pub scenario_seed: u64,
    pub nt: usize,
    pub analytic1: f64,
    pub analytic2: f64,
    pub simulated1: f64,
    pub simulated2: f64,
    /// `|simulated − analytic|` in binomial standard errors.
    pub z1: f64,
    pub z2: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub symbols: u64,
    pub max_z: f64,
    pub cases: Vec<ValidationCase>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }
}

/// Random feasible instance with U1's symbol phase-aligned at U2 and both
/// analytic BERs at least `min_ber`.
fn validation_instance(
    index: u64,
    mods: ModulationSpec,
    n0: f64,
    min_ber: f64,
    seed: u64,
) -> Result<(Scenario, BeamPair, [f64; 2])> {
    let ber = BerEvaluator::new(mods);
    let ctx = ConstraintContext::new(mods);
    let mut rng = stream(seed, &[index]);
    for attempt in 0..100_000u64 {
        let nt = 2 + (attempt + index) as usize % 4;
        let s = sample_scenario(nt, &Geometry::default(), derive_seed(seed, &[index, attempt]))?;
        let (basis, proj) = analyze(&s)?;
        let mut p = random_start(&mut rng);
        p.tau1 = aligned_tau1(&p, &proj);
        if !check_constraints(&p, &proj, &ctx).valid() {
            continue;
        }
        let pair = assemble_beamformers(&p, &basis, &proj);
        let b = ber.pair_gains(&decision_gains(&pair, &s), n0)?;
        if b.pe1 >= min_ber && b.pe2 >= min_ber {
            return Ok((s, pair, [b.pe1, b.pe2]));
        }
    }
    Err(Error::Domain("no validation instance found".into()))
}

/// Compares closed-form BERs with simulation on `count` random instances;
/// a case passes when both users agree within `z_max` standard errors.
pub fn run_validation(
    count: usize,
    symbols: u64,
    mods: ModulationSpec,
    budget: &LinkBudget,
    z_max: f64,
    seed: u64,
) -> Result<ValidationReport> {
    let n0 = budget.effective_noise_watt();
    let cases = (0..count as u64)
        .map(|i| {
            let (s, pair, [a1, a2]) = validation_instance(i, mods, n0, 1e-3, seed)?;
            let r = simulate_ber_pair(&pair, &s, mods, n0, symbols, derive_seed(seed, &[i, 0x51]))?;
            let z1 = (r.ber1 - a1).abs() / standard_error(a1, r.bits_sent[0]);
            let z2 = (r.ber2 - a2).abs() / standard_error(a2, r.bits_sent[1]);
            Ok(ValidationCase {
                scenario_seed: s.seed,
                nt: s.nt,
                analytic1: a1,
                analytic2: a2,
                simulated1: r.ber1,
                simulated2: r.ber2,
                z1,
                z2,
                passed: z1 <= z_max && z2 <= z_max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_z = cases.iter().map(|c| c.z1.max(c.z2)).fold(0.0, f64::max);
    Ok(ValidationReport {
        symbols,
        max_z,
        cases,
    })
}
