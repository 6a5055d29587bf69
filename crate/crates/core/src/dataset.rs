//! Scenario datasets: generation, labeling, JSONL persistence and k-means
//! feature quantization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamformer::{canonicalize, check_constraints, BeamParams, ConstraintContext};
use crate::ber::{BerEvaluator, ModulationSpec};
use crate::channel::{
    analyze, extract_features, sample_scenario, BasisProjections, FeatureVector, Geometry,
    Scenario, DEFAULT_XI, FEATURE_DIM,
};
use crate::learner::Sample;
use crate::optimizer::{co_solve, CoConfig};
use crate::rng::{derive_seed, stream};
use crate::{Complex64, Error, Result};

pub const RECORD_VERSION: u32 = 1;

/// One scenario, optionally labeled with its optimized parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub nt: usize,
    pub seed: u64,
    pub h1_re: Vec<f64>,
    pub h1_im: Vec<f64>,
    pub h2_re: Vec<f64>,
    pub h2_im: Vec<f64>,
    pub d1_m: f64,
    pub d2_m: f64,
    pub features: [f64; FEATURE_DIM],
    pub label: Option<BeamParams>,
    pub psi_co: Option<f64>,
    pub version: u32,
}

impl DatasetRecord {
    pub fn from_scenario(s: &Scenario, xi: f64) -> Result<Self> {
        let (_, proj) = analyze(s)?;
        Ok(Self {
            nt: s.nt,
            seed: s.seed,
            h1_re: s.h1.iter().map(|z| z.re).collect(),
            h1_im: s.h1.iter().map(|z| z.im).collect(),
            h2_re: s.h2.iter().map(|z| z.re).collect(),
            h2_im: s.h2.iter().map(|z| z.im).collect(),
            d1_m: s.d1_m,
            d2_m: s.d2_m,
            features: extract_features(&proj, xi).0,
            label: None,
            psi_co: None,
            version: RECORD_VERSION,
        })
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let join = |re: &[f64], im: &[f64]| -> Result<Vec<Complex64>> {
            if re.len() != self.nt || im.len() != self.nt {
                return Err(Error::InvalidInput(format!("record {}: channel length", self.seed)));
            }
            Ok(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())
        };
        Scenario::from_channels(
            join(&self.h1_re, &self.h1_im)?,
            join(&self.h2_re, &self.h2_im)?,
            self.d1_m,
            self.d2_m,
            self.seed,
        )
    }

    pub fn projections(&self) -> Result<BasisProjections> {
        Ok(analyze(&self.scenario()?)?.1)
    }

    pub fn feature_vector(&self) -> FeatureVector {
        FeatureVector(self.features)
    }

    /// Training pair, if labeled.
    pub fn sample(&self) -> Option<Sample> {
        self.label.map(|l| Sample {
            features: self.feature_vector(),
            target: l.to_array(),
        })
    }
}

/// Unlabeled records for every `(nt, index)`, each with its own derived seed.
pub fn generate_dataset(
    nt_list: &[usize],
    count_per_nt: usize,
    geometry: &Geometry,
    seed: u64,
) -> Result<Vec<DatasetRecord>> {
    if nt_list.is_empty() || count_per_nt == 0 {
        return Err(Error::InvalidInput("empty antenna list or zero count".into()));
    }
    let jobs: Vec<(usize, u64)> = nt_list
        .iter()
        .flat_map(|&nt| (0..count_per_nt as u64).map(move |i| (nt, i)))
        .collect();
    jobs.par_iter()
        .map(|&(nt, i)| {
            let s = sample_scenario(nt, geometry, derive_seed(seed, &[nt as u64, i]))?;
            DatasetRecord::from_scenario(&s, DEFAULT_XI)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabelReport {
    pub labeled: usize,
    /// Records that already carried a label.
    pub skipped: usize,
    /// `(record index, error)` of records left unlabeled.
    pub failures: Vec<(usize, String)>,
}

/// Representative with the same Ψ and constraint values, falling back to the
/// raw parameters if canonicalization lands on a constraint boundary.
fn canonical_label(
    raw: &BeamParams,
    proj: &BasisProjections,
    ctx: &ConstraintContext,
) -> BeamParams {
    let c = canonicalize(raw, proj);
    if check_constraints(&c, proj, ctx).valid() {
        c
    } else {
        *raw
    }
}

fn label_one(
    record: &DatasetRecord,
    eval: &BerEvaluator,
    n0_eff: f64,
    cfg: &CoConfig,
) -> Result<(BeamParams, f64)> {
    let proj = record.projections()?;
    let mods = eval.modulation();
    let solve_cfg = CoConfig {
        seed: derive_seed(cfg.seed, &[record.seed]),
        ..cfg.clone()
    };
    let sol = co_solve(&proj, mods, n0_eff, &solve_cfg)?;
    let label = canonical_label(&sol.params, &proj, &ConstraintContext::new(mods));
    let psi = eval.pair(&label, &proj, n0_eff)?.psi;
    Ok((label, psi))
}

/// Labels every unlabeled record with the multi-start optimizer. Failures are
/// reported and leave the record unlabeled.
pub fn label_dataset(
    records: &mut [DatasetRecord],
    mods: ModulationSpec,
    n0_eff: f64,
    cfg: &CoConfig,
) -> Result<LabelReport> {
    cfg.validate()?;
    let eval = BerEvaluator::new(mods);
    let outcomes: Vec<Option<Result<(BeamParams, f64)>>> = records
        .par_iter()
        .map(|r| r.label.is_none().then(|| label_one(r, &eval, n0_eff, cfg)))
        .collect();
    let mut report = LabelReport::default();
    for (i, (record, outcome)) in records.iter_mut().zip(outcomes).enumerate() {
        match outcome {
            None => report.skipped += 1,
            Some(Ok((label, psi))) => {
                record.label = Some(label);
                record.psi_co = Some(psi);
                report.labeled += 1;
            }
            Some(Err(e)) => report.failures.push((i, e.to_string())),
        }
    }
    Ok(report)
}

pub fn write_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)?;
        if record.version != RECORD_VERSION {
            return Err(Error::InvalidInput(format!("record version {}", record.version)));
        }
        out.push(record);
    }
    Ok(out)
}

/// Centroids of a k-means quantizer over feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub k: usize,
    pub centroids: Vec<[f64; FEATURE_DIM]>,
    /// Mean squared distance of the fitted data to its nearest centroid.
    pub distortion: f64,
    /// Distortion after each Lloyd iteration.
    pub history: Vec<f64>,
}

fn dist2(a: &[f64; FEATURE_DIM], b: &[f64; FEATURE_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest
/// index.
fn nearest(x: &[f64; FEATURE_DIM], centroids: &[[f64; FEATURE_DIM]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_seeding<R: Rng>(data: &[[f64; FEATURE_DIM]], k: usize, rng: &mut R) -> Vec<[f64; FEATURE_DIM]> {
    let mut centroids = vec![data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|x| dist2(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = data.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            // guard the rounding tail: never re-pick a covered point
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|d| *d > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[pick];
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(dist2(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeding. An empty cluster is moved onto
/// the point farthest from its current centroid.
pub fn kmeans_fit(
    data: &[[f64; FEATURE_DIM]],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Codebook> {
    if k == 0 || k > data.len() {
        return Err(Error::TooManyClusters { k, n: data.len() });
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature".into()));
    }
    let mut rng = stream(seed, &[0x6b6d]);
    let mut centroids = plus_plus_seeding(data, k, &mut rng);
    let mut assign: Vec<(usize, f64)> = data.par_iter().map(|x| nearest(x, &centroids)).collect();
    let mut history = Vec::new();
    for _ in 0..max_iters {
        let mut sums = vec![[0.0; FEATURE_DIM]; k];
        let mut counts = vec![0usize; k];
        for (x, &(c, _)) in data.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = assign
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                    .expect("data is non-empty");
                centroids[c] = data[far];
                assign[far] = (c, 0.0);
            }
        }
        let next: Vec<(usize, f64)> = data.par_iter().map(|x| nearest(x, &centroids)).collect();
        let changed = next.iter().zip(&assign).any(|(a, b)| a.0 != b.0);
        assign = next;
        history.push(assign.iter().map(|a| a.1).sum::<f64>() / data.len() as f64);
        if !changed {
            break;
        }
    }
    let distortion = assign.iter().map(|a| a.1).sum::<f64>() / data.len() as f64;
    Ok(Codebook {
        k,
        centroids,
        distortion,
        history,
    })
}

/// The codebook centroid nearest to `features`.
pub fn quantize_features(features: &FeatureVector, codebook: &Codebook) -> FeatureVector {
    FeatureVector(codebook.centroids[nearest(&features.0, &codebook.centroids).0])
}
