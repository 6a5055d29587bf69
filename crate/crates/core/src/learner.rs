//! Split-head multilayer perceptron mapping channel features to beamforming
//! parameters.
//!
//! A shared rectifier trunk feeds two rectifier branches. Branch A ends in a
//! linear head of width 4 (amplitudes), branch B in a linear head of width 3
//! (angles). Training minimizes the sum of the two heads' mean absolute errors
//! with Nesterov-accelerated Adam.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamformer::{repair_params, BeamParams, ConstraintContext, RepairConfig};
use crate::channel::{BasisProjections, FeatureVector, DEFAULT_XI, FEATURE_DIM};
use crate::rng::stream;
use crate::{Error, Result};

pub const AMPLITUDE_WIDTH: usize = 4;
pub const ANGLE_WIDTH: usize = 3;
pub const OUTPUT_DIM: usize = AMPLITUDE_WIDTH + ANGLE_WIDTH;
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input: usize,
    /// Widths of the shared rectifier layers.
    pub trunk: Vec<usize>,
    /// Width of the rectifier layer in front of each head.
    pub branch: usize,
}

impl Default for MlpArch {
    fn default() -> Self {
        Self {
            input: FEATURE_DIM,
            trunk: vec![128, 64],
            branch: 32,
        }
    }
}

impl MlpArch {
    pub fn validate(&self) -> Result<()> {
        if self.input != FEATURE_DIM {
            return Err(Error::InvalidArchitecture(format!(
                "input width {} (expected {FEATURE_DIM})",
                self.input
            )));
        }
        if self.trunk.is_empty() || self.trunk.contains(&0) || self.branch == 0 {
            return Err(Error::InvalidArchitecture(format!("{self:?}")));
        }
        Ok(())
    }

    /// Layer shapes in storage order: trunk, branch A, head A, branch B, head B.
    fn shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        let mut offset = 0;
        let mut push = |inputs: usize, outputs: usize, activation: Activation| {
            shapes.push(LayerShape {
                inputs,
                outputs,
                activation,
                offset,
            });
            offset += inputs * outputs + outputs;
        };
        let mut prev = self.input;
        for &w in &self.trunk {
            push(prev, w, Activation::Relu);
            prev = w;
        }
        push(prev, self.branch, Activation::Relu);
        push(self.branch, AMPLITUDE_WIDTH, Activation::Identity);
        push(prev, self.branch, Activation::Relu);
        push(self.branch, ANGLE_WIDTH, Activation::Identity);
        shapes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    /// Start of this layer's row-major weights, followed by its biases.
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let w = &params[self.weights()];
        let b = &params[self.biases()];
        out.clear();
        out.extend(w.chunks_exact(self.inputs).zip(b).map(|(row, bias)| {
            let z = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias;
            match self.activation {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
            }
        }));
    }

    /// Accumulates parameter gradients and returns the input gradient, given
    /// the layer input, its output, and the gradient w.r.t. that output.
    fn backward(&self, params: &[f64], x: &[f64], y: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let w = &params[self.weights()];
        let mut dx = vec![0.0; self.inputs];
        let (gw, gb) = grad[self.offset..self.biases().end].split_at_mut(self.inputs * self.outputs);
        for o in 0..self.outputs {
            let dz = match self.activation {
                Activation::Relu if y[o] <= 0.0 => continue,
                _ => dy[o],
            };
            if dz == 0.0 {
                continue;
            }
            gb[o] += dz;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                gw[row + i] += dz * x[i];
                dx[i] += dz * w[row + i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: MlpArch,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
    /// Feature scaling the model was trained with.
    pub xi: f64,
    /// Digest of the training configuration, if trained.
    pub train_digest: Option<String>,
}

/// Activations of every layer for one sample.
struct Trace {
    /// `acts[0]` is the input; `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
}

impl MlpModel {
    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Layer widths and activations as `(inputs, outputs, activation)`.
    pub fn layers(&self) -> Vec<(usize, usize, Activation)> {
        self.shapes.iter().map(|s| (s.inputs, s.outputs, s.activation)).collect()
    }

    fn trunk_len(&self) -> usize {
        self.arch.trunk.len()
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let n = self.trunk_len();
        let mut acts = Vec::with_capacity(self.shapes.len() + 1);
        acts.push(x.to_vec());
        for (i, s) in self.shapes.iter().enumerate() {
            // both branches read the last trunk activation
            let input = if i == n + 2 { &acts[n] } else { &acts[i] };
            let mut out = Vec::with_capacity(s.outputs);
            s.forward(&self.params, input, &mut out);
            acts.push(out);
        }
        Trace { acts }
    }

    fn outputs(&self, t: &Trace) -> [f64; OUTPUT_DIM] {
        let n = self.trunk_len();
        let (a, b) = (&t.acts[n + 2], &t.acts[n + 4]);
        std::array::from_fn(|i| if i < AMPLITUDE_WIDTH { a[i] } else { b[i - AMPLITUDE_WIDTH] })
    }

    /// Raw network output: four amplitudes followed by three angles.
    pub fn forward(&self, features: &FeatureVector) -> Result<[f64; OUTPUT_DIM]> {
        if features.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature".into()));
        }
        Ok(self.outputs(&self.trace(&features.0)))
    }

    /// Adds the gradient of the sample's loss contribution, `Σ_head
    /// |err|/(width · batch)`, and returns that contribution.
    fn accumulate(&self, x: &[f64], target: &[f64; OUTPUT_DIM], batch: usize, grad: &mut [f64]) -> f64 {
        let t = self.trace(x);
        let out = self.outputs(&t);
        let mut loss = 0.0;
        let mut d_out = [0.0; OUTPUT_DIM];
        for i in 0..OUTPUT_DIM {
            let width = if i < AMPLITUDE_WIDTH { AMPLITUDE_WIDTH } else { ANGLE_WIDTH };
            let k = 1.0 / (width * batch) as f64;
            let e = out[i] - target[i];
            loss += e.abs() * k;
            d_out[i] = if e > 0.0 { k } else if e < 0.0 { -k } else { 0.0 };
        }

        let n = self.trunk_len();
        let s = &self.shapes;
        let a = &t.acts;
        let d_branch_a = s[n + 1].backward(&self.params, &a[n + 1], &a[n + 2], &d_out[..AMPLITUDE_WIDTH], grad);
        let d_trunk_a = s[n].backward(&self.params, &a[n], &a[n + 1], &d_branch_a, grad);
        let d_branch_b = s[n + 3].backward(&self.params, &a[n + 3], &a[n + 4], &d_out[AMPLITUDE_WIDTH..], grad);
        let d_trunk_b = s[n + 2].backward(&self.params, &a[n], &a[n + 3], &d_branch_b, grad);
        let mut d: Vec<f64> = d_trunk_a.iter().zip(&d_trunk_b).map(|(p, q)| p + q).collect();
        for i in (0..n).rev() {
            d = s[i].backward(&self.params, &a[i], &a[i + 1], &d, grad);
        }
        loss
    }

    /// Summed per-head MAE over a set of samples.
    pub fn loss(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return f64::NAN;
        }
        let mut scratch = vec![0.0; self.params.len()];
        samples
            .iter()
            .map(|s| self.accumulate(&s.features.0, &s.target, samples.len(), &mut scratch))
            .sum()
    }

    /// Gradient of [`MlpModel::loss`] with respect to all parameters.
    pub fn loss_gradient(&self, samples: &[Sample]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        for s in samples {
            self.accumulate(&s.features.0, &s.target, samples.len(), &mut grad);
        }
        grad
    }

    /// Copy with one parameter replaced (finite-difference checks).
    pub fn with_parameter(&self, index: usize, value: f64) -> Self {
        let mut m = self.clone();
        m.params[index] = value;
        m
    }

    pub fn to_json(&self) -> Result<String> {
        let layers = self
            .shapes
            .iter()
            .map(|s| LayerFile {
                inputs: s.inputs,
                outputs: s.outputs,
                activation: s.activation,
                weights: self.params[s.weights()].to_vec(),
                biases: self.params[s.biases()].to_vec(),
            })
            .collect();
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            arch: self.arch.clone(),
            xi: self.xi,
            train_digest: self.train_digest.clone(),
            layers,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "model format version {}",
                file.format_version
            )));
        }
        let mut model = mlp_zeros(&file.arch)?;
        if file.layers.len() != model.shapes.len() {
            return Err(Error::InvalidArchitecture("layer count mismatch".into()));
        }
        for (s, l) in model.shapes.iter().zip(&file.layers) {
            if (l.inputs, l.outputs, l.activation) != (s.inputs, s.outputs, s.activation)
                || l.weights.len() != s.inputs * s.outputs
                || l.biases.len() != s.outputs
            {
                return Err(Error::InvalidArchitecture("layer shape mismatch".into()));
            }
            model.params[s.weights()].copy_from_slice(&l.weights);
            model.params[s.biases()].copy_from_slice(&l.biases);
        }
        if model.params.iter().any(|v| !v.is_finite()) || !(file.xi > 0.0) {
            return Err(Error::InvalidInput("non-finite model parameters".into()));
        }
        model.xi = file.xi;
        model.train_digest = file.train_digest;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    arch: MlpArch,
    xi: f64,
    train_digest: Option<String>,
    layers: Vec<LayerFile>,
}

/// All-zero model of the given architecture.
pub fn mlp_zeros(arch: &MlpArch) -> Result<MlpModel> {
    arch.validate()?;
    let shapes = arch.shapes();
    let len = shapes.last().map_or(0, |s| s.biases().end);
    Ok(MlpModel {
        arch: arch.clone(),
        shapes,
        params: vec![0.0; len],
        xi: DEFAULT_XI,
        train_digest: None,
    })
}

/// Fan-in scaled uniform initialization with zero biases: `±√(6/fan_in)` for
/// rectifier layers and `±√(3/fan_in)` for the linear heads.
pub fn mlp_init(arch: &MlpArch, seed: u64) -> Result<MlpModel> {
    let mut model = mlp_zeros(arch)?;
    let mut rng = stream(seed, &[0x1417]);
    for s in &model.shapes {
        let gain = match s.activation {
            Activation::Relu => 6.0,
            Activation::Identity => 3.0,
        };
        let limit = (gain / s.inputs as f64).sqrt();
        for w in &mut model.params[s.weights()] {
            *w = rng.random_range(-limit..limit);
        }
    }
    Ok(model)
}

/// One training pair: features and the seven target parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub target: [f64; OUTPUT_DIM],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best monitored loss before stopping.
    pub patience: usize,
    /// Epochs without a new best before the learning rate is multiplied by
    /// `lr_decay`.
    pub lr_patience: usize,
    pub lr_decay: f64,
    pub min_learning_rate: f64,
    /// Share of samples held out for validation; with none held out the
    /// training loss is monitored instead.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            lr_patience: 5,
            lr_decay: 0.5,
            min_learning_rate: 1e-6,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
            || self.lr_patience == 0
            || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0)
            || !(self.min_learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.validation_fraction)
        {
            return Err(Error::InvalidInput(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub epochs_run: usize,
}

/// Nesterov-accelerated Adam with a warming momentum schedule.
struct Nadam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    m_schedule: f64,
}

impl Nadam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-7;
    const SCHEDULE_DECAY: f64 = 0.004;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            m_schedule: 1.0,
        }
    }

    fn momentum(t: u64) -> f64 {
        Self::BETA1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * Self::SCHEDULE_DECAY))
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let mu_t = Self::momentum(self.t);
        let mu_next = Self::momentum(self.t + 1);
        self.m_schedule *= mu_t;
        let schedule_next = self.m_schedule * mu_next;
        let bias2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let m_hat = mu_next * *m / (1.0 - schedule_next) + (1.0 - mu_t) * g / (1.0 - self.m_schedule);
            let v_hat = *v / bias2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Trains `model` in place and keeps the weights of the best monitored epoch.
///
/// The learning rate is reduced when the monitored loss stalls; training stops
/// after `patience` epochs without improvement.
pub fn mlp_train(model: &mut MlpModel, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if samples
        .iter()
        .any(|s| s.features.0.iter().chain(&s.target).any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidInput("non-finite training sample".into()));
    }
    let mut rng = stream(cfg.seed, &[0x7a1]);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(samples.len() - 1);
    let (train_idx, val_idx) = order.split_at(samples.len() - n_val);
    let train: Vec<Sample> = train_idx.iter().map(|&i| samples[i]).collect();
    let val: Vec<Sample> = val_idx.iter().map(|&i| samples[i]).collect();

    let mut opt = Nadam::new(model.params.len(), cfg.learning_rate);
    let mut report = TrainReport {
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        best_epoch: 0,
        best_loss: f64::INFINITY,
        epochs_run: 0,
    };
    let mut best_params = model.params.clone();
    let mut epoch_order: Vec<usize> = (0..train.len()).collect();
    let mut batch: Vec<Sample> = Vec::with_capacity(cfg.batch_size);
    let mut last_change = 0;
    for epoch in 1..=cfg.max_epochs {
        epoch_order.shuffle(&mut rng);
        for chunk in epoch_order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train[i]));
            let grad = model.loss_gradient(&batch);
            opt.step(&mut model.params, &grad);
        }
        let train_loss = model.loss(&train);
        report.train_loss.push(train_loss);
        let monitored = if val.is_empty() {
            train_loss
        } else {
            let l = model.loss(&val);
            report.validation_loss.push(l);
            l
        };
        report.epochs_run = epoch;
        if monitored < report.best_loss {
            report.best_loss = monitored;
            report.best_epoch = epoch;
            best_params.copy_from_slice(&model.params);
            last_change = epoch;
        } else if epoch - report.best_epoch >= cfg.patience {
            break;
        } else if epoch - report.best_epoch.max(last_change) >= cfg.lr_patience {
            opt.lr = (opt.lr * cfg.lr_decay).max(cfg.min_learning_rate);
            last_change = epoch;
        }
    }
    model.params = best_params;
    model.train_digest = Some(cfg.digest());
    Ok(report)
}

/// Forward pass followed by repair; the result is always feasible.
pub fn predict_params(
    model: &MlpModel,
    features: &FeatureVector,
    proj: &BasisProjections,
    ctx: &ConstraintContext,
    repair: &RepairConfig,
) -> Result<BeamParams> {
    let raw = model.forward(features)?;
    repair_params(&BeamParams::from_array(raw), proj, ctx, repair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamformer::check_constraints;
    use crate::ber::ModulationSpec;
    use crate::channel::{analyze, extract_features, sample_scenario, Geometry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> MlpArch {
        MlpArch {
            input: FEATURE_DIM,
            trunk: vec![6, 5],
            branch: 4,
        }
    }

    fn random_samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Sample {
                features: FeatureVector(std::array::from_fn(|_| rng.random_range(-1.0..2.0))),
                target: std::array::from_fn(|i| {
                    if i < 4 { rng.random::<f64>() } else { rng.random::<f64>() * 6.0 }
                }),
            })
            .collect()
    }

    #[test]
    fn default_architecture_structure() {
        let m = mlp_init(&MlpArch::default(), 1).unwrap();
        let layers = m.layers();
        assert_eq!(layers.len(), 6);
        let relu = layers.iter().filter(|l| l.2 == Activation::Relu).count();
        assert_eq!(relu, 4);
        assert_eq!(layers[3], (32, 4, Activation::Identity));
        assert_eq!(layers[5], (32, 3, Activation::Identity));
        assert_eq!(layers[0].0, 7);
        assert!(mlp_init(&MlpArch { input: 5, ..MlpArch::default() }, 1).is_err());
        assert!(mlp_init(&MlpArch { trunk: vec![], ..MlpArch::default() }, 1).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = mlp_init(&MlpArch::default(), 1).unwrap();
        let b = mlp_init(&MlpArch::default(), 1).unwrap();
        let c = mlp_init(&MlpArch::default(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = mlp_zeros(&MlpArch::default()).unwrap();
        assert_eq!(m.forward(&FeatureVector([1.0; 7])).unwrap(), [0.0; 7]);
        let bad = FeatureVector([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(m.forward(&bad).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let model = mlp_init(&tiny_arch(), seed).unwrap();
            let samples = random_samples(8, seed + 100);
            let grad = model.loss_gradient(&samples);
            let h = 1e-6;
            let mut checked = 0;
            for i in 0..model.parameter_count() {
                let p = model.parameters()[i];
                let lp = model.with_parameter(i, p + h).loss(&samples);
                let lm = model.with_parameter(i, p - h).loss(&samples);
                let lc = model.loss(&samples);
                // skip parameters whose stencil straddles a kink
                let curvature = (lp - 2.0 * lc + lm).abs();
                if curvature > 1e-12 {
                    continue;
                }
                let fd = (lp - lm) / (2.0 * h);
                let scale = fd.abs().max(grad[i].abs()).max(1e-3);
                assert!((fd - grad[i]).abs() / scale < 1e-6, "param {i}: {fd} vs {}", grad[i]);
                checked += 1;
            }
            assert!(checked > model.parameter_count() * 9 / 10);
        }
    }

    #[test]
    fn overfits_small_dataset() {
        let samples = random_samples(10, 7);
        let mut model = mlp_init(&MlpArch::default(), 3).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2000,
            patience: 2000,
            lr_patience: 20,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let report = mlp_train(&mut model, &samples, &cfg).unwrap();
        assert!(model.loss(&samples) < 1e-3, "{}", report.best_loss);
    }

    #[test]
    fn training_is_deterministic_and_checkpointed() {
        let samples = random_samples(100, 8);
        let cfg = TrainConfig {
            max_epochs: 30,
            patience: 5,
            ..TrainConfig::default()
        };
        let mut a = mlp_init(&MlpArch::default(), 4).unwrap();
        let mut b = mlp_init(&MlpArch::default(), 4).unwrap();
        let ra = mlp_train(&mut a, &samples, &cfg).unwrap();
        let rb = mlp_train(&mut b, &samples, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let best = ra.validation_loss[ra.best_epoch - 1];
        assert!(ra.validation_loss.iter().all(|l| *l >= best));
        assert!(mlp_train(&mut a, &[], &cfg).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let samples = random_samples(20, 9);
        let mut m = mlp_init(&MlpArch::default(), 5).unwrap();
        let cfg = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
        mlp_train(&mut m, &samples, &cfg).unwrap();
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for s in &samples {
            assert_eq!(back.forward(&s.features).unwrap(), m.forward(&s.features).unwrap());
        }
        let tampered = m.to_json().unwrap().replace("\"format_version\":1", "\"format_version\":9");
        assert!(MlpModel::from_json(&tampered).is_err());
    }

    #[test]
    fn adversarial_model_output_is_repaired() {
        let mut m = mlp_zeros(&MlpArch::default()).unwrap();
        // push every amplitude output negative through the head biases
        let head_a = m.shapes[m.trunk_len() + 1];
        m.params[head_a.biases()].fill(-3.0);
        let ctx = ConstraintContext::new(ModulationSpec::qpsk());
        for seed in 0..200 {
            let s = sample_scenario(2 + seed as usize % 4, &Geometry::default(), seed).unwrap();
            let (_, proj) = analyze(&s).unwrap();
            let f = extract_features(&proj, DEFAULT_XI);
            let p = predict_params(&m, &f, &proj, &ctx, &RepairConfig::default()).unwrap();
            assert!(check_constraints(&p, &proj, &ctx).valid());
        }
    }
}
