//! Landmark label adaptation: a two-layer perceptron trained with Adam on
//! pairs of landmark vectors. Only landmark vectors enter the training
//! interface.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::GenerationConfig;
use crate::desk::ModelAssets;
use crate::error::{Error, Result};
use crate::face_model::posed_mesh;
use crate::raster::{project, Camera};
use crate::scene::assemble_scene;
use crate::seed::{rng_from_seed, sample_seed, stream};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => if z > 0.0 { z } else { slope * z },
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => if z > 0.0 { 1.0 } else { slope },
        }
    }
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

/// `y = W2 act(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perceptron {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub activation: Activation,
}

/// Parameter-shaped gradient (or moment) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Perceptron) -> Self {
        Self {
            w1: DMatrix::zeros(model.w1.nrows(), model.w1.ncols()),
            b1: DVector::zeros(model.b1.len()),
            w2: DMatrix::zeros(model.w2.nrows(), model.w2.ncols()),
            b2: DVector::zeros(model.b2.len()),
        }
    }

    fn slices(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), self.b1.as_mut_slice(), self.w2.as_mut_slice(), self.b2.as_mut_slice()]
    }
}

impl Perceptron {
    pub fn zeros(input: usize, hidden: usize, activation: Activation) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, input),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(input, hidden),
            b2: DVector::zeros(input),
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (input + hidden) as f64).sqrt();
        let mut m = Self::zeros(input, hidden, activation);
        for w in m.w1.iter_mut().chain(m.w2.iter_mut()) {
            *w = rng.random_range(-limit..=limit);
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        if self.b1.len() != h || self.w2.shape() != (d, h) || self.b2.len() != d {
            return Err(Error::param("perceptron parameter shapes are inconsistent"));
        }
        if self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).chain(self.b2.iter()).any(|x| !x.is_finite()) {
            return Err(Error::param("perceptron has non-finite parameters"));
        }
        Ok(())
    }

    fn as_gradients_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), self.b1.as_mut_slice(), self.w2.as_mut_slice(), self.b2.as_mut_slice()]
    }

    /// Column-per-sample batch forward pass returning hidden
    /// pre-activations and outputs.
    fn forward_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut z = &self.w1 * x;
        for mut col in z.column_iter_mut() {
            col += &self.b1;
        }
        let a = z.map(|v| self.activation.apply(v));
        let mut y = &self.w2 * a;
        for mut col in y.column_iter_mut() {
            col += &self.b2;
        }
        (z, y)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::param(format!("input has {} values, model expects {}", x.len(), self.input_dim())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("input must be finite"));
        }
        let (_, y) = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x));
        Ok(y.as_slice().to_vec())
    }

    /// Applies the model to many vectors at once.
    pub fn forward_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack(xs.iter().map(Vec::as_slice), self.input_dim())?;
        let (_, y) = self.forward_batch(&x);
        Ok(y.column_iter().map(|c| c.iter().copied().collect()).collect())
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != dim {
            return Err(Error::param(format!("vector has {} values, expected {dim}", r.len())));
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Ok(DMatrix::from_vec(dim, n, data))
}

/// Source/target landmark vectors in normalized image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPairSet {
    pub sources: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl LandmarkPairSet {
    pub fn new(sources: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        let set = Self { sources, targets };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.len() != self.targets.len() {
            return Err(Error::param("pair set has unequal source and target counts"));
        }
        let dim = self.dim();
        for v in self.sources.iter().chain(&self.targets) {
            if v.len() != dim {
                return Err(Error::param("pair vectors must share one length"));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::param("pair vectors must be finite"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sources.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sources: indices.iter().map(|&i| self.sources[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        set.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::write_atomic(path, serde_json::to_string(self).expect("pairs serialize").as_bytes())
    }
}

fn batch_matrices_of(dim: usize, batch: &LandmarkPairSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if batch.is_empty() {
        return Err(Error::param("empty batch"));
    }
    Ok((stack(batch.sources.iter().map(Vec::as_slice), dim)?, stack(batch.targets.iter().map(Vec::as_slice), dim)?))
}

fn matrix_loss(model: &Perceptron, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let (_, y) = model.forward_batch(x);
    (y - t).norm_squared() / (x.ncols() * x.nrows()) as f64
}

fn matrix_loss_and_gradients(model: &Perceptron, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, Gradients) {
    let (z, y) = model.forward_batch(x);
    let a = z.map(|v| model.activation.apply(v));
    let count = (x.ncols() * x.nrows()) as f64;
    let residual = y - t;
    let loss = residual.norm_squared() / count;
    let dy = residual * (2.0 / count);
    let w2 = &dy * a.transpose();
    let b2 = dy.column_sum();
    let mut dz = model.w2.transpose() * &dy;
    dz.zip_apply(&z, |g, zv| *g *= model.activation.derivative(zv));
    let w1 = &dz * x.transpose();
    let b1 = dz.column_sum();
    (loss, Gradients { w1, b1, w2, b2 })
}

/// Mean squared error over the batch without gradients.
pub fn loss(model: &Perceptron, batch: &LandmarkPairSet) -> Result<f64> {
    let (x, t) = batch_matrices_of(model.input_dim(), batch)?;
    Ok(matrix_loss(model, &x, &t))
}

/// MSE over batch and coordinates, with exact backpropagated gradients.
pub fn loss_and_gradients(model: &Perceptron, batch: &LandmarkPairSet) -> Result<(f64, Gradients)> {
    let (x, t) = batch_matrices_of(model.input_dim(), batch)?;
    Ok(matrix_loss_and_gradients(model, &x, &t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Gradients,
    pub second: Gradients,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(model: &Perceptron, hyper: AdamHyper) -> Self {
        Self { first: Gradients::zeros_like(model), second: Gradients::zeros_like(model), step: 0, hyper }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(state: &mut AdamState, model: &mut Perceptron, grads: &Gradients) -> Result<()> {
    if grads.w1.shape() != model.w1.shape() || grads.w2.shape() != model.w2.shape() || grads.b1.len() != model.b1.len() || grads.b2.len() != model.b2.len() {
        return Err(Error::param("gradient shapes do not match the model"));
    }
    state.step += 1;
    let AdamHyper { learning_rate, beta1, beta2, epsilon } = state.hyper;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let g = grads.slices();
    let m = state.first.slices_mut();
    let v = state.second.slices_mut();
    let p = model.as_gradients_mut();
    for (((g, m), v), p) in g.into_iter().zip(m).zip(v).zip(p) {
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Per-epoch learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LearningRateSchedule {
    #[default]
    Constant,
    /// Half cosine from the base rate at the first epoch towards zero.
    Cosine,
}

impl LearningRateSchedule {
    /// Multiplier for 1-based `epoch` of `epochs`.
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * (epoch - 1) as f64 / epochs as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub hidden: usize,
    pub activation: Activation,
    pub adam: AdamHyper,
    #[serde(default)]
    pub schedule: LearningRateSchedule,
    /// Optimize on whitened inputs and targets.
    #[serde(default)]
    pub whiten: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            hidden: 128,
            activation: Activation::default(),
            adam: AdamHyper::default(),
            schedule: LearningRateSchedule::Cosine,
            whiten: true,
            batch_size: 64,
            epochs: 200,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# epoch train_mse validation_mse\n");
        for e in &self.epochs {
            out.push_str(&format!("{} {:.9e} {:.9e}\n", e.epoch, e.train_loss, e.validation_loss));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAdapter {
    pub model: Perceptron,
    /// Validation loss of the returned parameters; epoch 0 is the initialization.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub log: TrainingLog,
    pub hyper: TrainHyper,
}

/// Deterministic train/validation split of `n` items.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "adapt/split"));
    let n_val = ((validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Eigenvalues below this fraction of the largest are raised to it before
/// whitening, so near-degenerate directions are not amplified into noise.
pub const WHITENING_FLOOR: f64 = 0.1;

/// Affine whitening `x -> P (x - mean)` fitted to the columns of a matrix,
/// with `P = Λ^{-1/2} Uᵀ` from the covariance eigendecomposition after
/// flooring `Λ` at [`WHITENING_FLOOR`] times its largest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    pub mean: DVector<f64>,
    pub transform: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

impl Whitening {
    pub fn identity(dim: usize) -> Self {
        Self { mean: DVector::zeros(dim), transform: DMatrix::identity(dim, dim), inverse: DMatrix::identity(dim, dim) }
    }

    /// Statistics of the columns of `data` (one vector per column).
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let dim = data.nrows();
        let mean = data.column_mean();
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let cov = &centered * centered.transpose() / data.ncols() as f64;
        let eig = cov.symmetric_eigen();
        let top = eig.eigenvalues.max();
        if !(top > 0.0) {
            return Self { mean, ..Self::identity(dim) };
        }
        let sd = eig.eigenvalues.map(|l| l.max(WHITENING_FLOOR * top).sqrt());
        let mut transform = eig.eigenvectors.transpose();
        for (i, mut row) in transform.row_iter_mut().enumerate() {
            row /= sd[i];
        }
        let mut inverse = eig.eigenvectors;
        for (j, mut col) in inverse.column_iter_mut().enumerate() {
            col *= sd[j];
        }
        Self { mean, transform, inverse }
    }

    pub fn apply(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        &self.transform * centered
    }
}

/// The model in original coordinates equivalent to `model` trained on
/// whitened inputs and targets. Both affine maps fold into the outer
/// layers, so the result keeps the plain perceptron form.
pub fn fold_whitening(model: &Perceptron, input: &Whitening, target: &Whitening) -> Perceptron {
    let w1 = &model.w1 * &input.transform;
    let b1 = &model.b1 - &w1 * &input.mean;
    let w2 = &target.inverse * &model.w2;
    let b2 = &target.inverse * &model.b2 + &target.mean;
    Perceptron { w1, b1, w2, b2, activation: model.activation }
}

/// Minibatch Adam training; returns the parameters with the lowest
/// validation loss seen (the initialization included). With `hyper.whiten`
/// the optimization runs on whitened coordinates (statistics from the
/// training split); every reported model and loss is in the original
/// coordinates.
pub fn train_adapter(pairs: &LandmarkPairSet, hyper: &TrainHyper) -> Result<TrainedAdapter> {
    pairs.validate()?;
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    if hyper.hidden == 0 || hyper.batch_size == 0 || !(0.0..1.0).contains(&hyper.validation_fraction) {
        return Err(Error::param("hidden width and batch size must be positive and validation fraction in [0, 1)"));
    }
    let (train_idx, val_idx) = split_indices(pairs.len(), hyper.validation_fraction, hyper.seed);
    let train = pairs.subset(&train_idx);
    let val = pairs.subset(&val_idx);
    let d = pairs.dim();
    let (train_x, train_t) = batch_matrices_of(d, &train)?;
    let (val_x, val_t) = batch_matrices_of(d, &val)?;
    let (input, target) = if hyper.whiten {
        (Whitening::fit(&train_x), Whitening::fit(&train_t))
    } else {
        (Whitening::identity(d), Whitening::identity(d))
    };
    let (scaled_x, scaled_t) = (input.apply(&train_x), target.apply(&train_t));

    let mut model = Perceptron::init(pairs.dim(), hyper.hidden, hyper.activation, &mut stream(hyper.seed, "adapt/init"));
    let mut best = fold_whitening(&model, &input, &target);
    let mut best_loss = matrix_loss(&best, &val_x, &val_t);
    let mut best_epoch = 0;
    let mut state = AdamState::new(&model, hyper.adam);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = stream(hyper.seed, "adapt/shuffle");
    for epoch in 1..=hyper.epochs {
        state.hyper.learning_rate = hyper.adam.learning_rate * hyper.schedule.factor(epoch, hyper.epochs);
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let (_, g) = matrix_loss_and_gradients(&model, &scaled_x.select_columns(chunk), &scaled_t.select_columns(chunk));
            adam_step(&mut state, &mut model, &g)?;
        }
        let current = fold_whitening(&model, &input, &target);
        let validation_loss = matrix_loss(&current, &val_x, &val_t);
        if !validation_loss.is_finite() {
            return Err(Error::param(format!("training diverged at epoch {epoch}")));
        }
        log.epochs.push(EpochLog { epoch, train_loss: matrix_loss(&current, &train_x, &train_t), validation_loss });
        if validation_loss < best_loss {
            best_loss = validation_loss;
            best = current;
            best_epoch = epoch;
        }
    }
    Ok(TrainedAdapter { model: best, best_epoch, best_validation_loss: best_loss, log, hyper: hyper.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    input_dim: usize,
    hidden: usize,
    activation: Activation,
    /// `w1` row-major, `b1`, `w2` row-major, `b2`.
    parameters: Vec<f64>,
    hyper: Option<TrainHyper>,
}

pub fn model_to_json(model: &Perceptron, hyper: Option<&TrainHyper>) -> String {
    let mut parameters = Vec::new();
    parameters.extend(model.w1.transpose().iter());
    parameters.extend(model.b1.iter());
    parameters.extend(model.w2.transpose().iter());
    parameters.extend(model.b2.iter());
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        input_dim: model.input_dim(),
        hidden: model.hidden_dim(),
        activation: model.activation,
        parameters,
        hyper: hyper.cloned(),
    };
    serde_json::to_string(&file).expect("model serializes")
}

pub fn model_from_json(text: &str, path: &Path) -> Result<(Perceptron, Option<TrainHyper>)> {
    let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    if f.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported model version {}", f.format_version)));
    }
    let (d, h) = (f.input_dim, f.hidden);
    if f.parameters.len() != 2 * d * h + d + h {
        return Err(Error::format(path, "parameter count does not match dimensions"));
    }
    let p = &f.parameters;
    let model = Perceptron {
        w1: DMatrix::from_row_slice(h, d, &p[..h * d]),
        b1: DVector::from_column_slice(&p[h * d..h * d + h]),
        w2: DMatrix::from_row_slice(d, h, &p[h * d + h..2 * h * d + h]),
        b2: DVector::from_column_slice(&p[2 * h * d + h..]),
        activation: f.activation,
    };
    model.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok((model, f.hyper))
}

pub fn save_model(path: &Path, model: &Perceptron, hyper: Option<&TrainHyper>) -> Result<()> {
    crate::dataset::write_atomic(path, model_to_json(model, hyper).as_bytes())
}

pub fn load_model(path: &Path) -> Result<(Perceptron, Option<TrainHyper>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text, path)
}

/// Flattens points to `[x0, y0, x1, y1, ...]`.
pub fn flatten_points(points: &[[f64; 2]]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

pub fn unflatten_points(v: &[f64]) -> Vec<[f64; 2]> {
    v.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// A systematic labelling difference between two landmark conventions: a
/// per-point constant offset followed by a mild affine warp about the crop
/// center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystematicBias {
    pub offsets: Vec<[f64; 2]>,
    /// Row-major 2×2 linear part applied about (0.5, 0.5).
    pub linear: [[f64; 2]; 2],
    pub translation: [f64; 2],
}

impl SystematicBias {
    /// Jawline pushed down and outward, brows raised, plus a small shear,
    /// scale and shift.
    pub fn jawline_68() -> Self {
        let offsets = (0..68)
            .map(|i| match i {
                0..=16 => {
                    let t = (i as f64 - 8.0) / 8.0;
                    [0.02 * t, 0.025 * (1.0 - t * t) + 0.01]
                }
                17..=26 => [0.0, -0.012],
                _ => [0.004, 0.003],
            })
            .collect();
        Self { offsets, linear: [[1.03, 0.02], [-0.015, 0.98]], translation: [0.01, -0.008] }
    }

    pub fn apply(&self, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let [[a, b], [c, d]] = self.linear;
        points
            .iter()
            .zip(&self.offsets)
            .map(|(p, o)| {
                let (x, y) = (p[0] + o[0] - 0.5, p[1] + o[1] - 0.5);
                [0.5 + a * x + b * y + self.translation[0], 0.5 + c * x + d * y + self.translation[1]]
            })
            .collect()
    }
}

/// Normalizes landmarks into a square crop around their bounding box with
/// seeded scale and shift jitter, mapping into roughly [0, 1].
pub fn normalize_to_crop<R: Rng + ?Sized>(points: &[[f64; 2]], rng: &mut R) -> Vec<[f64; 2]> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let size = (hi[0] - lo[0]).max(hi[1] - lo[1]) * rng.random_range(1.25..1.45);
    let center = [
        0.5 * (lo[0] + hi[0]) + size * rng.random_range(-0.04..0.04),
        0.5 * (lo[1] + hi[1]) + size * rng.random_range(-0.04..0.04),
    ];
    points.iter().map(|p| [(p[0] - center[0]) / size + 0.5, (p[1] - center[1]) / size + 0.5]).collect()
}

/// Projected sparse landmarks of `count` assembled scenes, sample `i`
/// drawn from `sample_seed(seed, i)`.
pub fn scene_landmark_sets(assets: &ModelAssets, config: &GenerationConfig, count: usize, seed: u64) -> Result<Vec<Vec<[f64; 2]>>> {
    (0..count as u64)
        .map(|i| {
            let scene = assemble_scene(config, assets, sample_seed(seed, i))?;
            let mesh = posed_mesh(&assets.rig, &scene.identity, &scene.expression, &scene.pose)?;
            let camera = Camera::from_scene(&scene.camera, config.image.width_px, config.image.height_px)?;
            let points: Vec<[f64; 3]> = assets.rig.landmarks().iter().map(|a| mesh.surface_point(a.face, a.bary)).collect();
            Ok(project(&camera, &points).iter().map(|p| [p.x, p.y]).collect())
        })
        .collect()
}

/// Seeded random pair set for the given source landmark sets.
pub fn bias_pairs(sources: &[Vec<[f64; 2]>], bias: &SystematicBias, seed: u64) -> Result<LandmarkPairSet> {
    let mut rng = rng_from_seed(seed);
    let mut s = Vec::with_capacity(sources.len());
    let mut t = Vec::with_capacity(sources.len());
    for pts in sources {
        if pts.len() != bias.offsets.len() {
            return Err(Error::param("landmark count does not match the bias definition"));
        }
        let crop = normalize_to_crop(pts, &mut rng);
        t.push(flatten_points(&bias.apply(&crop)));
        s.push(flatten_points(&crop));
    }
    LandmarkPairSet::new(s, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(d: usize, h: usize, seed: u64) -> Perceptron {
        let mut rng = rng_from_seed(seed);
        let mut m = Perceptron::init(d, h, Activation::default(), &mut rng);
        for b in m.b1.iter_mut().chain(m.b2.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        m
    }

    fn random_pairs(d: usize, n: usize, seed: u64) -> LandmarkPairSet {
        let mut rng = rng_from_seed(seed);
        let mut v = || (0..d).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>();
        let sources = (0..n).map(|_| v()).collect();
        let targets = (0..n).map(|_| v()).collect();
        LandmarkPairSet::new(sources, targets).unwrap()
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut m = Perceptron::zeros(4, 3, Activation::default());
        m.b2 = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(m.forward(&[9.0, -1.0, 2.0, 0.3]).unwrap(), vec![1.0, -2.0, 0.5, 3.0]);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn single_unit_trace() {
        let mut m = Perceptron::zeros(3, 1, Activation::default());
        m.w1[(0, 0)] = 1.0;
        m.w2[(0, 0)] = 1.0;
        m.b2 = DVector::from_vec(vec![0.25, 0.0, 0.0]);
        let y = m.forward(&[0.7, 5.0, -3.0]).unwrap();
        assert!((y[0] - 0.95).abs() < 1e-15);
        assert_eq!(&y[1..], &[0.0, 0.0]);
        // negative pre-activation goes through the leak
        let y = m.forward(&[-2.0, 0.0, 0.0]).unwrap();
        assert!((y[0] - (0.25 - 0.02)).abs() < 1e-15);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let m = random_model(4, 5, 1);
        let sources: Vec<Vec<f64>> = (0..6).map(|i| vec![0.1 * i as f64, 0.3, -0.2, 0.05 * i as f64]).collect();
        let targets = m.forward_many(&sources).unwrap();
        let (l, g) = loss_and_gradients(&m, &LandmarkPairSet::new(sources, targets).unwrap()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.slices().iter().all(|s| s.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn doubled_residuals_quadruple_the_loss() {
        let m = random_model(4, 3, 2);
        let pairs = random_pairs(4, 5, 3);
        let out = m.forward_many(&pairs.sources).unwrap();
        let doubled: Vec<Vec<f64>> = out
            .iter()
            .zip(&pairs.targets)
            .map(|(y, t)| y.iter().zip(t).map(|(y, t)| y - 2.0 * (y - t)).collect())
            .collect();
        let l1 = loss(&m, &pairs).unwrap();
        let l2 = loss(&m, &LandmarkPairSet::new(pairs.sources.clone(), doubled).unwrap()).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12 * l2.max(1.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = random_model(2, 2, 0);
        let empty = LandmarkPairSet::new(vec![], vec![]).unwrap();
        assert!(loss_and_gradients(&m, &empty).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let m = random_model(4, 6, seed);
            let pairs = random_pairs(4, 7, seed + 100);
            let (_, g) = loss_and_gradients(&m, &pairs).unwrap();
            let analytic: Vec<f64> = g.slices().iter().flat_map(|s| s.iter().copied()).collect();
            let mut k = 0;
            for block in 0..4 {
                let len = g.slices()[block].len();
                for i in 0..len {
                    let mut plus = m.clone();
                    plus.as_gradients_mut()[block][i] += 1e-5;
                    let mut minus = m.clone();
                    minus.as_gradients_mut()[block][i] -= 1e-5;
                    let fd = (loss(&plus, &pairs).unwrap() - loss(&minus, &pairs).unwrap()) / 2e-5;
                    let a = analytic[k];
                    let rel = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-8);
                    assert!(rel < 1e-4, "seed {seed} block {block} index {i}: {a} vs {fd}");
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let mut m = random_model(3, 2, 4);
        let before = m.clone();
        let mut state = AdamState::new(&m, AdamHyper::default());
        let zero = Gradients::zeros_like(&m);
        adam_step(&mut state, &mut m, &zero).unwrap();
        assert_eq!(m, before);
        assert_eq!(state.step, 1);

        // moments decay geometrically under zero gradients
        state.first.b2[0] = 1.0;
        state.second.b2[0] = 1.0;
        adam_step(&mut state, &mut m, &zero).unwrap();
        assert!((state.first.b2[0] - 0.9).abs() < 1e-15);
        assert!((state.second.b2[0] - 0.999).abs() < 1e-15);

        // a fresh first step moves each parameter by lr against the gradient sign
        for g in [1e-3, 0.5, -7.0] {
            let mut m = before.clone();
            let mut state = AdamState::new(&m, AdamHyper::default());
            let mut grads = Gradients::zeros_like(&m);
            grads.w1.fill(g);
            adam_step(&mut state, &mut m, &grads).unwrap();
            let step = m.w1[(0, 0)] - before.w1[(0, 0)];
            assert!((step + 1e-3 * g.signum()).abs() < 1e-7, "{g}: {step}");
        }
    }

    #[test]
    fn zero_epochs_return_the_initialization() {
        let pairs = random_pairs(4, 10, 5);
        let hyper = TrainHyper { epochs: 0, hidden: 8, whiten: false, ..Default::default() };
        let out = train_adapter(&pairs, &hyper).unwrap();
        let init = Perceptron::init(4, 8, Activation::default(), &mut stream(hyper.seed, "adapt/init"));
        assert_eq!(out.model, init);
        assert_eq!(out.best_epoch, 0);
        assert!(out.log.epochs.is_empty());
    }

    #[test]
    fn folded_model_matches_whitened_evaluation() {
        let m = random_model(5, 7, 11);
        let pairs = random_pairs(5, 30, 12);
        let (x, t) = batch_matrices_of(5, &pairs).unwrap();
        let (input, target) = (Whitening::fit(&x), Whitening::fit(&t));
        let folded = fold_whitening(&m, &input, &target);
        let (_, ys) = m.forward_batch(&input.apply(&x));
        let (_, y) = folded.forward_batch(&x);
        for (i, col) in ys.column_iter().enumerate() {
            let back = &target.inverse * col + &target.mean;
            assert!((back - y.column(i)).amax() < 1e-12);
        }
        assert!((&input.inverse * &input.transform - DMatrix::identity(5, 5)).amax() < 1e-12);
        // whitened data has zero mean and a covariance no larger than the identity
        let z = input.apply(&x);
        assert!(z.column_mean().amax() < 1e-12);
        let cov = &z * z.transpose() / 30.0;
        let eig = cov.symmetric_eigen().eigenvalues;
        assert!(eig.max() < 1.0 + 1e-9 && eig.min() > -1e-12);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LearningRateSchedule::Cosine.factor(1, 10), 1.0);
        assert!((LearningRateSchedule::Cosine.factor(6, 10) - 0.5).abs() < 1e-15);
        assert!(LearningRateSchedule::Cosine.factor(10, 10) > 0.0);
        assert_eq!(LearningRateSchedule::Constant.factor(7, 10), 1.0);
    }

    #[test]
    fn training_is_deterministic_and_needs_data() {
        let pairs = random_pairs(4, 40, 6);
        let hyper = TrainHyper { epochs: 5, hidden: 8, batch_size: 8, ..Default::default() };
        let a = train_adapter(&pairs, &hyper).unwrap();
        let b = train_adapter(&pairs, &hyper).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        let one = pairs.subset(&[0]);
        assert!(matches!(train_adapter(&one, &hyper), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn learns_the_identity() {
        // low-dimensional structured inputs, as landmark sets are
        let mut rng = rng_from_seed(7);
        let d = 16;
        let basis: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-0.2..0.2)).collect()).collect();
        let sources: Vec<Vec<f64>> = (0..600)
            .map(|_| {
                let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                (0..d).map(|j| 0.5 + (0..3).map(|k| c[k] * basis[k][j]).sum::<f64>()).collect()
            })
            .collect();
        let pairs = LandmarkPairSet::new(sources.clone(), sources).unwrap();
        let (x, _) = batch_matrices_of(d, &pairs).unwrap();
        let variance = x.row_iter().map(|r| r.variance()).sum::<f64>() / d as f64;
        let hyper = TrainHyper { hidden: 32, epochs: 300, batch_size: 32, ..Default::default() };
        let out = train_adapter(&pairs, &hyper).unwrap();
        assert!(out.best_validation_loss < 1e-3 * variance, "{} vs variance {variance}", out.best_validation_loss);
    }

    #[test]
    fn model_file_round_trip() {
        let m = random_model(6, 4, 9);
        let text = model_to_json(&m, Some(&TrainHyper::default()));
        let (back, hyper) = model_from_json(&text, Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert_eq!(hyper, Some(TrainHyper::default()));
        assert!(model_from_json("{}", Path::new("m")).is_err());
    }

    #[test]
    fn bias_is_affine_plus_offset() {
        let bias = SystematicBias::jawline_68();
        let pts: Vec<[f64; 2]> = (0..68).map(|i| [0.5, 0.5 + 0.001 * i as f64]).collect();
        let out = bias.apply(&pts);
        let (x, y) = (bias.offsets[0][0], 0.0 + bias.offsets[0][1]);
        assert!((out[0][0] - (0.5 + 1.03 * x + 0.02 * y + 0.01)).abs() < 1e-15);
    }
}
