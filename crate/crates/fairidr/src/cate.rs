//! Two-arm outcome regression and the CATE estimator `δ̂(z) = m̂₁(z) − m̂₀(z)`.
//!
//! Each arm's conditional mean `E[R | Z, A = a]` is fit by empirical MSE
//! minimization over one of two function classes:
//!
//! - `relu-net`: a feedforward ReLU network trained by seeded mini-batch
//!   gradient descent (momentum 0.9, fixed step), keeping the epoch with the
//!   best validation loss;
//! - `ridge-basis`: exact penalized least squares on a per-coordinate
//!   polynomial basis (intercept unpenalized).
//!
//! Fitted predictors clip their output to `[-B, +B]`; the CATE therefore
//! lies in `[-2B, 2B]`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Sample};

const MOMENTUM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum CateError {
    #[error("treatment arm {arm} has no samples")]
    ArmMissing { arm: i8 },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("singular ridge system (ridge_lambda = 0 and collinear basis)")]
    SingularSystem,
    #[error("input has {got} features, model expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("invalid regressor spec: {reason}")]
    InvalidSpec { reason: String },
}

/// Function class used for each arm's regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorKind {
    ReluNet,
    RidgeBasis,
}

/// Hyperparameters for one arm regressor.
///
/// `output_clip` is the sup-norm bound `B`; `None` resolves at fit time to
/// `10 · std(targets)` (or `|mean| + 1` when the targets are constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub kind: RegressorKind,
    pub width: usize,
    pub depth: usize,
    pub output_clip: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ridge_lambda: f64,
    pub basis_degree: usize,
    pub seed: u64,
}

impl RegressorSpec {
    pub fn relu(seed: u64) -> Self {
        RegressorSpec {
            kind: RegressorKind::ReluNet,
            width: 64,
            depth: 3,
            output_clip: None,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            ridge_lambda: 0.0,
            basis_degree: 1,
            seed,
        }
    }

    pub fn ridge(seed: u64) -> Self {
        RegressorSpec {
            kind: RegressorKind::RidgeBasis,
            width: 1,
            depth: 1,
            output_clip: None,
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: 64,
            ridge_lambda: 1e-8,
            basis_degree: 1,
            seed,
        }
    }

    fn validate(&self) -> Result<(), CateError> {
        let bad = |reason: &str| Err(CateError::InvalidSpec { reason: reason.to_string() });
        if self.width < 1 || self.depth < 1 {
            return bad("width and depth must be at least 1");
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return bad("epochs and batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.ridge_lambda < 0.0 {
            return bad("ridge_lambda must be non-negative");
        }
        if self.basis_degree < 1 {
            return bad("basis_degree must be at least 1");
        }
        if let Some(b) = self.output_clip {
            if !(b > 0.0) {
                return bad("output_clip must be positive");
            }
        }
        Ok(())
    }
}

/// Declares which input slots carry X, S, and L: slots `0..p` are the
/// covariates, slot `p` is `S`, slot `p + 1` is `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub p: usize,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        self.p + 2
    }

    pub fn build(&self, x: &[f64], s: u8, l: i64) -> Result<Vec<f64>, CateError> {
        if x.len() != self.p {
            return Err(CateError::Shape { expected: self.p, got: x.len() });
        }
        let mut input = Vec::with_capacity(self.dim());
        input.extend_from_slice(x);
        input.push(f64::from(s));
        input.push(l as f64);
        Ok(input)
    }

    pub fn build_sample(&self, sample: &Sample) -> Result<Vec<f64>, CateError> {
        self.build(&sample.x, sample.s, sample.l)
    }
}

/// One dense layer, row-major `weight[row * cols + col]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Fitted parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Params {
    /// Coefficients over the polynomial basis `[1, z_1..z_d, z_1^2..z_d^2, ...]`.
    Ridge { coef: Vec<f64> },
    Relu { layers: Vec<LayerParams> },
}

/// A fitted arm regressor. Prediction is a pure function of `(params, input)`
/// and is clipped to `[-B, +B]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    pub spec: RegressorSpec,
    pub input_dim: usize,
    pub params: Params,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl FittedRegressor {
    /// The resolved sup-norm bound `B`.
    pub fn clip(&self) -> f64 {
        self.spec.output_clip.expect("fitted regressor always has a resolved clip")
    }

    pub fn predict(&self, input: &[f64]) -> Result<f64, CateError> {
        if input.len() != self.input_dim {
            return Err(CateError::Shape { expected: self.input_dim, got: input.len() });
        }
        let raw = match &self.params {
            Params::Ridge { coef } => {
                let phi = poly_features(input, self.spec.basis_degree);
                phi.iter().zip(coef).map(|(a, b)| a * b).sum()
            }
            Params::Relu { layers } => relu_forward(layers, input),
        };
        let b = self.clip();
        Ok(raw.clamp(-b, b))
    }
}

fn relu_forward(layers: &[LayerParams], input: &[f64]) -> f64 {
    let mut cur = input.to_vec();
    let last = layers.len() - 1;
    for (k, layer) in layers.iter().enumerate() {
        let mut next = layer.bias.clone();
        for (row, out) in next.iter_mut().enumerate() {
            let w = &layer.weight[row * layer.cols..(row + 1) * layer.cols];
            let mut acc = 0.0;
            for (wi, xi) in w.iter().zip(&cur) {
                acc += wi * xi;
            }
            *out += acc;
        }
        if k < last {
            for v in &mut next {
                *v = v.max(0.0);
            }
        }
        cur = next;
    }
    cur[0]
}

/// Polynomial basis: intercept, then per-coordinate powers grouped by degree.
fn poly_features(z: &[f64], degree: usize) -> Vec<f64> {
    let mut phi = Vec::with_capacity(1 + z.len() * degree);
    phi.push(1.0);
    let mut pow: Vec<f64> = vec![1.0; z.len()];
    for _ in 0..degree {
        for (p, zi) in pow.iter_mut().zip(z) {
            *p *= zi;
        }
        phi.extend_from_slice(&pow);
    }
    phi
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ssq = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (ssq / (n - 1.0)).sqrt()
}

fn resolve_clip(spec: &RegressorSpec, targets: &[f64]) -> f64 {
    if let Some(b) = spec.output_clip {
        return b;
    }
    let sd = sample_std(targets);
    if sd > 0.0 {
        10.0 * sd
    } else {
        let mean = targets.iter().sum::<f64>() / targets.len().max(1) as f64;
        mean.abs() + 1.0
    }
}

fn clipped_mse(predict: impl Fn(&[f64]) -> f64, clip: f64, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| {
            let d = predict(x).clamp(-clip, clip) - y;
            d * d
        })
        .sum::<f64>()
        / n
}

/// ReLU network used during training: layer dims `[d, w, .., w, 1]` with
/// `depth` hidden layers. Exposed so the analytic gradient can be compared
/// against finite differences.
#[derive(Debug, Clone)]
pub struct ReluNet {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl ReluNet {
    /// Kaiming-uniform initialization from a seeded stream; biases start at 0.
    pub fn new_seeded(input_dim: usize, width: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(input_dim, width, depth, &mut rng)
    }

    fn init(input_dim: usize, width: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(width).take(depth));
        dims.push(1);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (rows, cols) = (dims[k + 1], dims[k]);
            let limit = (6.0 / cols as f64).sqrt();
            // Row-major fill so the parameter order is independent of the
            // matrix storage layout.
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
            weights.push(DMatrix::from_row_slice(rows, cols, &data));
            biases.push(DVector::zeros(rows));
        }
        ReluNet { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    /// Raw (unclipped) scalar output for one input.
    pub fn forward_one(&self, x: &[f64]) -> f64 {
        let mut cur = DVector::from_column_slice(x);
        let last = self.weights.len() - 1;
        for k in 0..self.weights.len() {
            let mut z = &self.weights[k] * cur + &self.biases[k];
            if k < last {
                z.apply(|v| *v = v.max(0.0));
            }
            cur = z;
        }
        cur[0]
    }

    /// Mean squared error over a batch together with its gradient in the
    /// flat parameter order of [`ReluNet::params_flat`].
    pub fn mse_and_grad(&self, xs: &[Vec<f64>], ys: &[f64]) -> (f64, Vec<f64>) {
        let bsz = xs.len();
        let d = self.input_dim();
        let x = DMatrix::from_fn(d, bsz, |i, j| xs[j][i]);
        let y = DMatrix::from_fn(1, bsz, |_, j| ys[j]);
        let (loss, gw, gb) = self.batch_backprop(&x, &y);
        let mut flat = Vec::new();
        for (w, b) in gw.iter().zip(&gb) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    flat.push(w[(r, c)]);
                }
            }
            flat.extend(b.iter().copied());
        }
        (loss, flat)
    }

    /// Loss and per-layer gradients; samples are columns of `x`.
    fn batch_backprop(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
    ) -> (f64, Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
        let n_layers = self.weights.len();
        let bsz = x.ncols() as f64;

        let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers + 1);
        let mut zs: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers);
        acts.push(x.clone());
        for k in 0..n_layers {
            let mut z = &self.weights[k] * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &self.biases[k];
            }
            let a = if k < n_layers - 1 { z.map(|v| v.max(0.0)) } else { z.clone() };
            zs.push(z);
            acts.push(a);
        }

        let resid = acts.last().unwrap() - y;
        let loss = resid.iter().map(|v| v * v).sum::<f64>() / bsz;

        let mut grad_w = vec![DMatrix::zeros(0, 0); n_layers];
        let mut grad_b = vec![DVector::zeros(0); n_layers];
        let mut delta = resid * (2.0 / bsz);
        for k in (0..n_layers).rev() {
            grad_w[k] = &delta * acts[k].transpose();
            grad_b[k] = delta.column_sum();
            if k > 0 {
                let mask = zs[k - 1].map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                delta = (self.weights[k].transpose() * delta).component_mul(&mask);
            }
        }
        (loss, grad_w, grad_b)
    }

    /// Flat parameter vector: per layer, row-major weights then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    flat.push(w[(r, c)]);
                }
            }
            flat.extend(b.iter().copied());
        }
        flat
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = flat[at];
                    at += 1;
                }
            }
            for v in b.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        assert_eq!(at, flat.len(), "flat parameter length mismatch");
    }

    fn to_layers(&self) -> Vec<LayerParams> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| {
                let mut weight = Vec::with_capacity(w.nrows() * w.ncols());
                for r in 0..w.nrows() {
                    for c in 0..w.ncols() {
                        weight.push(w[(r, c)]);
                    }
                }
                LayerParams { rows: w.nrows(), cols: w.ncols(), weight, bias: b.iter().copied().collect() }
            })
            .collect()
    }
}

fn fit_relu(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    val_x: &[Vec<f64>],
    val_y: &[f64],
    spec: &RegressorSpec,
    clip: f64,
) -> Result<(Params, f64, Option<f64>), CateError> {
    let d = train_x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut net = ReluNet::init(d, spec.width, spec.depth, &mut rng);

    let mut vel_w: Vec<DMatrix<f64>> = net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
    let mut vel_b: Vec<DVector<f64>> = net.biases.iter().map(|b| DVector::zeros(b.nrows())).collect();

    let val_mse = |net: &ReluNet| clipped_mse(|x| net.forward_one(x), clip, val_x, val_y);

    let mut best: Option<(f64, Vec<DMatrix<f64>>, Vec<DVector<f64>>)> = None;
    let mut indices: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 1..=spec.epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(spec.batch_size) {
            let x = DMatrix::from_fn(d, chunk.len(), |i, j| train_x[chunk[j]][i]);
            let y = DMatrix::from_fn(1, chunk.len(), |_, j| train_y[chunk[j]]);
            let (loss, gw, gb) = net.batch_backprop(&x, &y);
            if !loss.is_finite() {
                return Err(CateError::Divergence { epoch });
            }
            for k in 0..net.weights.len() {
                vel_w[k] = &vel_w[k] * MOMENTUM - &gw[k] * spec.learning_rate;
                vel_b[k] = &vel_b[k] * MOMENTUM - &gb[k] * spec.learning_rate;
                net.weights[k] += &vel_w[k];
                net.biases[k] += &vel_b[k];
            }
        }
        if !val_x.is_empty() {
            let v = val_mse(&net);
            if !v.is_finite() {
                return Err(CateError::Divergence { epoch });
            }
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, net.weights.clone(), net.biases.clone()));
            }
        }
    }

    let val_loss = match best {
        Some((v, w, b)) => {
            net.weights = w;
            net.biases = b;
            Some(v)
        }
        None => None,
    };
    let train_loss = clipped_mse(|x| net.forward_one(x), clip, train_x, train_y);
    Ok((Params::Relu { layers: net.to_layers() }, train_loss, val_loss))
}

fn fit_ridge(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    val_x: &[Vec<f64>],
    val_y: &[f64],
    spec: &RegressorSpec,
    clip: f64,
) -> Result<(Params, f64, Option<f64>), CateError> {
    let degree = spec.basis_degree;
    let m = 1 + train_x[0].len() * degree;
    let n = train_x.len();

    let phi = DMatrix::from_fn(n, m, |i, j| poly_features(&train_x[i], degree)[j]);
    let mut gram = phi.transpose() * &phi;
    for j in 1..m {
        gram[(j, j)] += spec.ridge_lambda;
    }
    let rhs = phi.transpose() * DVector::from_column_slice(train_y);
    let coef = nalgebra::Cholesky::new(gram)
        .ok_or(CateError::SingularSystem)?
        .solve(&rhs);
    let coef: Vec<f64> = coef.iter().copied().collect();

    let predict = |x: &[f64]| {
        poly_features(x, degree).iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()
    };
    let train_loss = clipped_mse(predict, clip, train_x, train_y);
    let val_loss = if val_x.is_empty() { None } else { Some(clipped_mse(predict, clip, val_x, val_y)) };
    Ok((Params::Ridge { coef }, train_loss, val_loss))
}

/// Fits one arm regressor on explicit input/target slices by empirical MSE
/// minimization. Validation data drives epoch selection for `relu-net` and
/// is otherwise only reported.
pub fn fit_regressor(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    val_x: &[Vec<f64>],
    val_y: &[f64],
    spec: &RegressorSpec,
) -> Result<FittedRegressor, CateError> {
    spec.validate()?;
    if train_x.is_empty() {
        return Err(CateError::InvalidSpec { reason: "empty training set".into() });
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(CateError::InvalidSpec { reason: "inputs and targets differ in length".into() });
    }
    let input_dim = train_x[0].len();
    let clip = resolve_clip(spec, train_y);
    let mut resolved = spec.clone();
    resolved.output_clip = Some(clip);

    let (params, train_loss, val_loss) = match spec.kind {
        RegressorKind::ReluNet => fit_relu(train_x, train_y, val_x, val_y, &resolved, clip)?,
        RegressorKind::RidgeBasis => fit_ridge(train_x, train_y, val_x, val_y, &resolved, clip)?,
    };
    Ok(FittedRegressor { spec: resolved, input_dim, params, train_loss, val_loss })
}

/// The fitted CATE: arm regressors `m̂₁` (A = +1) and `m̂₀` (A = −1) over the
/// shared `(X, S, L)` input layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub m1: FittedRegressor,
    pub m0: FittedRegressor,
    pub layout: FeatureLayout,
}

impl CateModel {
    /// `δ̂(z) = m̂₁(z) − m̂₀(z)`, deterministic in the fitted parameters.
    pub fn predict(&self, x: &[f64], s: u8, l: i64) -> Result<f64, CateError> {
        let input = self.layout.build(x, s, l)?;
        Ok(self.m1.predict(&input)? - self.m0.predict(&input)?)
    }

    pub fn predict_sample(&self, sample: &Sample) -> Result<f64, CateError> {
        self.predict(&sample.x, sample.s, sample.l)
    }

    /// CATE values for every row of a dataset, in row order.
    pub fn deltas(&self, ds: &Dataset) -> Result<Vec<f64>, CateError> {
        ds.iter().map(|s| self.predict_sample(s)).collect()
    }
}

fn arm_views(ds: &Dataset, arm: i8, layout: FeatureLayout) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in ds.iter().filter(|s| s.a == arm) {
        xs.push(layout.build_sample(s).expect("dataset rows share p"));
        ys.push(s.r);
    }
    (xs, ys)
}

/// Fits `m̂₁` on the `A = +1` rows and `m̂₀` on the `A = −1` rows, with
/// validation rows filtered by arm identically. Both arms share one resolved
/// clip bound computed from all training outcomes; `m̂₀` uses `seed + 1`.
pub fn fit_cate(train: &Dataset, val: &Dataset, spec: &RegressorSpec) -> Result<CateModel, CateError> {
    let layout = FeatureLayout { p: train.p() };
    let (x1, y1) = arm_views(train, 1, layout);
    let (x0, y0) = arm_views(train, -1, layout);
    if x1.is_empty() {
        return Err(CateError::ArmMissing { arm: 1 });
    }
    if x0.is_empty() {
        return Err(CateError::ArmMissing { arm: -1 });
    }
    let (vx1, vy1) = arm_views(val, 1, layout);
    let (vx0, vy0) = arm_views(val, -1, layout);

    let all_r: Vec<f64> = train.iter().map(|s| s.r).collect();
    let clip = resolve_clip(spec, &all_r);

    let mut spec1 = spec.clone();
    spec1.output_clip = Some(clip);
    let mut spec0 = spec1.clone();
    spec0.seed = spec.seed.wrapping_add(1);

    let m1 = fit_regressor(&x1, &y1, &vx1, &vy1, &spec1)?;
    let m0 = fit_regressor(&x0, &y0, &vx0, &vy0, &spec0)?;
    Ok(CateModel { m1, m0, layout })
}
