//! Small differentiable classifiers with analytic gradients.
//!
//! Two architectures are supported, both stored as one flat parameter
//! vector so that client updates can be treated as plain vectors:
//!
//! * softmax regression: `W (C×D)` then `b (C)`
//! * one-hidden-layer ReLU MLP: `W1 (H×D)`, `b1 (H)`, `W2 (C×H)`, `b2 (C)`
//!
//! Weight matrices are row-major with one row per output unit. The training
//! objective is the per-sample margin-controlled cross-entropy
//! `CE(y, f(x)) + λ·ln(1 + ‖f(x)‖²)` averaged over the batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    SoftmaxRegression,
    Mlp { hidden: usize },
}

/// Architecture plus input/output dimensions; fixes the flat layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn new(architecture: Architecture, input_dim: usize, classes: usize) -> Self {
        Self {
            architecture,
            input_dim,
            classes,
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, c) = (self.input_dim, self.classes);
        match self.architecture {
            Architecture::SoftmaxRegression => c * d + c,
            Architecture::Mlp { hidden: h } => h * d + h + c * h + c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    flat: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            flat: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_flat(shape: ModelShape, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != shape.param_count() {
            return Err(Error::Shape(format!(
                "{:?} expects {} parameters, got {}",
                shape.architecture,
                shape.param_count(),
                flat.len()
            )));
        }
        Ok(Self { shape, flat })
    }

    /// Weights uniform in (−s, s) with s = 1/√fan_in per layer; biases zero.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        let (d, c) = (shape.input_dim, shape.classes);
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let s = 1.0 / (fan_in.max(1) as f64).sqrt();
            for w in slice {
                *w = rng.random_range(-s..s);
            }
        };
        match shape.architecture {
            Architecture::SoftmaxRegression => fill(&mut p.flat[..c * d], d),
            Architecture::Mlp { hidden: h } => {
                fill(&mut p.flat[..h * d], d);
                let w2 = h * d + h;
                fill(&mut p.flat[w2..w2 + c * h], h);
            }
        }
        p
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean cross-entropy.
    pub ce: f64,
    /// Mean of `ln(1 + ‖f(x)‖²)`, unweighted.
    pub margin_penalty: f64,
    /// `ce + λ·margin_penalty`.
    pub total: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub samples: usize,
}

impl LossReport {
    fn from_sums(ce: f64, margin: f64, correct: usize, samples: usize, lambda: f64) -> Self {
        let n = samples as f64;
        let ce = ce / n;
        let margin_penalty = margin / n;
        Self {
            ce,
            margin_penalty,
            total: ce + lambda * margin_penalty,
            accuracy: correct as f64 / n,
            correct,
            samples,
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_input(shape: &ModelShape, x: &[f64]) -> Result<()> {
    if x.len() != shape.input_dim {
        return Err(Error::Shape(format!(
            "model expects {} input features, got {}",
            shape.input_dim,
            x.len()
        )));
    }
    Ok(())
}

fn check_batch(shape: &ModelShape, features: &Matrix, labels: &[usize]) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if features.cols() != shape.input_dim {
        return Err(Error::Shape(format!(
            "model expects {} input features, got {}",
            shape.input_dim,
            features.cols()
        )));
    }
    Ok(())
}

/// Linear layer `out[r] = b[r] + Σ_k w[r·in + k] x[k]`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * n_in..(r + 1) * n_in];
        *o = b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dlogits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Workspace {
    fn new(shape: &ModelShape) -> Self {
        let h = match shape.architecture {
            Architecture::SoftmaxRegression => 0,
            Architecture::Mlp { hidden } => hidden,
        };
        Self {
            hidden: vec![0.0; h],
            logits: vec![0.0; shape.classes],
            dlogits: vec![0.0; shape.classes],
            dhidden: vec![0.0; h],
        }
    }
}

/// Writes the logits into `ws.logits` (and hidden activations for the MLP).
fn forward_into(p: &ModelParams, x: &[f64], ws: &mut Workspace) {
    let ModelShape {
        architecture,
        input_dim: d,
        classes: c,
    } = p.shape;
    let f = &p.flat;
    match architecture {
        Architecture::SoftmaxRegression => {
            affine(&f[..c * d], &f[c * d..c * d + c], x, &mut ws.logits);
        }
        Architecture::Mlp { hidden: h } => {
            let (w1, rest) = f.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            affine(w1, b1, x, &mut ws.hidden);
            ws.hidden.iter_mut().for_each(|z| *z = z.max(0.0));
            affine(w2, b2, &ws.hidden, &mut ws.logits);
        }
    }
}

/// Output logits `f_w(x)`.
pub fn forward_logits(p: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_input(&p.shape, x)?;
    let mut ws = Workspace::new(&p.shape);
    forward_into(p, x, &mut ws);
    Ok(ws.logits)
}

/// Per-sample loss terms from logits: (cross-entropy, ln(1+‖f‖²)).
fn sample_terms(logits: &[f64], label: usize) -> (f64, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let sq: f64 = logits.iter().map(|z| z * z).sum();
    (lse - logits[label], sq.ln_1p())
}

/// Accumulates one sample's gradient, scaled by `weight`, into `grad`.
fn backward_accumulate(
    p: &ModelParams,
    x: &[f64],
    label: usize,
    lambda: f64,
    weight: f64,
    ws: &mut Workspace,
    grad: &mut [f64],
) {
    let ModelShape {
        architecture,
        input_dim: d,
        classes: c,
    } = p.shape;

    // dL/df = softmax(f) − onehot(y) + λ·2f/(1+‖f‖²)
    let max = ws.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (g, l) in ws.dlogits.iter_mut().zip(&ws.logits) {
        *g = (l - max).exp();
        z += *g;
    }
    let sq: f64 = ws.logits.iter().map(|v| v * v).sum();
    let margin_scale = lambda * 2.0 / (1.0 + sq);
    for (k, g) in ws.dlogits.iter_mut().enumerate() {
        *g = (*g / z + margin_scale * ws.logits[k]) * weight;
    }
    ws.dlogits[label] -= weight;

    match architecture {
        Architecture::SoftmaxRegression => {
            let (gw, gb) = grad.split_at_mut(c * d);
            for (r, dl) in ws.dlogits.iter().enumerate() {
                let row = &mut gw[r * d..(r + 1) * d];
                for (gwk, xk) in row.iter_mut().zip(x) {
                    *gwk += dl * xk;
                }
                gb[r] += dl;
            }
        }
        Architecture::Mlp { hidden: h } => {
            let w2 = &p.flat[h * d + h..h * d + h + c * h];
            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            ws.dhidden.iter_mut().for_each(|v| *v = 0.0);
            for (r, dl) in ws.dlogits.iter().enumerate() {
                let row = &mut gw2[r * h..(r + 1) * h];
                let wrow = &w2[r * h..(r + 1) * h];
                for k in 0..h {
                    row[k] += dl * ws.hidden[k];
                    ws.dhidden[k] += dl * wrow[k];
                }
                gb2[r] += dl;
            }
            for k in 0..h {
                // ReLU derivative taken as 0 at the kink.
                if ws.hidden[k] <= 0.0 {
                    continue;
                }
                let dh = ws.dhidden[k];
                let row = &mut gw1[k * d..(k + 1) * d];
                for (gwk, xk) in row.iter_mut().zip(x) {
                    *gwk += dh * xk;
                }
                gb1[k] += dh;
            }
        }
    }
}

/// Batch-mean margin-controlled loss and its exact gradient over the rows
/// listed in `indices`.
pub fn loss_and_grad_rows(
    p: &ModelParams,
    features: &Matrix,
    labels: &[usize],
    indices: &[usize],
    lambda: f64,
) -> Result<(LossReport, Vec<f64>)> {
    check_batch(&p.shape, features, labels)?;
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = p.shape.classes;
    let weight = 1.0 / indices.len() as f64;
    let mut ws = Workspace::new(&p.shape);
    let mut grad = vec![0.0; p.len()];
    let (mut ce, mut margin, mut correct) = (0.0, 0.0, 0usize);
    for &i in indices {
        let y = labels[i];
        if y >= classes {
            return Err(Error::Label { label: y, classes });
        }
        let x = features.row(i);
        forward_into(p, x, &mut ws);
        let (c, m) = sample_terms(&ws.logits, y);
        ce += c;
        margin += m;
        if argmax(&ws.logits) == y {
            correct += 1;
        }
        backward_accumulate(p, x, y, lambda, weight, &mut ws, &mut grad);
    }
    Ok((
        LossReport::from_sums(ce, margin, correct, indices.len(), lambda),
        grad,
    ))
}

/// [`loss_and_grad_rows`] over every row of the batch.
pub fn loss_and_grad(
    p: &ModelParams,
    features: &Matrix,
    labels: &[usize],
    lambda: f64,
) -> Result<(LossReport, Vec<f64>)> {
    let indices: Vec<usize> = (0..labels.len()).collect();
    loss_and_grad_rows(p, features, labels, &indices, lambda)
}

/// Full-dataset loss and accuracy without computing gradients.
pub fn evaluate(
    p: &ModelParams,
    features: &Matrix,
    labels: &[usize],
    lambda: f64,
) -> Result<LossReport> {
    check_batch(&p.shape, features, labels)?;
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = p.shape.classes;
    let mut ws = Workspace::new(&p.shape);
    let (mut ce, mut margin, mut correct) = (0.0, 0.0, 0usize);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Label { label: y, classes });
        }
        forward_into(p, features.row(i), &mut ws);
        let (c, m) = sample_terms(&ws.logits, y);
        ce += c;
        margin += m;
        if argmax(&ws.logits) == y {
            correct += 1;
        }
    }
    Ok(LossReport::from_sums(ce, margin, correct, labels.len(), lambda))
}

/// Mean squared logit norm `‖f(x)‖²` over a dataset.
pub fn mean_logit_norm_sq(p: &ModelParams, features: &Matrix) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    check_input(&p.shape, features.row(0))?;
    let mut ws = Workspace::new(&p.shape);
    let mut total = 0.0;
    for i in 0..features.rows() {
        forward_into(p, features.row(i), &mut ws);
        total += ws.logits.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / features.rows() as f64)
}
