//! Training models and the parameter algebra shared by every other module.
//!
//! Two fixed architectures are supported: multinomial softmax regression and a
//! one-hidden-layer ReLU perceptron. Both are trained with mean softmax
//! cross-entropy, optionally with an L2 ridge term `ridge/2 * ||w||^2`. All
//! parameters of a model live in one flat `f64` vector; the layout is
//! documented on [`ModelSpec`].

mod mlp;
mod params;
mod softmax;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use params::{weighted_average, weighted_sum, ModelParams, Weighted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxRegression,
    TwoLayerMlp,
}

/// Architecture of a model.
///
/// Parameter layout:
/// * softmax regression: class-major weights `W[c][j]` at `c * input_dim + j`,
///   followed by the `num_classes` biases;
/// * MLP: `W1[h][j]`, then `b1[h]`, then `W2[c][h]`, then `b2[c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Ignored for softmax regression.
    pub hidden_units: usize,
    /// L2 coefficient; zero outside of analysis runs.
    #[serde(default)]
    pub ridge: f64,
}

impl ModelSpec {
    pub fn softmax(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::SoftmaxRegression,
            input_dim,
            num_classes,
            hidden_units: 0,
            ridge: 0.0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_units: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::TwoLayerMlp,
            input_dim,
            num_classes,
            hidden_units,
            ridge: 0.0,
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::SoftmaxRegression => (self.input_dim + 1) * self.num_classes,
            ModelKind::TwoLayerMlp => {
                (self.input_dim + 1) * self.hidden_units
                    + (self.hidden_units + 1) * self.num_classes
            }
        }
    }

    pub fn is_convex(&self) -> bool {
        self.kind == ModelKind::SoftmaxRegression
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::Domain(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        if self.kind == ModelKind::TwoLayerMlp && self.hidden_units == 0 {
            return Err(Error::Domain("MLP needs at least one hidden unit".into()));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::Domain(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }

    /// Uniform initialization in `[-0.05, 0.05]`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelParams {
        let values = (0..self.param_count())
            .map(|_| rng.random_range(-0.05..=0.05))
            .collect();
        ModelParams::from_raw(*self, values)
    }
}

/// One labelled example `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Example { features, label }
    }
}

fn check_example(spec: &ModelSpec, ex: &Example) -> Result<()> {
    if ex.features.len() != spec.input_dim {
        return Err(Error::Shape(format!(
            "example has {} features, model expects {}",
            ex.features.len(),
            spec.input_dim
        )));
    }
    if ex.label >= spec.num_classes {
        return Err(Error::Shape(format!(
            "label {} out of range for {} classes",
            ex.label, spec.num_classes
        )));
    }
    Ok(())
}

/// Writes the logits of `features` into `out`.
pub(crate) fn logits_into(params: &ModelParams, features: &[f64], out: &mut [f64]) {
    match params.spec().kind {
        ModelKind::SoftmaxRegression => softmax::logits(params, features, out),
        ModelKind::TwoLayerMlp => mlp::logits(params, features, out),
    }
}

/// Numerically stable `log(sum(exp(z)))`, turning `z` into softmax probabilities in place.
pub(crate) fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// Mean loss and (optionally) its gradient over any collection of examples.
fn evaluate<'a, I>(params: &ModelParams, batch: I, want_grad: bool) -> Result<(f64, Option<ModelParams>)>
where
    I: IntoIterator<Item = &'a Example>,
{
    let spec = params.spec();
    let mut grad = want_grad.then(|| vec![0.0; spec.param_count()]);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut scratch = mlp::Scratch::new(&spec);
    for ex in batch {
        check_example(&spec, ex)?;
        total += match spec.kind {
            ModelKind::SoftmaxRegression => softmax::accumulate(params, ex, grad.as_deref_mut(), &mut scratch.logits),
            ModelKind::TwoLayerMlp => mlp::accumulate(params, ex, grad.as_deref_mut(), &mut scratch),
        };
        count += 1;
    }
    if count == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    let n = count as f64;
    let mut loss = total / n;
    if spec.ridge > 0.0 {
        loss += 0.5 * spec.ridge * params.values().iter().map(|w| w * w).sum::<f64>();
    }
    let grad = grad.map(|mut g| {
        for (gi, wi) in g.iter_mut().zip(params.values()) {
            *gi = *gi / n + spec.ridge * wi;
        }
        ModelParams::from_raw(spec, g)
    });
    Ok((loss, grad))
}

/// Mean cross-entropy over `batch`.
pub fn loss(params: &ModelParams, batch: &[Example]) -> Result<f64> {
    evaluate(params, batch, false).map(|(l, _)| l)
}

/// Gradient of [`loss`].
pub fn gradient(params: &ModelParams, batch: &[Example]) -> Result<ModelParams> {
    loss_and_gradient(params, batch).map(|(_, g)| g)
}

pub fn loss_and_gradient(params: &ModelParams, batch: &[Example]) -> Result<(f64, ModelParams)> {
    loss_and_gradient_iter(params, batch)
}

/// Like [`loss_and_gradient`] but over borrowed examples, e.g. a minibatch
/// gathered by index.
pub fn loss_and_gradient_iter<'a, I>(params: &ModelParams, batch: I) -> Result<(f64, ModelParams)>
where
    I: IntoIterator<Item = &'a Example>,
{
    let (l, g) = evaluate(params, batch, true)?;
    Ok((l, g.expect("gradient requested")))
}

pub fn loss_iter<'a, I>(params: &ModelParams, batch: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Example>,
{
    evaluate(params, batch, false).map(|(l, _)| l)
}

/// `params - eta * gradient(params, batch)`.
pub fn sgd_step(params: &ModelParams, batch: &[Example], eta: f64) -> Result<ModelParams> {
    check_eta(eta)?;
    let g = gradient(params, batch)?;
    Ok(params.axpy(-eta, &g))
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::Domain(format!("learning rate must be finite and >= 0, got {eta}")));
    }
    Ok(())
}

/// Class with the largest logit; ties go to the lowest index.
pub fn predict(params: &ModelParams, features: &[f64]) -> usize {
    let mut z = vec![0.0; params.spec().num_classes];
    logits_into(params, features, &mut z);
    argmax(&z)
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = c;
        }
    }
    best
}

/// Fraction of `testset` classified correctly.
pub fn accuracy(params: &ModelParams, testset: &[Example]) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::Domain("empty test set".into()));
    }
    let spec = params.spec();
    let mut z = vec![0.0; spec.num_classes];
    let mut correct = 0usize;
    for ex in testset {
        check_example(&spec, ex)?;
        logits_into(params, &ex.features, &mut z);
        if argmax(&z) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / testset.len() as f64)
}
