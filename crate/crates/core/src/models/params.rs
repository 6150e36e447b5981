use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::error::{Error, Result};

/// Flat parameter vector of a model (local, group, global or virtual).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    spec: ModelSpec,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: ModelSpec) -> Self {
        ModelParams {
            spec,
            values: vec![0.0; spec.param_count()],
        }
    }

    /// Checked constructor: length must match the spec and every entry must be finite.
    pub fn from_values(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("parameter {i} is not finite")));
        }
        Ok(ModelParams { spec, values })
    }

    pub(crate) fn from_raw(spec: ModelSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.param_count());
        ModelParams { spec, values }
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &ModelParams) -> ModelParams {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + a * y)
            .collect();
        ModelParams::from_raw(self.spec, values)
    }

    pub fn sub(&self, other: &ModelParams) -> ModelParams {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, a: f64) -> ModelParams {
        ModelParams::from_raw(self.spec, self.values.iter().map(|x| a * x).collect())
    }

    pub fn dot(&self, other: &ModelParams) -> f64 {
        self.values.iter().zip(&other.values).map(|(x, y)| x * y).sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// One term of a weighted reduction. `key` fixes the summation order
/// (ascending), normally the node index.
#[derive(Debug, Clone, Copy)]
pub struct Weighted<'a> {
    pub key: usize,
    pub params: &'a ModelParams,
    pub weight: f64,
}

impl<'a> Weighted<'a> {
    pub fn new(key: usize, params: &'a ModelParams, weight: f64) -> Self {
        Weighted { key, params, weight }
    }
}

/// `sum_k weight_k * params_k`, accumulated in ascending key order. The
/// weights need not sum to one, which is what partial (per-edge) sums need.
pub fn weighted_sum(terms: &[Weighted<'_>]) -> Result<ModelParams> {
    let mut order: Vec<&Weighted<'_>> = terms.iter().collect();
    order.sort_by_key(|t| t.key);
    let (first, rest) = order
        .split_first()
        .ok_or_else(|| Error::Domain("weighted sum of zero models".into()))?;
    let spec = first.params.spec();
    for t in &order {
        if !(t.weight.is_finite() && t.weight >= 0.0) {
            return Err(Error::Domain(format!("weight {} is not a nonnegative number", t.weight)));
        }
    }
    let mut acc: Vec<f64> = first.params.values().iter().map(|v| first.weight * v).collect();
    for t in rest {
        if t.params.spec() != spec {
            return Err(Error::Shape("models with different specs cannot be averaged".into()));
        }
        for (a, v) in acc.iter_mut().zip(t.params.values()) {
            *a += t.weight * v;
        }
    }
    Ok(ModelParams::from_raw(spec, acc))
}

/// Convex combination of models. Weights must sum to one (tolerance 1e-9).
pub fn weighted_average(terms: &[Weighted<'_>]) -> Result<ModelParams> {
    let total: f64 = terms.iter().map(|t| t.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invariant(format!("averaging weights sum to {total}, not 1")));
    }
    weighted_sum(terms)
}
