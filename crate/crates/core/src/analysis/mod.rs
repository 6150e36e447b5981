//! Smoothness and Lipschitz estimates, the centralized optimum and the
//! convergence bound of two-tier federated learning.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{self, Example, ModelKind, ModelParams, ModelSpec};
use crate::rng::{self, purpose};

/// L2 coefficient used for every loss evaluated in analysis mode, so that the
/// optimum stays finite on separable data.
pub const ANALYSIS_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMethod {
    PairSampling,
    /// Only consecutive trajectory points were compared.
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub rho_hat: f64,
    pub beta_hat: f64,
    pub omega_hat: f64,
    pub method: EstimationMethod,
}

/// Points compared when estimating ρ and β.
pub type Pair = (ModelParams, ModelParams);

/// Perturbation scale used when every trajectory point is the same.
const FLAT_TRAJECTORY_SIGMA: f64 = 1e-2;

fn trajectory_sigma(trajectory: &[ModelParams]) -> f64 {
    let m = trajectory.len() as f64;
    let dim = trajectory[0].len();
    let mut var = 0.0;
    for j in 0..dim {
        let mean = trajectory.iter().map(|w| w.values()[j]).sum::<f64>() / m;
        var += trajectory.iter().map(|w| (w.values()[j] - mean).powi(2)).sum::<f64>() / m;
    }
    let sigma = (var / dim as f64).sqrt();
    if sigma > 0.0 {
        sigma
    } else {
        FLAT_TRAJECTORY_SIGMA
    }
}

/// Consecutive trajectory points followed by `num_pairs` random pairs. Each
/// random point is a convex combination of two trajectory points plus
/// Gaussian noise at the trajectory's per-coordinate spread. Pair `j` depends
/// only on `(seed, j)`, so more pairs extend the sample.
pub fn sample_pairs(trajectory: &[ModelParams], num_pairs: usize, seed: u64) -> Result<Vec<Pair>> {
    let Some(first) = trajectory.first() else {
        return Err(Error::Domain("trajectory is empty".into()));
    };
    let spec = first.spec();
    if trajectory.iter().any(|w| w.spec() != spec) {
        return Err(Error::Shape("trajectory mixes model shapes".into()));
    }
    let mut pairs: Vec<Pair> = trajectory.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    let noise = Normal::new(0.0, trajectory_sigma(trajectory)).map_err(|e| Error::Domain(e.to_string()))?;
    for j in 0..num_pairs {
        let mut rng = rng::stream(seed, purpose::PAIRS, j as u64);
        let mut point = || {
            let a = &trajectory[rng.random_range(0..trajectory.len())];
            let b = &trajectory[rng.random_range(0..trajectory.len())];
            let lambda: f64 = rng.random();
            let values = a.values().iter().zip(b.values()).map(|(x, y)| lambda * x + (1.0 - lambda) * y + noise.sample(&mut rng)).collect();
            ModelParams::from_values(spec, values)
        };
        let x = point()?;
        let y = point()?;
        pairs.push((x, y));
    }
    Ok(pairs)
}

/// (max |F(x) − F(y)| / ‖x − y‖, max ‖∇F(x) − ∇F(y)‖ / ‖x − y‖) over the
/// pairs, skipping coincident points.
pub fn secant_constants(pairs: &[Pair], examples: &[Example]) -> Result<(f64, f64)> {
    let (mut rho, mut beta) = (0.0f64, 0.0f64);
    let mut used = 0;
    for (x, y) in pairs {
        let dist = x.distance(y);
        if dist == 0.0 {
            continue;
        }
        let (fx, gx) = models::loss_and_gradient(x, examples)?;
        let (fy, gy) = models::loss_and_gradient(y, examples)?;
        rho = rho.max((fx - fy).abs() / dist);
        beta = beta.max(gx.distance(&gy) / dist);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Domain("no pair of distinct points to compare".into()));
    }
    Ok((rho, beta))
}

/// ω = min over interval starts of 1/‖v − w*‖². Starts equal to w* are skipped.
pub fn omega_hat(interval_starts: &[ModelParams], w_star: &ModelParams) -> Result<f64> {
    interval_starts
        .iter()
        .map(|v| v.distance(w_star))
        .filter(|&d| d > 0.0)
        .map(|d| 1.0 / (d * d))
        .reduce(f64::min)
        .ok_or_else(|| Error::Domain("no interval start differs from w*".into()))
}

/// ρ̂ and β̂ from [`sample_pairs`] over `trajectory`, ω̂ from the same points
/// taken as global-interval starts (where the virtual model equals w).
pub fn estimate_constants(
    spec: ModelSpec,
    examples: &[Example],
    w_star: &ModelParams,
    trajectory: &[ModelParams],
    num_pairs: usize,
    seed: u64,
) -> Result<Constants> {
    if !spec.is_convex() {
        return Err(Error::Domain("constants are only meaningful for the convex model".into()));
    }
    let reparam = |w: &ModelParams| ModelParams::from_values(spec, w.values().to_vec());
    let trajectory = trajectory.iter().map(reparam).collect::<Result<Vec<_>>>()?;
    let pairs = sample_pairs(&trajectory, num_pairs, seed)?;
    let (rho_hat, beta_hat) = secant_constants(&pairs, examples)?;
    let omega_hat = omega_hat(&trajectory, &reparam(w_star)?)?;
    let method = if num_pairs > 0 { EstimationMethod::PairSampling } else { EstimationMethod::Trajectory };
    Ok(Constants { rho_hat, beta_hat, omega_hat, method })
}

/// Hessian of the mean softmax cross-entropy (plus ridge) at `params`.
pub fn softmax_hessian(params: &ModelParams, examples: &[Example]) -> Result<DMatrix<f64>> {
    let spec = params.spec();
    if spec.kind != ModelKind::SoftmaxRegression {
        return Err(Error::Domain("Hessian is implemented for softmax regression only".into()));
    }
    if examples.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let (d, c) = (spec.input_dim, spec.num_classes);
    let idx = |class: usize, j: usize| if j == d { c * d + class } else { class * d + j };
    let n = spec.param_count();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut z = vec![0.0; c];
    for ex in examples {
        if ex.features.len() != d || ex.label >= c {
            return Err(Error::Shape("example does not fit the model".into()));
        }
        models::logits_into(params, &ex.features, &mut z);
        models::softmax_in_place(&mut z);
        let xt = |j: usize| if j == d { 1.0 } else { ex.features[j] };
        for a in 0..c {
            for b in 0..c {
                let s = if a == b { z[a] - z[a] * z[b] } else { -z[a] * z[b] };
                if s == 0.0 {
                    continue;
                }
                for j in 0..=d {
                    let sj = s * xt(j);
                    for k in 0..=d {
                        h[(idx(a, j), idx(b, k))] += sj * xt(k);
                    }
                }
            }
        }
    }
    h /= examples.len() as f64;
    for i in 0..n {
        h[(i, i)] += spec.ridge;
    }
    Ok(h)
}

/// Minimizer of the mean loss (including the spec's ridge) by damped Newton
/// steps with Armijo backtracking, from the zero model.
pub fn solve_centralized(spec: ModelSpec, examples: &[Example], tol: f64, max_iters: usize) -> Result<ModelParams> {
    if !spec.is_convex() {
        return Err(Error::Domain("the centralized optimum needs the convex model".into()));
    }
    solve_from(ModelParams::zeros(spec), examples, tol, max_iters)
}

pub(crate) fn solve_from(start: ModelParams, examples: &[Example], tol: f64, max_iters: usize) -> Result<ModelParams> {
    let mut w = start;
    let (mut f, mut g) = models::loss_and_gradient(&w, examples)?;
    for _ in 0..max_iters {
        if g.norm() <= tol {
            return Ok(w);
        }
        let h = softmax_hessian(&w, examples)?;
        let gv = DVector::from_column_slice(g.values());
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&gv),
            None => {
                // singular without a ridge: regularize just enough to factor
                let shift = 1e-10 * (1.0 + h.diagonal().amax());
                let n = h.nrows();
                match (h + DMatrix::identity(n, n) * shift).cholesky() {
                    Some(ch) => ch.solve(&gv),
                    None => gv.clone(),
                }
            }
        };
        let dir = ModelParams::from_values(w.spec(), step.iter().map(|s| -s).collect())?;
        let slope = g.dot(&dir);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = w.axpy(t, &dir);
            let fc = models::loss(&cand, examples)?;
            if fc <= f + 1e-4 * t * slope {
                w = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        (f, g) = models::loss_and_gradient(&w, examples)?;
    }
    let grad_norm = g.norm();
    if grad_norm <= tol {
        Ok(w)
    } else {
        Err(Error::NoConvergence { iters: max_iters, grad_norm })
    }
}

/// ((ηβ + 1)^τ − 1) / β, continuous at β = 0.
fn growth(eta: f64, beta: f64, tau: usize) -> f64 {
    if beta == 0.0 {
        eta * tau as f64
    } else {
        (tau as f64 * (eta * beta).ln_1p()).exp_m1() / beta
    }
}

fn check_taus(tau1: usize, tau2: usize) -> Result<()> {
    if tau1 == 0 || tau2 == 0 {
        return Err(Error::Domain("tau1 and tau2 must be positive".into()));
    }
    Ok(())
}

/// Bound on ‖w(t) − v_[l](t)‖ within a global interval:
/// (δ/β)((ηβ+1)^τ1 − 1) + (Δ/β)((ηβ+1)^(τ1τ2) − 1).
pub fn lemma2_rhs(beta: f64, delta: f64, big_delta: f64, eta: f64, tau1: usize, tau2: usize) -> Result<f64> {
    check_taus(tau1, tau2)?;
    Ok(delta * growth(eta, beta, tau1) + big_delta * growth(eta, beta, tau1 * tau2))
}

/// The two additive parts of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// 1 / (2 τ1 τ2 η ω).
    pub optimization: f64,
    /// ρ times the divergence bound.
    pub divergence: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.optimization + self.divergence
    }
}

pub fn theorem1_terms(c: &Constants, delta: f64, big_delta: f64, eta: f64, tau1: usize, tau2: usize) -> Result<BoundTerms> {
    check_taus(tau1, tau2)?;
    if !(eta > 0.0 && c.omega_hat > 0.0) {
        return Err(Error::Domain("eta and omega must be positive".into()));
    }
    Ok(BoundTerms {
        optimization: 1.0 / (2.0 * (tau1 * tau2) as f64 * eta * c.omega_hat),
        divergence: c.rho_hat * lemma2_rhs(c.beta_hat, delta, big_delta, eta, tau1, tau2)?,
    })
}

/// Upper bound on F(w(T)) − F(w*). Returns +∞ when η > 1/β, where the bound
/// does not apply.
pub fn theorem1_bound(c: &Constants, delta: f64, big_delta: f64, eta: f64, tau1: usize, tau2: usize) -> Result<f64> {
    let terms = theorem1_terms(c, delta, big_delta, eta, tau1, tau2)?;
    if eta * c.beta_hat > 1.0 {
        log::warn!("eta = {eta} exceeds 1/beta = {}; the bound does not hold", 1.0 / c.beta_hat);
        return Ok(f64::INFINITY);
    }
    Ok(terms.total())
}

/// Outcome of comparing a run's optimality gap with the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub constants: Constants,
    pub delta: f64,
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    pub eta: f64,
    pub tau1: usize,
    pub tau2: usize,
    pub optimality_gap: f64,
    pub bound: f64,
    pub holds: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn bound_report(
    examples: &[Example],
    final_model: &ModelParams,
    w_star: &ModelParams,
    constants: Constants,
    delta: f64,
    big_delta: f64,
    eta: f64,
    tau1: usize,
    tau2: usize,
) -> Result<BoundReport> {
    let spec = w_star.spec();
    let last = ModelParams::from_values(spec, final_model.values().to_vec())?;
    let optimality_gap = models::loss(&last, examples)? - models::loss(w_star, examples)?;
    let bound = theorem1_bound(&constants, delta, big_delta, eta, tau1, tau2)?;
    Ok(BoundReport { constants, delta, big_delta, eta, tau1, tau2, optimality_gap, bound, holds: optimality_gap <= bound })
}
