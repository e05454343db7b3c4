//! Nonlinear least-squares fit of nested-CES utility parameters to store revenues.
//!
//! Utilities are linear in covariates, `u_ij = x_ij' θ`, and shares follow the
//! nested form with one common `μ`. The objective is
//! `Σ_j (R_j^obs - R_j^model(θ, μ))²`, minimized by Levenberg-Marquardt with a
//! central-difference Jacobian.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nested::nested_consumer_shares;
use crate::error::{Error, Result};
use crate::market::ProductId;

/// One consumer location (e.g. a census tract) and its consideration set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConsumer {
    pub id: String,
    pub budget: f64,
    #[serde(default = "one")]
    pub weight: f64,
    /// Covariate vector `x_ij` of every considered store.
    pub covariates: IndexMap<ProductId, Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitData {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covariate_names: Vec<String>,
    pub consumers: Vec<FitConsumer>,
    pub nests: IndexMap<ProductId, String>,
    pub observed_revenues: IndexMap<ProductId, f64>,
}

impl FitData {
    pub fn n_covariates(&self) -> usize {
        self.consumers
            .iter()
            .flat_map(|c| c.covariates.values())
            .map(Vec::len)
            .next()
            .unwrap_or(0)
    }

    /// Model revenues `Σ_i w_i B_i α_ij(θ, μ)` in the order of `observed_revenues`.
    pub fn model_revenues(&self, theta: &[f64], mu: f64) -> Vec<f64> {
        let mut rev: IndexMap<&ProductId, f64> = self.observed_revenues.keys().map(|k| (k, 0.0)).collect();
        for c in &self.consumers {
            let mut u: IndexMap<ProductId, f64> = c
                .covariates
                .iter()
                .map(|(j, x)| (j.clone(), x.iter().zip(theta).map(|(a, b)| a * b).sum()))
                .collect();
            u.insert(ProductId::outside(), 0.0);
            let s = nested_consumer_shares(&u, &self.nests, mu);
            for (j, a) in s {
                if let Some(r) = rev.get_mut(&j) {
                    *r += c.weight * c.budget * a;
                }
            }
        }
        rev.into_values().collect()
    }

    fn check(&self) -> Result<usize> {
        let k = self.n_covariates();
        if k == 0 {
            return Err(Error::invalid("design has no covariates"));
        }
        for c in &self.consumers {
            for (j, x) in &c.covariates {
                if x.len() != k {
                    return Err(Error::DimensionMismatch(format!(
                        "consumer {} store {j}: {} covariates, expected {k}",
                        c.id,
                        x.len()
                    )));
                }
                if !self.observed_revenues.contains_key(j) {
                    return Err(Error::UnknownProduct(j.to_string()));
                }
                if !self.nests.contains_key(j) {
                    return Err(Error::invalid(format!("store {j} has no nest")));
                }
            }
        }
        for (j, r) in &self.observed_revenues {
            if !(*r >= 0.0) {
                return Err(Error::invalid(format!("observed revenue of {j} is negative")));
            }
        }
        let rows: Vec<&Vec<f64>> = self.consumers.iter().flat_map(|c| c.covariates.values()).collect();
        let design = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        let rank = numerical_rank(&design);
        if rank < k {
            return Err(Error::RankDeficientDesign { rank, columns: k });
        }
        Ok(k)
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let tol = sv.max() * 1e-10 * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|s| **s > tol).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Every store's squared residual counts equally.
    Unweighted,
    /// Squared residuals weighted by the store's observed revenue.
    Revenue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop when the gradient ∞-norm of the normalized objective is below this.
    pub gradient_tolerance: f64,
    /// Stop when the parameter step is below this (relative to the parameter norm).
    pub step_tolerance: f64,
    pub weighting: Weighting,
    /// Starting `θ`; zeros when absent.
    pub initial_theta: Option<Vec<f64>>,
    pub initial_mu: f64,
    /// Hold `μ` at `initial_mu` instead of estimating it.
    pub fix_mu: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            weighting: Weighting::Unweighted,
            initial_theta: None,
            initial_mu: 0.8,
            fix_mu: false,
        }
    }
}

const MU_MIN: f64 = 1e-4;
const MU_MAX: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitIteration {
    pub iteration: usize,
    /// Half the sum of squared normalized residuals.
    pub objective: f64,
    pub gradient_norm: f64,
    pub lambda: f64,
    pub step_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub mu: f64,
    pub converged: bool,
    /// Why the iteration stopped.
    pub status: String,
    pub iterations: usize,
    /// `sqrt(SSR / (n - k))` in revenue units.
    pub residual_standard_error: f64,
    pub fitted_revenues: IndexMap<ProductId, f64>,
    pub log: Vec<FitIteration>,
}

/// Fits `(θ, μ)` to observed store revenues.
///
/// Non-convergence is not an error: the best point is returned with
/// `converged = false`.
pub fn fit_nested_ces(data: &FitData, config: &FitConfig) -> Result<FitResult> {
    let k = data.check()?;
    let n = data.observed_revenues.len();
    let observed: Vec<f64> = data.observed_revenues.values().copied().collect();
    let scale = observed.iter().sum::<f64>() / n as f64;
    if !(scale > 0.0) {
        return Err(Error::invalid("observed revenues are all zero"));
    }
    let weights: Vec<f64> = match config.weighting {
        Weighting::Unweighted => vec![1.0; n],
        Weighting::Revenue => observed.iter().map(|r| (r / scale).sqrt()).collect(),
    };
    let theta0 = match &config.initial_theta {
        Some(t) if t.len() == k => t.clone(),
        Some(t) => {
            return Err(Error::DimensionMismatch(format!("initial theta has {} entries, expected {k}", t.len())))
        }
        None => vec![0.0; k],
    };
    let estimate_mu = !config.fix_mu;
    let dim = k + usize::from(estimate_mu);
    let split = |x: &DVector<f64>| -> (Vec<f64>, f64) {
        let theta = x.rows(0, k).iter().copied().collect();
        let mu = if estimate_mu { x[k] } else { config.initial_mu };
        (theta, mu)
    };
    let residuals = |x: &DVector<f64>| -> DVector<f64> {
        let (theta, mu) = split(x);
        let model = data.model_revenues(&theta, mu);
        DVector::from_fn(n, |j, _| weights[j] * (model[j] - observed[j]) / scale)
    };
    let project = |mut x: DVector<f64>| {
        if estimate_mu {
            x[k] = x[k].clamp(MU_MIN, MU_MAX);
        }
        x
    };
    let jacobian = |x: &DVector<f64>| -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(n, dim);
        for c in 0..dim {
            let h = 1e-6 * x[c].abs().max(1.0);
            let mut up = x.clone();
            let mut down = x.clone();
            up[c] += h;
            down[c] -= h;
            let is_mu = estimate_mu && c == k;
            let col = if is_mu && down[c] <= 0.0 {
                (residuals(&up) - residuals(x)) / h
            } else {
                (residuals(&up) - residuals(&down)) / (2.0 * h)
            };
            jac.set_column(c, &col);
        }
        jac
    };

    let mut x = DVector::from_iterator(dim, theta0.into_iter().chain(estimate_mu.then_some(config.initial_mu)));
    x = project(x);
    let mut r = residuals(&x);
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = 1e-3;
    let mut log = Vec::new();
    let mut status = "iteration limit reached".to_owned();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let jac = jacobian(&x);
        let g = jac.transpose() * &r;
        let gnorm = g.amax();
        if gnorm < config.gradient_tolerance {
            converged = true;
            status = "gradient below tolerance".to_owned();
            log.push(FitIteration { iteration: iterations, objective: cost, gradient_norm: gnorm, lambda, step_norm: 0.0 });
            break;
        }
        let jtj = jac.transpose() * &jac;
        let mut accepted = false;
        let mut step_norm = 0.0;
        let mut tiny_step = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for d in 0..dim {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                lambda *= 2.0;
                continue;
            };
            let candidate = project(&x + &delta);
            let step = &candidate - &x;
            step_norm = step.norm();
            if step_norm < config.step_tolerance * (x.norm() + config.step_tolerance) {
                tiny_step = true;
                break;
            }
            let rc = residuals(&candidate);
            let cc = 0.5 * rc.norm_squared();
            if cc.is_finite() && cc < cost {
                x = candidate;
                r = rc;
                cost = cc;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 2.0;
        }
        log.push(FitIteration { iteration: iterations, objective: cost, gradient_norm: gnorm, lambda, step_norm });
        if tiny_step {
            converged = true;
            status = "step below tolerance".to_owned();
            break;
        }
        if !accepted {
            status = "no decrease found (damping limit)".to_owned();
            break;
        }
    }

    let (theta, mu) = split(&x);
    let model = data.model_revenues(&theta, mu);
    let ssr: f64 = model.iter().zip(&observed).map(|(m, o)| (m - o).powi(2)).sum();
    let dof = n.saturating_sub(dim).max(1);
    if !converged {
        log::warn!("nested CES fit not converged after {iterations} iterations: {status}");
    }
    Ok(FitResult {
        theta,
        mu,
        converged,
        status,
        iterations,
        residual_standard_error: (ssr / dof as f64).sqrt(),
        fitted_revenues: data.observed_revenues.keys().cloned().zip(model).collect(),
        log,
    })
}
