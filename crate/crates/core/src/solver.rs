//! Damped Newton iteration for small nonlinear systems.

use nalgebra::DVector;

use crate::numeric::jacobian;

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonConfig {
    /// Stop when the residual ∞-norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Absolute step for the central-difference Jacobian.
    pub fd_step: f64,
    /// Iterates are clamped componentwise to stay above this bound.
    pub lower_bound: Option<f64>,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tolerance: 1e-10,
            max_iterations: 200,
            fd_step: 1e-6,
            lower_bound: None,
            max_halvings: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `f(x) = 0` from `x0`.
///
/// `f` returns `None` outside its domain; such points are rejected by the
/// line search, which halves the Newton step until the residual norm drops.
pub fn newton(
    f: impl Fn(&DVector<f64>) -> Option<DVector<f64>>,
    x0: DVector<f64>,
    config: &NewtonConfig,
) -> NewtonOutcome {
    let clamp = |mut x: DVector<f64>| {
        if let Some(lb) = config.lower_bound {
            x.iter_mut().for_each(|v| *v = v.max(lb));
        }
        x
    };
    let norm = |r: &DVector<f64>| r.amax();
    let mut x = clamp(x0);
    let Some(mut r) = f(&x) else {
        return NewtonOutcome {
            residual_norm: f64::INFINITY,
            x,
            iterations: 0,
            converged: false,
        };
    };
    let mut res = norm(&r);
    let mut iterations = 0;
    while res >= config.tolerance && iterations < config.max_iterations {
        iterations += 1;
        let jac = jacobian(
            |v| f(v).unwrap_or_else(|| DVector::from_element(v.len(), f64::NAN)),
            &x,
            config.fd_step,
        );
        if jac.iter().any(|v| !v.is_finite()) {
            break;
        }
        let Some(step) = jac.lu().solve(&(-&r)) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=config.max_halvings {
            let trial = clamp(&x + &step * t);
            if let Some(rt) = f(&trial) {
                let nt = norm(&rt);
                if nt.is_finite() && nt < res {
                    x = trial;
                    r = rt;
                    res = nt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    NewtonOutcome {
        converged: res < config.tolerance,
        x,
        residual_norm: res,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_nonlinear_pair() {
        // x^2 + y^2 = 4, x = y  ->  (√2, √2)
        let f = |v: &DVector<f64>| Some(DVector::from_vec(vec![v[0] * v[0] + v[1] * v[1] - 4.0, v[0] - v[1]]));
        let out = newton(f, DVector::from_vec(vec![1.0, 0.5]), &NewtonConfig::default());
        assert!(out.converged);
        assert!((out.x[0] - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn respects_domain() {
        // log(1 + x) = 0.5 with domain x > -1
        let f = |v: &DVector<f64>| (v[0] > -1.0).then(|| DVector::from_element(1, (1.0 + v[0]).ln() - 0.5));
        let cfg = NewtonConfig {
            lower_bound: Some(-0.99),
            ..Default::default()
        };
        let out = newton(f, DVector::from_element(1, 3.0), &cfg);
        assert!(out.converged);
        assert!((out.x[0] - (0.5f64.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn reports_failure() {
        let f = |v: &DVector<f64>| Some(DVector::from_element(1, v[0] * v[0] + 1.0));
        let out = newton(f, DVector::from_element(1, 0.3), &NewtonConfig::default());
        assert!(!out.converged);
    }
}
