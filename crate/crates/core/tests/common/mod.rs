//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod props;

use indexmap::IndexMap;
use nalgebra::{DMatrix, Matrix2, Vector2};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use uppkit::ces::{CesEconomy, Consumer};
use uppkit::harness::{Demand, SyntheticPrimitives};
use uppkit::passthrough::PassthroughInputs;
use uppkit::ProductId;

pub const BUDGET: f64 = 2.05e9;
pub const ALPHA: [f64; 2] = [0.473, 0.316];
pub const MARGIN: [f64; 2] = [0.258, 0.234];

pub fn id(s: &str) -> ProductId {
    ProductId::from(s)
}

/// Runner with a fixed seed so every run sees the same cases.
pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

/// `n` draws from `strategy` with a fixed seed.
pub fn sample<S: Strategy>(strategy: S, n: usize) -> Vec<S::Value> {
    let mut r = runner(n as u32);
    (0..n).map(|_| strategy.new_tree(&mut r).unwrap().current()).collect()
}

/// Random CES economies: 2 to 5 products, 1 to 4 consumers, every consumer
/// considering a random nonempty subset.
pub fn economy_strategy() -> impl Strategy<Value = CesEconomy> {
    (2usize..=5, 1usize..=4, 1.5f64..9.0).prop_flat_map(|(n, c, eta)| {
        let consumer = (
            0.5f64..3.0,
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(prop::bool::weighted(0.8), n),
        );
        prop::collection::vec(consumer, c).prop_map(move |rows| {
            let consumers = rows
                .into_iter()
                .enumerate()
                .map(|(i, (budget, u, keep))| {
                    let mut utilities: IndexMap<ProductId, f64> = IndexMap::new();
                    for j in 0..n {
                        if keep[j] || j == i % n {
                            utilities.insert(ProductId::new(format!("p{j}")), u[j]);
                        }
                    }
                    Consumer::new(format!("c{i}"), budget, 1.0, utilities)
                })
                .collect();
            CesEconomy::new(consumers, eta).unwrap()
        })
    })
}

/// Single-consumer economies over every product.
pub fn single_consumer_strategy() -> impl Strategy<Value = CesEconomy> {
    (prop::collection::vec(-2.0f64..2.0, 2..=5), 0.5f64..3.0, 1.5f64..9.0).prop_map(|(u, budget, eta)| {
        let utilities = u
            .iter()
            .enumerate()
            .map(|(j, v)| (ProductId::new(format!("p{j}")), *v))
            .collect();
        CesEconomy::single(budget, utilities, eta).unwrap()
    })
}

/// Pass-through matrix by implicit differentiation of the merging firms'
/// FOCs, solved numerically.
///
/// The FOC system is rebuilt from the single-consumer primitives: shares
/// follow the softmax under utility shifts `(1-η)Δ_j`, margins follow
/// `1-(1-m)e^{-Δ}`, diversion is `α_k/(1-α_j)` and elasticities move with
/// `(1-η)(1-α_j)` from their supplied level. A cost-like shock `t` is added
/// to the FOCs, the system is re-solved at `t = ±τ e_k`, and column `k` of
/// `M = dΔ/dt` is the central difference.
pub fn passthrough_oracle(inputs: &PassthroughInputs) -> [[f64; 2]; 2] {
    let eta = inputs.eta;
    let a0 = 1.0 - inputs.alpha[0] - inputs.alpha[1];
    let u0 = [(inputs.alpha[0] / a0).ln(), (inputs.alpha[1] / a0).ln()];
    let h = |d: Vector2<f64>| -> Vector2<f64> {
        let e = [
            (u0[0] + (1.0 - eta) * d[0]).exp(),
            (u0[1] + (1.0 - eta) * d[1]).exp(),
        ];
        let denom = 1.0 + e[0] + e[1];
        let a = [e[0] / denom, e[1] / denom];
        let mut out = Vector2::zeros();
        for (j, k) in [(0, 1), (1, 0)] {
            let eps = inputs.eps[j] + (1.0 - eta) * (inputs.alpha[j] - a[j]);
            let m_j = 1.0 - (1.0 - inputs.margin[j]) * (-d[j]).exp();
            let m_k = 1.0 - (1.0 - inputs.margin[k]) * (-d[k]).exp();
            let div = a[k] / (1.0 - a[j]);
            out[j] = -1.0 / eps - m_j + (1.0 + 1.0 / eps) * m_k * div;
        }
        out
    };
    let h0 = h(Vector2::zeros());
    let solve = |t: Vector2<f64>| -> Vector2<f64> {
        let mut d = Vector2::zeros();
        for _ in 0..50 {
            let r = h(d) + t - h0;
            if r.amax() < 1e-15 {
                break;
            }
            let step = 1e-7;
            let mut jac = Matrix2::zeros();
            for c in 0..2 {
                let mut dp = d;
                let mut dm = d;
                dp[c] += step;
                dm[c] -= step;
                jac.set_column(c, &((h(dp) - h(dm)) / (2.0 * step)));
            }
            d -= jac.lu().solve(&r).expect("regular FOC Jacobian");
        }
        d
    };
    let tau = 1e-5;
    let mut m = [[0.0; 2]; 2];
    for k in 0..2 {
        let mut t = Vector2::zeros();
        t[k] = tau;
        let col = (solve(t) - solve(-t)) / (2.0 * tau);
        m[0][k] = col[0];
        m[1][k] = col[1];
    }
    m
}

/// `∂R_j/∂p_k` written directly from the demand primitives.
pub fn revenue_jacobian(prim: &SyntheticPrimitives, p: &[f64]) -> DMatrix<f64> {
    let n = prim.len();
    let shares = prim.consumer_shares(p);
    let delta = |j: usize, k: usize| if j == k { 1.0 } else { 0.0 };
    match &prim.demand {
        Demand::Ces { eta, consumers } => DMatrix::from_fn(n, n, |j, k| {
            consumers
                .iter()
                .zip(&shares)
                .map(|(c, s)| c.budget * (1.0 - eta) * s[j] * (delta(j, k) - s[k]) / p[k])
                .sum()
        }),
        Demand::Logit {
            price_coefficient,
            mass,
            ..
        } => {
            let s = &shares[0];
            DMatrix::from_fn(n, n, |j, k| {
                mass * (delta(j, k) * s[j] - p[j] * price_coefficient * s[j] * (delta(j, k) - s[k]))
            })
        }
    }
}

/// Central-difference Jacobian of `f` at `p` with relative steps.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, p: &[f64]) -> DMatrix<f64> {
    let n = p.len();
    let m = f(p).len();
    let mut jac = DMatrix::zeros(m, n);
    for k in 0..n {
        let h = 1e-6 * p[k].abs().max(1.0);
        let mut up = p.to_vec();
        let mut dn = p.to_vec();
        up[k] += h;
        dn[k] -= h;
        let (fu, fd) = (f(&up), f(&dn));
        for j in 0..m {
            jac[(j, k)] = (fu[j] - fd[j]) / (2.0 * h);
        }
    }
    jac
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
