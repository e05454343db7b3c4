use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::primitives::SyntheticPrimitives;
use crate::error::{Error, Result};
use crate::market::{FirmId, Market, MergerSpec, Product, ProductId, RevenueDiversionMatrix};
use crate::solver::{newton, NewtonConfig};

/// Solved Bertrand-Nash equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Equilibrium {
    pub prices: Vec<f64>,
    pub costs: Vec<f64>,
    pub owners: Vec<FirmId>,
    pub quantities: Vec<f64>,
    pub margins: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// FOC residuals in margin form,
/// `[q_j + Σ_{l∈F} (p_l - c_l) ∂q_l/∂p_j] / (-p_j ∂q_j/∂p_j)`,
/// which equals `-1/ε_jj - m_j + Σ_{l∈F\j} m_l D_{j->l} p_l/p_j`.
pub fn foc_residual(prim: &SyntheticPrimitives, prices: &[f64], owners: &[FirmId], costs: &[f64]) -> Vec<f64> {
    let n = prim.len();
    let q = prim.quantities(prices);
    let jac = prim.demand_jacobian(prices);
    (0..n)
        .map(|j| {
            let s: f64 = (0..n)
                .filter(|&l| owners[l] == owners[j])
                .map(|l| (prices[l] - costs[l]) * jac[(l, j)])
                .sum();
            (q[j] + s) / (-prices[j] * jac[(j, j)])
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped margin-form fixed point followed by a Newton polish in log prices.
pub fn solve_equilibrium(
    prim: &SyntheticPrimitives,
    owners: &[FirmId],
    costs: &[f64],
    start: &[f64],
) -> Result<Equilibrium> {
    prim.check()?;
    let n = prim.len();
    let mut p = start.to_vec();
    let mut iterations = 0;
    for _ in 0..2000 {
        iterations += 1;
        let r = foc_residual(prim, &p, owners, costs);
        if r.iter().any(|v| !v.is_finite()) {
            break;
        }
        if max_abs(&r) < 1e-8 {
            break;
        }
        for j in 0..n {
            let m = (p[j] - costs[j]) / p[j];
            let target = (m + r[j]).min(0.99);
            let implied = costs[j] / (1.0 - target);
            p[j] = 0.5 * p[j] + 0.5 * implied.max(1e-6 * costs[j]);
        }
    }
    let f = |x: &DVector<f64>| {
        let p: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let r = foc_residual(prim, &p, owners, costs);
        r.iter().all(|v| v.is_finite()).then(|| DVector::from_vec(r))
    };
    let cfg = NewtonConfig::default();
    let out = newton(f, DVector::from_iterator(n, p.iter().map(|v| v.ln())), &cfg);
    iterations += out.iterations;
    if !out.converged {
        return Err(Error::NonConvergence(format!(
            "Bertrand equilibrium: residual {:.3e} after {iterations} iterations",
            out.residual_norm
        )));
    }
    let prices: Vec<f64> = out.x.iter().map(|v| v.exp()).collect();
    let quantities = prim.quantities(&prices);
    let margins = prices.iter().zip(costs).map(|(p, c)| (p - c) / p).collect();
    Ok(Equilibrium {
        residual_norm: max_abs(&foc_residual(prim, &prices, owners, costs)),
        prices,
        costs: costs.to_vec(),
        owners: owners.to_vec(),
        quantities,
        margins,
        iterations,
    })
}

/// Pre-merger equilibrium, started from a 50% markup over cost.
pub fn solve_pre_merger_equilibrium(prim: &SyntheticPrimitives) -> Result<Equilibrium> {
    let start: Vec<f64> = prim.costs.iter().map(|c| 1.5 * c).collect();
    solve_equilibrium(prim, &prim.owners, &prim.costs, &start)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PostMergerOutcome {
    pub equilibrium: Equilibrium,
    /// `(p^post - p^pre)/p^pre` per product.
    pub p_dd: Vec<f64>,
}

/// Post-merger equilibrium under merged ownership, with marginal costs
/// scaled by `1 + c̈` for products carrying efficiencies.
pub fn solve_post_merger_equilibrium(
    prim: &SyntheticPrimitives,
    merger: &MergerSpec,
    pre: &Equilibrium,
) -> Result<PostMergerOutcome> {
    let owners: Vec<FirmId> = prim.owners.iter().map(|f| merger.post_merger_owner(f)).collect();
    let costs: Vec<f64> = prim
        .products
        .iter()
        .zip(&prim.costs)
        .map(|(j, c)| c * (1.0 + merger.efficiency(j)))
        .collect();
    let equilibrium = solve_equilibrium(prim, &owners, &costs, &pre.prices)?;
    let p_dd = equilibrium.prices.iter().zip(&pre.prices).map(|(a, b)| a / b - 1.0).collect();
    Ok(PostMergerOutcome { equilibrium, p_dd })
}

impl Equilibrium {
    /// Observable market: revenues and relative margins only.
    pub fn market(&self, prim: &SyntheticPrimitives) -> Result<Market> {
        Market::new(
            prim.products
                .iter()
                .zip(&self.owners)
                .enumerate()
                .map(|(j, (id, f))| Product {
                    id: id.clone(),
                    firm: f.clone(),
                    revenue: self.prices[j] * self.quantities[j],
                    margin: self.margins[j],
                })
                .collect(),
        )
    }

    /// Quantity diversion `D_{j->k} = -(∂q_k/∂p_j)/(∂q_j/∂p_j)`.
    pub fn quantity_diversion(&self, prim: &SyntheticPrimitives) -> DMatrix<f64> {
        let jac = prim.demand_jacobian(&self.prices);
        DMatrix::from_fn(prim.len(), prim.len(), |j, k| -jac[(k, j)] / jac[(j, j)])
    }

    /// Revenue diversion `D^R_{j->k} = -p_k ∂q_k/∂p_j / (q_j + p_j ∂q_j/∂p_j)`.
    pub fn revenue_diversion(&self, prim: &SyntheticPrimitives) -> Result<RevenueDiversionMatrix> {
        let jac = prim.demand_jacobian(&self.prices);
        let (p, q) = (&self.prices, &self.quantities);
        let values = DMatrix::from_fn(prim.len(), prim.len(), |j, k| {
            if j == k {
                -1.0
            } else {
                -p[k] * jac[(k, j)] / (q[j] + p[j] * jac[(j, j)])
            }
        });
        RevenueDiversionMatrix::new(prim.products.clone(), values)
    }

    /// Own-price elasticities of demand `ε_jj`.
    pub fn elasticities(&self, prim: &SyntheticPrimitives) -> Vec<f64> {
        let jac = prim.demand_jacobian(&self.prices);
        (0..prim.len()).map(|j| jac[(j, j)] * self.prices[j] / self.quantities[j]).collect()
    }

    /// GUPPI from prices, costs and quantity diversions:
    /// `[c̈_j c_j + Σ_{k∈partner} D_{j->k} (p_k - c_k)] / p_j`.
    pub fn direct_guppi(&self, prim: &SyntheticPrimitives, merger: &MergerSpec) -> Vec<(ProductId, f64)> {
        let d = self.quantity_diversion(prim);
        let n = prim.len();
        (0..n)
            .filter(|&j| merger.is_merging(&self.owners[j]))
            .map(|j| {
                let partner = merger.counterparty(&self.owners[j]);
                let s: f64 = (0..n)
                    .filter(|&k| Some(&self.owners[k]) == partner)
                    .map(|k| d[(j, k)] * (self.prices[k] - self.costs[k]))
                    .sum();
                let id = &prim.products[j];
                (id.clone(), (merger.efficiency(id) * self.costs[j] + s) / self.prices[j])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::primitives::{CesConsumerPrimitives, Demand};

    fn ces(budgets_quality: Vec<(f64, Vec<f64>)>, costs: Vec<f64>, eta: f64) -> SyntheticPrimitives {
        let n = costs.len();
        SyntheticPrimitives {
            products: (0..n).map(|j| ProductId::new(format!("p{j}"))).collect(),
            owners: (0..n).map(|j| FirmId::new(format!("F{j}"))).collect(),
            costs,
            demand: Demand::Ces {
                eta,
                consumers: budgets_quality
                    .into_iter()
                    .map(|(budget, quality)| CesConsumerPrimitives { budget, quality })
                    .collect(),
            },
        }
    }

    #[test]
    fn monopolist_satisfies_lerner() {
        let prim = ces(vec![(1.0, vec![2.0])], vec![1.0], 5.0);
        let eq = solve_pre_merger_equilibrium(&prim).unwrap();
        let alpha = prim.consumer_shares(&eq.prices)[0][0];
        let eps = (1.0 - alpha) * (1.0 - 5.0) - 1.0;
        assert!((eq.margins[0] + 1.0 / eps).abs() < 1e-10);
    }

    #[test]
    fn symmetric_duopoly_has_equal_prices() {
        let prim = ces(vec![(1.0, vec![1.0, 1.0])], vec![1.0, 1.0], 4.0);
        let eq = solve_pre_merger_equilibrium(&prim).unwrap();
        assert!((eq.prices[0] - eq.prices[1]).abs() < 1e-10);
        let merger = MergerSpec::new("F0", "F1");
        let post = solve_post_merger_equilibrium(&prim, &merger, &eq).unwrap();
        assert!(post.p_dd[0] > 0.0 && (post.p_dd[0] - post.p_dd[1]).abs() < 1e-9);
    }

    #[test]
    fn random_four_product_market_solves() {
        let prim = ces(
            vec![(1.0, vec![1.0, 0.4, 2.0, 0.7]), (3.0, vec![0.2, 1.5, 0.9, 1.1])],
            vec![0.6, 1.4, 1.0, 0.9],
            3.5,
        );
        let eq = solve_pre_merger_equilibrium(&prim).unwrap();
        assert!(eq.residual_norm < 1e-10);
        let merger = MergerSpec::new("F8", "F9");
        assert!(!merger.is_merging(&eq.owners[0]));
        let post = solve_post_merger_equilibrium(&prim, &merger, &eq).unwrap();
        assert!(post.p_dd.iter().all(|v| v.abs() < 1e-9));
    }
}
