use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ces::{CesEconomy, Consumer, ConsumerShares, ShareTable};
use crate::error::{Error, Result};
use crate::market::{FirmId, ProductId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandModel {
    Ces,
    Logit,
}

impl fmt::Display for DemandModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DemandModel::Ces => "ces",
            DemandModel::Logit => "logit",
        })
    }
}

impl FromStr for DemandModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ces" => Ok(DemandModel::Ces),
            "logit" => Ok(DemandModel::Logit),
            other => Err(Error::invalid(format!("unknown demand model `{other}` (expected ces or logit)"))),
        }
    }
}

/// One CES consumer: budget and product qualities `β_ij`. The outside good
/// has quality 1 and price 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CesConsumerPrimitives {
    pub budget: f64,
    pub quality: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Demand {
    Ces {
        eta: f64,
        consumers: Vec<CesConsumerPrimitives>,
    },
    /// `u_j = δ_j - a p_j`, outside utility 0, a mass of consumers buying one unit.
    Logit {
        price_coefficient: f64,
        mean_utility: Vec<f64>,
        mass: f64,
    },
}

/// Ground-truth market with observable prices, costs and demand.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticPrimitives {
    pub products: Vec<ProductId>,
    pub owners: Vec<FirmId>,
    pub costs: Vec<f64>,
    pub demand: Demand,
}

impl SyntheticPrimitives {
    pub fn model(&self) -> DemandModel {
        match self.demand {
            Demand::Ces { .. } => DemandModel::Ces,
            Demand::Logit { .. } => DemandModel::Logit,
        }
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::NoProducts);
        }
        if self.owners.len() != n || self.costs.len() != n {
            return Err(Error::DimensionMismatch("owners and costs must match products".to_owned()));
        }
        if self.costs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("marginal costs must be positive"));
        }
        match &self.demand {
            Demand::Ces { eta, consumers } => {
                if !(*eta > 1.0) {
                    return Err(Error::invalid(format!("eta must exceed 1, got {eta}")));
                }
                if consumers.is_empty() {
                    return Err(Error::invalid("CES demand needs at least one consumer"));
                }
                for c in consumers {
                    if c.quality.len() != n || c.quality.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
                        return Err(Error::invalid("qualities must be positive, one per product"));
                    }
                    if !(c.budget > 0.0) {
                        return Err(Error::invalid("budgets must be positive"));
                    }
                }
            }
            Demand::Logit { price_coefficient, mean_utility, mass } => {
                if !(*price_coefficient > 0.0) || !(*mass > 0.0) || mean_utility.len() != n {
                    return Err(Error::invalid("logit needs a positive price coefficient and mass, one δ per product"));
                }
            }
        }
        Ok(())
    }

    fn softmax_with_outside(u: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut v: Vec<f64> = u.collect();
        v.push(0.0);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    /// Per-consumer shares at prices `p` with the outside option last
    /// (expenditure shares for CES, choice probabilities for logit).
    pub fn consumer_shares(&self, p: &[f64]) -> Vec<Vec<f64>> {
        match &self.demand {
            Demand::Ces { eta, consumers } => consumers
                .iter()
                .map(|c| Self::softmax_with_outside(c.quality.iter().zip(p).map(|(b, p)| b.ln() + (1.0 - eta) * p.ln())))
                .collect(),
            Demand::Logit {
                price_coefficient,
                mean_utility,
                ..
            } => vec![Self::softmax_with_outside(
                mean_utility.iter().zip(p).map(|(d, p)| d - price_coefficient * p),
            )],
        }
    }

    fn masses(&self) -> Vec<f64> {
        match &self.demand {
            Demand::Ces { consumers, .. } => consumers.iter().map(|c| c.budget).collect(),
            Demand::Logit { mass, .. } => vec![*mass],
        }
    }

    pub fn revenues(&self, p: &[f64]) -> Vec<f64> {
        self.quantities(p).iter().zip(p).map(|(q, p)| q * p).collect()
    }

    pub fn quantities(&self, p: &[f64]) -> Vec<f64> {
        let shares = self.consumer_shares(p);
        let masses = self.masses();
        (0..self.len())
            .map(|j| {
                let total: f64 = shares.iter().zip(&masses).map(|(s, m)| m * s[j]).sum();
                match self.demand {
                    Demand::Ces { .. } => total / p[j],
                    Demand::Logit { .. } => total,
                }
            })
            .collect()
    }

    /// `∂q_j/∂p_k` at `p`, analytic.
    pub fn demand_jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.len();
        let shares = self.consumer_shares(p);
        let masses = self.masses();
        let mut jac = DMatrix::zeros(n, n);
        match &self.demand {
            Demand::Ces { eta, .. } => {
                // R_j = Σ_i B_i α_ij, ∂α_ij/∂p_k = (1-η) α_ij (δ_jk - α_ik)/p_k, q_j = R_j/p_j.
                for (s, b) in shares.iter().zip(&masses) {
                    for j in 0..n {
                        for k in 0..n {
                            let delta = if j == k { 1.0 } else { 0.0 };
                            let d_rev = b * (1.0 - eta) * s[j] * (delta - s[k]) / p[k];
                            jac[(j, k)] += d_rev / p[j] - delta * b * s[j] / (p[j] * p[j]);
                        }
                    }
                }
            }
            Demand::Logit { price_coefficient, .. } => {
                let s = &shares[0];
                for j in 0..n {
                    for k in 0..n {
                        let delta = if j == k { 1.0 } else { 0.0 };
                        jac[(j, k)] = -price_coefficient * masses[0] * s[j] * (delta - s[k]);
                    }
                }
            }
        }
        jac
    }

    /// CES economy at prices `p`: `u_ij = log β_ij + (1-η) log p_j`.
    pub fn ces_economy(&self, p: &[f64]) -> Option<CesEconomy> {
        let Demand::Ces { eta, consumers } = &self.demand else {
            return None;
        };
        let consumers = consumers
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let u: IndexMap<ProductId, f64> = self
                    .products
                    .iter()
                    .zip(c.quality.iter().zip(p))
                    .map(|(j, (b, p))| (j.clone(), b.ln() + (1.0 - eta) * p.ln()))
                    .collect();
                Consumer::new(format!("c{i}"), c.budget, 1.0, u)
            })
            .collect();
        CesEconomy::new(consumers, *eta).ok()
    }

    /// Per-consumer expenditure shares at `p` (CES only).
    pub fn share_table(&self, p: &[f64]) -> Option<ShareTable> {
        let Demand::Ces { consumers, .. } = &self.demand else {
            return None;
        };
        let rows = self
            .consumer_shares(p)
            .into_iter()
            .zip(consumers)
            .enumerate()
            .map(|(i, (s, c))| {
                let mut shares: IndexMap<ProductId, f64> =
                    self.products.iter().cloned().zip(s.iter().copied()).collect();
                shares.insert(ProductId::outside(), s[self.len()]);
                ConsumerShares {
                    id: format!("c{i}"),
                    budget: c.budget,
                    weight: 1.0,
                    shares,
                }
            })
            .collect();
        ShareTable::new(rows).ok()
    }
}
