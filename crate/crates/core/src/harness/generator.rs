use rand::Rng;
use serde::{Deserialize, Serialize};

use super::primitives::{CesConsumerPrimitives, Demand, DemandModel, SyntheticPrimitives};
use crate::error::{Error, Result};
use crate::market::{FirmId, ProductId};

/// Sampling ranges for random markets. Every firm sells one product and the
/// first two firms merge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub model: DemandModel,
    pub n_markets: usize,
    pub seed: u64,
    pub n_firms: (usize, usize),
    pub outside_share: (f64, f64),
    pub eta: (f64, f64),
    /// Marginal costs are log-uniform on this range.
    pub cost: (f64, f64),
    pub logit_price_coefficient: (f64, f64),
    /// CES consumers per market; more than one draws heterogeneous tastes.
    pub consumers: usize,
    /// Worker threads; `None` reads `UPPKIT_THREADS`, else uses all cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            model: DemandModel::Ces,
            n_markets: 200,
            seed: 7,
            n_firms: (2, 6),
            outside_share: (0.1, 0.6),
            eta: (3.0, 9.0),
            cost: (0.5, 2.0),
            logit_price_coefficient: (1.0, 4.0),
            consumers: 1,
            threads: None,
        }
    }
}

impl HarnessConfig {
    pub fn new(model: DemandModel, n_markets: usize, seed: u64) -> Self {
        HarnessConfig {
            model,
            n_markets,
            seed,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a < b;
        if !(self.n_firms.0 >= 2 && self.n_firms.0 <= self.n_firms.1) {
            return Err(Error::invalid("n_firms range must start at 2 or more and be ordered"));
        }
        if !ordered(self.outside_share) || self.outside_share.0 <= 0.0 || self.outside_share.1 >= 1.0 {
            return Err(Error::invalid("outside share range must be an ordered subrange of (0, 1)"));
        }
        if !ordered(self.eta) || self.eta.0 <= 1.0 {
            return Err(Error::invalid("eta range must be ordered and above 1"));
        }
        if !ordered(self.cost) || self.cost.0 <= 0.0 {
            return Err(Error::invalid("cost range must be ordered and positive"));
        }
        if !ordered(self.logit_price_coefficient) || self.logit_price_coefficient.0 <= 0.0 {
            return Err(Error::invalid("price coefficient range must be ordered and positive"));
        }
        if self.consumers == 0 {
            return Err(Error::invalid("need at least one consumer"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (a, b): (f64, f64)) -> f64 {
    a + (b - a) * rng.random::<f64>()
}

/// Flat Dirichlet draw via normalized exponentials.
fn dirichlet(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Draws a market whose pre-merger equilibrium has the sampled shares.
///
/// Shares and costs are drawn first; single-product Lerner margins then give
/// equilibrium prices, and qualities (CES) or mean utilities (logit) are set
/// to rationalize the shares at those prices. With several CES consumers the
/// qualities are perturbed per consumer, so shares are only approximate.
pub fn generate_market(config: &HarnessConfig, rng: &mut impl Rng) -> SyntheticPrimitives {
    let n = rng.random_range(config.n_firms.0..=config.n_firms.1);
    let outside = uniform(rng, config.outside_share);
    let shares: Vec<f64> = dirichlet(rng, n).into_iter().map(|s| s * (1.0 - outside)).collect();
    let (lo, hi) = (config.cost.0.ln(), config.cost.1.ln());
    let costs: Vec<f64> = (0..n).map(|_| uniform(rng, (lo, hi)).exp()).collect();
    let products = (0..n).map(|j| ProductId::new(format!("p{}", j + 1))).collect();
    let owners = (0..n).map(|j| FirmId::new(format!("F{}", j + 1))).collect();
    let demand = match config.model {
        DemandModel::Ces => {
            let eta = uniform(rng, config.eta);
            let prices: Vec<f64> = shares
                .iter()
                .zip(&costs)
                .map(|(s, c)| c / (1.0 - 1.0 / (1.0 + (1.0 - s) * (eta - 1.0))))
                .collect();
            // α_j/α_0 = β_j p_j^{1-η}.
            let base: Vec<f64> = shares.iter().zip(&prices).map(|(s, p)| s / outside * p.powf(eta - 1.0)).collect();
            let consumers = if config.consumers == 1 {
                vec![CesConsumerPrimitives { budget: 1.0, quality: base }]
            } else {
                (0..config.consumers)
                    .map(|_| CesConsumerPrimitives {
                        budget: uniform(rng, (0.5, 1.5)),
                        quality: base.iter().map(|b| b * (0.5 * (2.0 * rng.random::<f64>() - 1.0)).exp()).collect(),
                    })
                    .collect()
            };
            Demand::Ces { eta, consumers }
        }
        DemandModel::Logit => {
            let a = uniform(rng, config.logit_price_coefficient);
            // p_j - c_j = 1/(a(1 - s_j)) and δ_j = log(s_j/s_0) + a p_j.
            let mean_utility = shares
                .iter()
                .zip(&costs)
                .map(|(s, c)| (s / outside).ln() + a * (c + 1.0 / (a * (1.0 - s))))
                .collect();
            Demand::Logit {
                price_coefficient: a,
                mean_utility,
                mass: 1.0,
            }
        }
    };
    SyntheticPrimitives {
        products,
        owners,
        costs,
        demand,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::equilibrium::solve_pre_merger_equilibrium;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_markets_rationalize_their_shares() {
        for model in [DemandModel::Ces, DemandModel::Logit] {
            let config = HarnessConfig::new(model, 1, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..20 {
                let prim = generate_market(&config, &mut rng);
                prim.check().unwrap();
                let eq = solve_pre_merger_equilibrium(&prim).unwrap();
                let s = &prim.consumer_shares(&eq.prices)[0];
                let outside = s[prim.len()];
                assert!(outside >= 0.1 - 1e-9 && outside <= 0.6 + 1e-9, "{outside}");
                assert!(eq.margins.iter().all(|m| *m > 0.0 && *m < 1.0));
            }
        }
    }

    #[test]
    fn rejects_degenerate_ranges() {
        let mut c = HarnessConfig::default();
        c.eta = (5.0, 5.0);
        assert!(c.check().is_err());
        let mut c = HarnessConfig::default();
        c.n_firms = (1, 3);
        assert!(c.check().is_err());
    }
}
