use indexmap::IndexMap;

use super::economy::{CesEconomy, ConsumerShares, ShareTable};
use crate::error::{Error, Result};
use crate::market::ProductId;

/// CES economy with a two-level nest structure and a common nesting parameter.
/// The outside option forms its own nest with parameter 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedCesEconomy {
    pub economy: CesEconomy,
    pub nests: IndexMap<ProductId, String>,
    /// `μ ∈ (0, 1]`; `μ = 1` is plain CES.
    pub mu: f64,
}

impl NestedCesEconomy {
    pub fn new(economy: CesEconomy, nests: IndexMap<ProductId, String>, mu: f64) -> Result<Self> {
        let e = NestedCesEconomy { economy, nests, mu };
        e.check()?;
        Ok(e)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::invalid(format!("nesting parameter must lie in (0, 1], got {}", self.mu)));
        }
        for j in self.economy.products() {
            if !self.nests.contains_key(&j) {
                return Err(Error::invalid(format!("product {j} has no nest")));
            }
        }
        Ok(())
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Shares of a single consumer given utilities over its consideration set.
pub(crate) fn nested_consumer_shares(
    utilities: &IndexMap<ProductId, f64>,
    nests: &IndexMap<ProductId, String>,
    mu: f64,
) -> IndexMap<ProductId, f64> {
    // Inclusive values I_b = log Σ_{l∈b} exp(u_l / μ).
    let mut members: IndexMap<&str, Vec<f64>> = IndexMap::new();
    for (j, u) in utilities {
        if !j.is_outside() {
            members.entry(nests[j].as_str()).or_default().push(u / mu);
        }
    }
    let inclusive: IndexMap<&str, f64> = members.iter().map(|(b, v)| (*b, log_sum_exp(v))).collect();
    let outside_u = utilities.get(&ProductId::outside()).copied().unwrap_or(f64::NEG_INFINITY);
    let mut top: Vec<f64> = inclusive.values().map(|i| mu * i).collect();
    top.push(outside_u);
    let denom = log_sum_exp(&top);
    utilities
        .iter()
        .map(|(j, u)| {
            let a = if j.is_outside() {
                (outside_u - denom).exp()
            } else {
                let i_b = inclusive[nests[j].as_str()];
                (mu * i_b - denom).exp() * (u / mu - i_b).exp()
            };
            (j.clone(), a)
        })
        .collect()
}

/// Two-level softmax `α_ij = s_b · s_{j|b}` for every consumer.
pub fn nested_shares(economy: &NestedCesEconomy) -> Result<ShareTable> {
    economy.check()?;
    Ok(ShareTable {
        consumers: economy
            .economy
            .consumers
            .iter()
            .map(|c| ConsumerShares {
                id: c.id.clone(),
                budget: c.budget,
                weight: c.weight,
                shares: nested_consumer_shares(&c.utilities, &economy.nests, economy.mu),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ces::shares;
    use approx::assert_relative_eq;

    fn fixture(mu: f64) -> NestedCesEconomy {
        let u: IndexMap<ProductId, f64> =
            [("s1", 0.5), ("s2", 0.2), ("s3", -0.1)].into_iter().map(|(k, v)| (ProductId::from(k), v)).collect();
        let nests = [("s1", "big"), ("s2", "big"), ("s3", "small")]
            .into_iter()
            .map(|(k, v)| (ProductId::from(k), v.to_owned()))
            .collect();
        NestedCesEconomy::new(CesEconomy::single(1.0, u, 3.0).unwrap(), nests, mu).unwrap()
    }

    #[test]
    fn mu_one_is_plain_ces() {
        let e = fixture(1.0);
        let a = nested_shares(&e).unwrap();
        let b = shares(&e.economy);
        for (j, v) in &b.consumers[0].shares {
            assert_relative_eq!(a.consumers[0].shares[j], *v, epsilon = 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_level_softmax() {
        let mu = 0.5;
        let a = nested_shares(&fixture(mu)).unwrap();
        let s = &a.consumers[0].shares;
        let e1 = (0.5f64 / mu).exp();
        let e2 = (0.2f64 / mu).exp();
        let e3 = (-0.1f64 / mu).exp();
        let big = (e1 + e2).powf(mu);
        let small = e3.powf(mu);
        let denom = 1.0 + big + small;
        assert_relative_eq!(s[&ProductId::from("s1")], big / denom * e1 / (e1 + e2), epsilon = 1e-14);
        assert_relative_eq!(s[&ProductId::from("s3")], small / denom, epsilon = 1e-14);
        assert_relative_eq!(s[&ProductId::outside()], 1.0 / denom, epsilon = 1e-14);
        assert_relative_eq!(s.values().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn small_mu_concentrates_within_nest() {
        let a = nested_shares(&fixture(1e-3)).unwrap();
        let s = &a.consumers[0].shares;
        assert!(s[&ProductId::from("s2")] < 1e-100);
        assert!(s[&ProductId::from("s1")] > 0.3);
    }

    #[test]
    fn rejects_bad_mu() {
        let e = fixture(1.0);
        assert!(NestedCesEconomy::new(e.economy.clone(), e.nests.clone(), 0.0).is_err());
        assert!(NestedCesEconomy::new(e.economy.clone(), e.nests.clone(), 1.5).is_err());
    }
}
