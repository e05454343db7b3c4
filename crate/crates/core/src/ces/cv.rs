use indexmap::IndexMap;
use serde::Serialize;

use super::economy::CesEconomy;
use crate::error::{Error, Result};
use crate::market::ProductId;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompensatingVariation {
    /// Budget each consumer needs on top of `B_i` to keep pre-change utility;
    /// positive for a loss.
    pub per_consumer: IndexMap<String, f64>,
    /// Weighted sum over consumers.
    pub total: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Exact compensating variation of the price changes `p_dd` under CES utility.
///
/// Post-change utilities are `u^1 = u^0 + (1-η) log(1 + p̈)`, and the CES price
/// index is `P(u) ∝ (Σ exp u)^{1/(1-η)}`, so
/// `CV_i = B_i (1 - (Σ exp u^0 / Σ exp u^1)^{1/(1-η)})`.
/// Products absent from `p_dd` (and the outside option) keep their prices.
pub fn compensating_variation(
    economy: &CesEconomy,
    p_dd: &IndexMap<ProductId, f64>,
) -> Result<CompensatingVariation> {
    economy.check_eta()?;
    for (j, &p) in p_dd {
        if !(p > -1.0) {
            return Err(Error::invalid(format!("price change {p} for {j} is not above -1")));
        }
        if j.is_outside() && p != 0.0 {
            return Err(Error::invalid("the outside option's price cannot change"));
        }
    }
    let eta = economy.eta;
    let mut per_consumer = IndexMap::new();
    let mut total = 0.0;
    for c in &economy.consumers {
        let pre = log_sum_exp(c.utilities.values().copied());
        let post = log_sum_exp(
            c.utilities
                .iter()
                .map(|(j, u)| u + (1.0 - eta) * p_dd.get(j).map_or(0.0, |p| p.ln_1p())),
        );
        let cv = -c.budget * ((pre - post) / (1.0 - eta)).exp_m1();
        total += c.weight * cv;
        per_consumer.insert(c.id.clone(), cv);
    }
    Ok(CompensatingVariation { per_consumer, total })
}

impl CesEconomy {
    pub(crate) fn check_eta(&self) -> Result<()> {
        if self.eta > 1.0 && self.eta.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("eta must exceed 1, got {}", self.eta)))
        }
    }
}
