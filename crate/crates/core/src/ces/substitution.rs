use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::Serialize;

use super::economy::{softmax, CesEconomy, ShareTable};
use crate::error::{Error, Result};
use crate::market::{ProductId, RevenueDiversionMatrix};

/// Spread of per-product `η_j` above which inputs are flagged as inconsistent.
pub const ETA_SPREAD_WARNING: f64 = 1.0;

/// `Σ_i w_i B_i α_ij (1 - α_ij)` and `Σ_i w_i B_i α_ij`.
fn share_moments(table: &ShareTable, j: &ProductId) -> (f64, f64) {
    table.consumers.iter().fold((0.0, 0.0), |(var, mean), c| {
        let a = c.share(j);
        (var + c.mass() * a * (1.0 - a), mean + c.mass() * a)
    })
}

/// Revenue diversion ratios over the inside products and `OUTSIDE`:
/// `D^R_{j->k} = Σ_i w_i B_i α_ij α_ik / Σ_i w_i B_i α_ij (1 - α_ij)`.
///
/// Rows of products nobody considers (and the `OUTSIDE` row) are unknown.
pub fn revenue_diversion(table: &ShareTable) -> Result<RevenueDiversionMatrix> {
    let mut order = table.products();
    order.push(ProductId::outside());
    let n = order.len();
    let mut values = DMatrix::from_element(n, n, f64::NAN);
    for (r, j) in order.iter().enumerate() {
        values[(r, r)] = -1.0;
        if j.is_outside() {
            continue;
        }
        let (denom, _) = share_moments(table, j);
        if !(denom > 0.0) {
            log::warn!("revenue diversion from {j} is undefined: no consumer substitutes away from it");
            continue;
        }
        for (c, k) in order.iter().enumerate() {
            if c == r {
                continue;
            }
            let num: f64 = table.consumers.iter().map(|cs| cs.mass() * cs.share(j) * cs.share(k)).sum();
            values[(r, c)] = num / denom;
        }
    }
    RevenueDiversionMatrix::new(order, values)
}

/// Own-price elasticities of revenue `ε^R_jj = (1-η) Σ w B α(1-α) / Σ w B α`
/// computed from a share table.
pub fn revenue_elasticities(table: &ShareTable, eta: f64) -> IndexMap<ProductId, f64> {
    table
        .products()
        .into_iter()
        .map(|j| {
            let (var, mean) = share_moments(table, &j);
            (j, (1.0 - eta) * var / mean)
        })
        .collect()
}

/// Own-price elasticities of revenue of every inside product.
/// The quantity elasticity is `ε_jj = ε^R_jj - 1`.
pub fn own_price_revenue_elasticity(economy: &CesEconomy) -> IndexMap<ProductId, f64> {
    revenue_elasticities(&super::shares(economy), economy.eta)
}

/// Per-product identification of `η` and the over-identification diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EtaIdentification {
    pub per_product: IndexMap<ProductId, f64>,
    /// Arithmetic mean of the per-product values.
    pub mean: f64,
    /// `max - min` of the per-product values.
    pub spread: f64,
    /// Set when `spread` exceeds [`ETA_SPREAD_WARNING`].
    pub inconsistent: bool,
}

/// `η_j = 1 - (1 + ε_jj) / A_j` with `A_j = Σ w B α(1-α) / Σ w B α`
/// (`A_j = 1 - α_j` for one consumer), for each product in `eps`.
pub fn identify_eta(table: &ShareTable, eps: &IndexMap<ProductId, f64>) -> Result<EtaIdentification> {
    if eps.is_empty() {
        return Err(Error::invalid("no elasticities supplied for eta identification"));
    }
    let mut per_product = IndexMap::new();
    for (j, &e) in eps {
        if !(e < -1.0) {
            return Err(Error::InelasticPricing(e));
        }
        let (var, mean) = share_moments(table, j);
        if !(mean > 0.0) {
            return Err(Error::UnknownProduct(j.to_string()));
        }
        let a = var / mean;
        if !(a > 0.0) {
            return Err(Error::invalid(format!("share of {j} equals 1; eta is not identified")));
        }
        per_product.insert(j.clone(), 1.0 - (1.0 + e) / a);
    }
    let values: Vec<f64> = per_product.values().copied().collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    Ok(EtaIdentification {
        per_product,
        mean,
        spread,
        inconsistent: spread > ETA_SPREAD_WARNING,
    })
}

/// Revenue diversion after removing `removed` from every consideration set:
/// the revenue each alternative gains per unit of revenue `removed` loses.
pub fn second_choice_diversion(economy: &CesEconomy, removed: &ProductId) -> Result<IndexMap<ProductId, f64>> {
    let mut targets: Vec<ProductId> = economy.products().into_iter().filter(|k| k != removed).collect();
    targets.push(ProductId::outside());
    let mut gain: IndexMap<ProductId, f64> = targets.iter().map(|k| (k.clone(), 0.0)).collect();
    let mut loss = 0.0;
    for c in &economy.consumers {
        if !c.considers(removed) {
            continue;
        }
        let pre = softmax(&c.utilities);
        let mut remaining = c.utilities.clone();
        remaining.shift_remove(removed);
        let post = softmax(&remaining);
        loss += c.mass() * pre[removed];
        for (k, a_post) in &post {
            *gain.get_mut(k).expect("target listed") += c.mass() * (a_post - pre[k]);
        }
    }
    if !(loss > 0.0) {
        return Err(Error::invalid(format!("no revenue is lost when removing {removed}")));
    }
    Ok(gain.into_iter().map(|(k, g)| (k, g / loss)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ces::{shares, Consumer};
    use approx::assert_relative_eq;

    fn ids(pairs: &[(&str, f64)]) -> IndexMap<ProductId, f64> {
        pairs.iter().map(|(k, v)| (ProductId::from(*k), *v)).collect()
    }

    fn staples() -> ShareTable {
        ShareTable::single(2.05e9, ids(&[("SP", 0.473), ("OD", 0.316), ("OUTSIDE", 0.211)])).unwrap()
    }

    #[test]
    fn staples_diversion() {
        let d = revenue_diversion(&staples()).unwrap();
        assert_relative_eq!(d.get(&"SP".into(), &"OD".into()).unwrap(), 0.599, epsilon = 1e-3);
        assert_relative_eq!(d.get(&"OD".into(), &"SP".into()).unwrap(), 0.691, epsilon = 1e-3);
        let row: f64 = ["OD", "OUTSIDE"].iter().map(|k| d.get(&"SP".into(), &(*k).into()).unwrap()).sum();
        assert_relative_eq!(row, 1.0, epsilon = 1e-12);
        assert_eq!(d.get(&ProductId::outside(), &"SP".into()), None);
    }

    #[test]
    fn staples_eta() {
        let eps = ids(&[("SP", -1.0 / 0.258), ("OD", -1.0 / 0.234)]);
        let id = identify_eta(&staples(), &eps).unwrap();
        assert_relative_eq!(id.per_product[&ProductId::from("SP")], 6.457, epsilon = 5e-3);
        assert_relative_eq!(id.per_product[&ProductId::from("OD")], 5.786, epsilon = 5e-3);
        assert_relative_eq!(id.mean, 6.121, epsilon = 5e-3);
        assert!(!id.inconsistent);
    }

    #[test]
    fn eta_diagnostics() {
        let t = ShareTable::single(1.0, ids(&[("a", 0.3), ("b", 0.3), ("OUTSIDE", 0.4)])).unwrap();
        let same = identify_eta(&t, &ids(&[("a", -4.0), ("b", -4.0)])).unwrap();
        assert_eq!(same.spread, 0.0);
        let off = identify_eta(&t, &ids(&[("a", -4.0), ("b", -8.0)])).unwrap();
        assert!(off.inconsistent);
        let full = ShareTable::single(1.0, ids(&[("a", 1.0), ("OUTSIDE", 0.0)])).unwrap();
        assert!(identify_eta(&full, &ids(&[("a", -2.0)])).is_err());
    }

    #[test]
    fn revenue_elasticity_example() {
        let t = ShareTable::single(1.0, ids(&[("a", 0.473), ("OUTSIDE", 0.527)])).unwrap();
        let e = revenue_elasticities(&t, 6.121)[&ProductId::from("a")];
        assert_relative_eq!(e, -2.699, epsilon = 1e-3);
        assert_relative_eq!(e - 1.0, -3.699, epsilon = 1e-3);
        assert_eq!(revenue_elasticities(&t, 1.0)[&ProductId::from("a")], 0.0);
    }

    #[test]
    fn second_choice_single_consumer() {
        let e = CesEconomy::from_shares(&staples(), 6.0).unwrap();
        let d2 = second_choice_diversion(&e, &"SP".into()).unwrap();
        assert_relative_eq!(d2[&ProductId::from("OD")], 0.316 / 0.527, epsilon = 1e-12);
        assert_relative_eq!(d2.values().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unconsidered_product_row_is_unknown() {
        let e = CesEconomy::new(
            vec![
                Consumer::new("a", 1.0, 1.0, ids(&[("x", 0.5)])),
                Consumer::new("b", 1.0, 0.0, ids(&[("y", 0.5)])),
            ],
            3.0,
        )
        .unwrap();
        let d = revenue_diversion(&shares(&e)).unwrap();
        assert!(d.get(&"y".into(), &"x".into()).is_none());
        assert!(d.get(&"x".into(), &"y".into()).is_some());
    }
}
