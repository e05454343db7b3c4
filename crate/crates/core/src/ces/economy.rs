use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::ProductId;

/// One consumer (or consumer type). The consideration set is the key set of
/// `utilities` and always contains the outside option, normally at utility 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Consumer {
    pub id: String,
    pub budget: f64,
    /// Mass of this consumer type.
    pub weight: f64,
    pub utilities: IndexMap<ProductId, f64>,
}

impl Consumer {
    /// Builds a consumer over `utilities` plus the outside option.
    pub fn new(id: impl Into<String>, budget: f64, weight: f64, utilities: IndexMap<ProductId, f64>) -> Self {
        let mut utilities = utilities;
        utilities.entry(ProductId::outside()).or_insert(0.0);
        Consumer {
            id: id.into(),
            budget,
            weight,
            utilities,
        }
    }

    pub fn considers(&self, id: &ProductId) -> bool {
        self.utilities.contains_key(id)
    }

    /// Spending mass `weight · budget`.
    pub fn mass(&self) -> f64 {
        self.weight * self.budget
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CesEconomy {
    pub consumers: Vec<Consumer>,
    /// Elasticity of substitution, `η > 1`.
    pub eta: f64,
}

impl CesEconomy {
    pub fn new(consumers: Vec<Consumer>, eta: f64) -> Result<Self> {
        let e = CesEconomy { consumers, eta };
        e.check()?;
        Ok(e)
    }

    /// One representative consumer with unit weight.
    pub fn single(budget: f64, utilities: IndexMap<ProductId, f64>, eta: f64) -> Result<Self> {
        CesEconomy::new(vec![Consumer::new("representative", budget, 1.0, utilities)], eta)
    }

    /// Builds the economy whose shares are `table`.
    pub fn from_shares(table: &ShareTable, eta: f64) -> Result<Self> {
        let utilities = invert_shares(table)?;
        let consumers = table
            .consumers
            .iter()
            .zip(utilities)
            .map(|(c, u)| Consumer {
                id: c.id.clone(),
                budget: c.budget,
                weight: c.weight,
                utilities: u,
            })
            .collect();
        CesEconomy::new(consumers, eta)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eta > 1.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must exceed 1, got {}", self.eta)));
        }
        check_consumers(self.consumers.iter().map(|c| (c.id.as_str(), c.budget, c.weight, &c.utilities)))?;
        for c in &self.consumers {
            if c.utilities.values().any(|u| !u.is_finite()) {
                return Err(Error::invalid(format!("consumer {}: non-finite utility", c.id)));
            }
        }
        Ok(())
    }

    /// Inside products in order of first appearance.
    pub fn products(&self) -> Vec<ProductId> {
        inside_products(self.consumers.iter().map(|c| c.utilities.keys()))
    }

    /// Copy with `delta` added to every utility of consumer `i`, the outside
    /// option included. Shares, and everything computed from them, are unchanged;
    /// the copy no longer uses the `u_OUTSIDE = 0` normalization.
    pub fn shifted(&self, i: usize, delta: f64) -> CesEconomy {
        let mut out = self.clone();
        for u in out.consumers[i].utilities.values_mut() {
            *u += delta;
        }
        out
    }
}

fn check_consumers<'a>(
    consumers: impl Iterator<Item = (&'a str, f64, f64, &'a IndexMap<ProductId, f64>)>,
) -> Result<()> {
    let mut any_weight = false;
    let mut n = 0;
    for (id, budget, weight, considered) in consumers {
        n += 1;
        if !(budget >= 0.0) || !budget.is_finite() {
            return Err(Error::invalid(format!("consumer {id}: budget must be non-negative")));
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::invalid(format!("consumer {id}: weight must be non-negative")));
        }
        any_weight |= weight > 0.0;
        if !considered.contains_key(&ProductId::outside()) {
            return Err(Error::invalid(format!("consumer {id}: consideration set lacks OUTSIDE")));
        }
    }
    if n == 0 {
        return Err(Error::invalid("economy has no consumers"));
    }
    if !any_weight {
        return Err(Error::invalid("consumer weights are all zero"));
    }
    Ok(())
}

pub(crate) fn inside_products<'a, I, K>(keys: I) -> Vec<ProductId>
where
    I: Iterator<Item = K>,
    K: Iterator<Item = &'a ProductId>,
{
    let mut out: Vec<ProductId> = Vec::new();
    for ks in keys {
        for k in ks {
            if !k.is_outside() && !out.contains(k) {
                out.push(k.clone());
            }
        }
    }
    out
}

/// Expenditure shares of one consumer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumerShares {
    pub id: String,
    pub budget: f64,
    pub weight: f64,
    /// Shares over the consideration set, `OUTSIDE` included.
    pub shares: IndexMap<ProductId, f64>,
}

impl ConsumerShares {
    pub fn share(&self, id: &ProductId) -> f64 {
        self.shares.get(id).copied().unwrap_or(0.0)
    }

    pub fn mass(&self) -> f64 {
        self.weight * self.budget
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareTable {
    pub consumers: Vec<ConsumerShares>,
}

impl ShareTable {
    /// Validated table; every consumer's shares must sum to one.
    pub fn new(consumers: Vec<ConsumerShares>) -> Result<Self> {
        check_consumers(consumers.iter().map(|c| (c.id.as_str(), c.budget, c.weight, &c.shares)))?;
        for c in &consumers {
            if c.shares.values().any(|a| !(*a >= 0.0) || !a.is_finite()) {
                return Err(Error::invalid(format!("consumer {}: shares must be non-negative", c.id)));
            }
            let total: f64 = c.shares.values().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("consumer {}: shares sum to {total}, not 1", c.id)));
            }
        }
        Ok(ShareTable { consumers })
    }

    /// Single representative consumer with unit weight.
    pub fn single(budget: f64, shares: IndexMap<ProductId, f64>) -> Result<Self> {
        ShareTable::new(vec![ConsumerShares {
            id: "representative".to_owned(),
            budget,
            weight: 1.0,
            shares,
        }])
    }

    /// Inside products in order of first appearance.
    pub fn products(&self) -> Vec<ProductId> {
        inside_products(self.consumers.iter().map(|c| c.shares.keys()))
    }

    /// Revenue `Σ_i w_i B_i α_ij` of every inside product.
    pub fn revenues(&self) -> IndexMap<ProductId, f64> {
        self.products()
            .into_iter()
            .map(|j| {
                let r = self.consumers.iter().map(|c| c.mass() * c.share(&j)).sum();
                (j, r)
            })
            .collect()
    }

    /// Aggregate expenditure shares, `OUTSIDE` included.
    pub fn aggregate(&self) -> IndexMap<ProductId, f64> {
        let total: f64 = self.consumers.iter().map(ConsumerShares::mass).sum();
        let mut ids = self.products();
        ids.push(ProductId::outside());
        ids.into_iter()
            .map(|j| {
                let r: f64 = self.consumers.iter().map(|c| c.mass() * c.share(&j)).sum();
                (j, r / total)
            })
            .collect()
    }
}

/// Softmax over a consideration set, stabilized by subtracting the maximum.
pub fn softmax(utilities: &IndexMap<ProductId, f64>) -> IndexMap<ProductId, f64> {
    let max = utilities.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = utilities.values().map(|u| (u - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    utilities.keys().cloned().zip(exp.into_iter().map(|e| e / total)).collect()
}

/// Expenditure shares of every consumer.
pub fn shares(economy: &CesEconomy) -> ShareTable {
    ShareTable {
        consumers: economy
            .consumers
            .iter()
            .map(|c| ConsumerShares {
                id: c.id.clone(),
                budget: c.budget,
                weight: c.weight,
                shares: softmax(&c.utilities),
            })
            .collect(),
    }
}

/// Utilities `u_ij = log α_ij - log α_i,OUTSIDE` reproducing the shares.
pub fn invert_shares(table: &ShareTable) -> Result<Vec<IndexMap<ProductId, f64>>> {
    table
        .consumers
        .iter()
        .map(|c| {
            let outside = c.share(&ProductId::outside());
            if !(outside > 0.0) {
                return Err(Error::NonInteriorShares(format!("consumer {}: outside share is zero", c.id)));
            }
            c.shares
                .iter()
                .map(|(j, &a)| {
                    if !(a > 0.0) {
                        return Err(Error::NonInteriorShares(format!("consumer {}: share of {j} is zero", c.id)));
                    }
                    let u = if j.is_outside() { 0.0 } else { a.ln() - outside.ln() };
                    Ok((j.clone(), u))
                })
                .collect()
        })
        .collect()
}

/// Serialized CES economy.
///
/// Each consumer carries either `shares` or `utilities`; `eta` may be left
/// out when it is to be identified from margins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub consumers: Vec<ConsumerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nests: Option<IndexMap<ProductId, String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerRecord {
    pub id: String,
    pub budget: f64,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shares: Option<IndexMap<ProductId, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utilities: Option<IndexMap<ProductId, f64>>,
}

fn one() -> f64 {
    1.0
}

impl EconomyFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema {
            field: "economy".to_owned(),
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    /// Consumers with utilities, inverting shares where those were given.
    pub fn consumers(&self) -> Result<Vec<Consumer>> {
        self.consumers
            .iter()
            .enumerate()
            .map(|(row, c)| match (&c.shares, &c.utilities) {
                (Some(s), None) => {
                    let mut s = s.clone();
                    if !s.contains_key(&ProductId::outside()) {
                        let inside: f64 = s.values().sum();
                        s.insert(ProductId::outside(), 1.0 - inside);
                    }
                    let table = ShareTable::new(vec![ConsumerShares {
                        id: c.id.clone(),
                        budget: c.budget,
                        weight: c.weight,
                        shares: s,
                    }])?;
                    let u = invert_shares(&table)?.remove(0);
                    Ok(Consumer::new(c.id.clone(), c.budget, c.weight, u))
                }
                (None, Some(u)) => Ok(Consumer::new(c.id.clone(), c.budget, c.weight, u.clone())),
                _ => Err(Error::Schema {
                    field: format!("consumers[{row}]"),
                    location: format!("consumer {}", c.id),
                    message: "exactly one of `shares` and `utilities` is required".to_owned(),
                }),
            })
            .collect()
    }

    /// The economy at a given `eta` (the file's own value when `None`).
    pub fn economy(&self, eta: Option<f64>) -> Result<CesEconomy> {
        let eta = eta
            .or(self.eta)
            .ok_or_else(|| Error::invalid("economy file has no eta and none was supplied"))?;
        CesEconomy::new(self.consumers()?, eta)
    }
}
