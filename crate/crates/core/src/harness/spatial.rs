use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::experiment::trial_rng;
use crate::ces::{CesEconomy, Consumer, FitConsumer, FitData, NestedCesEconomy};
use crate::error::Result;
use crate::market::ProductId;

/// Synthetic geography: tracts and stores on a square, shoppers consider the
/// stores within `radius`, utility `θ·[1, distance, size]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    pub n_tracts: usize,
    pub n_stores: usize,
    pub n_nests: usize,
    pub side: f64,
    pub radius: f64,
    pub theta: [f64; 3],
    pub mu: f64,
    /// Carried into the economy; revenues at fixed prices do not depend on it.
    pub eta: f64,
    pub seed: u64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            n_tracts: 50,
            n_stores: 20,
            n_nests: 4,
            side: 30.0,
            radius: 10.0,
            theta: [1.0, -0.3, 0.5],
            mu: 0.46,
            eta: 5.0,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tract {
    pub id: String,
    pub location: (f64, f64),
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Store {
    pub id: ProductId,
    pub location: (f64, f64),
    pub size: f64,
    pub nest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFixture {
    pub tracts: Vec<Tract>,
    pub stores: Vec<Store>,
    /// Design and noiseless model revenues at the true parameters.
    pub data: FitData,
    pub economy: NestedCesEconomy,
    pub true_theta: [f64; 3],
    pub true_mu: f64,
}

pub const SPATIAL_COVARIATES: [&str; 3] = ["constant", "distance", "size"];

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Random tracts and stores, then [`spatial_fixture_from_layout`].
pub fn generate_spatial_fixture(config: &SpatialConfig) -> Result<SpatialFixture> {
    let mut rng = trial_rng(config.seed, 0);
    let point = |rng: &mut rand_chacha::ChaCha8Rng| (config.side * rng.random::<f64>(), config.side * rng.random::<f64>());
    let tracts = (0..config.n_tracts)
        .map(|i| Tract {
            id: format!("t{}", i + 1),
            location: point(&mut rng),
            budget: 1.0 + rng.random::<f64>(),
        })
        .collect();
    let stores = (0..config.n_stores)
        .map(|j| Store {
            id: ProductId::new(format!("s{}", j + 1)),
            location: point(&mut rng),
            size: 2.0 * rng.random::<f64>(),
            nest: format!("chain{}", j % config.n_nests.max(1) + 1),
        })
        .collect();
    spatial_fixture_from_layout(config, tracts, stores)
}

/// Builds the design, the nested economy and its revenues for a given layout.
pub fn spatial_fixture_from_layout(config: &SpatialConfig, tracts: Vec<Tract>, stores: Vec<Store>) -> Result<SpatialFixture> {
    let nests: IndexMap<ProductId, String> = stores.iter().map(|s| (s.id.clone(), s.nest.clone())).collect();
    let consumers: Vec<FitConsumer> = tracts
        .iter()
        .map(|t| FitConsumer {
            id: t.id.clone(),
            budget: t.budget,
            weight: 1.0,
            covariates: stores
                .iter()
                .filter(|s| distance(t.location, s.location) <= config.radius)
                .map(|s| (s.id.clone(), vec![1.0, distance(t.location, s.location), s.size]))
                .collect(),
        })
        .collect();
    let mut data = FitData {
        covariate_names: SPATIAL_COVARIATES.iter().map(|s| s.to_string()).collect(),
        consumers,
        nests: nests.clone(),
        observed_revenues: stores.iter().map(|s| (s.id.clone(), 0.0)).collect(),
    };
    let revenues = data.model_revenues(&config.theta, config.mu);
    for (v, r) in data.observed_revenues.values_mut().zip(revenues) {
        *v = r;
    }
    let economy = CesEconomy::new(
        data.consumers
            .iter()
            .map(|c| {
                let u = c
                    .covariates
                    .iter()
                    .map(|(j, x)| (j.clone(), x.iter().zip(&config.theta).map(|(a, b)| a * b).sum()))
                    .collect();
                Consumer::new(c.id.clone(), c.budget, c.weight, u)
            })
            .collect(),
        config.eta,
    )?;
    Ok(SpatialFixture {
        tracts,
        stores,
        data,
        economy: NestedCesEconomy::new(economy, nests, config.mu)?,
        true_theta: config.theta,
        true_mu: config.mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ces::nested_shares;

    fn layout(store_x: f64) -> (Vec<Tract>, Vec<Store>) {
        let tracts = vec![
            Tract { id: "t1".into(), location: (0.0, 0.0), budget: 1.0 },
            Tract { id: "t2".into(), location: (4.0, 0.0), budget: 2.0 },
        ];
        let stores = vec![
            Store { id: "a".into(), location: (1.0, 1.0), size: 1.0, nest: "x".into() },
            Store { id: "b".into(), location: (store_x, 0.0), size: 0.5, nest: "y".into() },
            Store { id: "far".into(), location: (100.0, 100.0), size: 2.0, nest: "x".into() },
        ];
        (tracts, stores)
    }

    #[test]
    fn unreachable_store_earns_nothing() {
        let (t, s) = layout(3.0);
        let f = spatial_fixture_from_layout(&SpatialConfig::default(), t, s).unwrap();
        assert_eq!(f.data.observed_revenues[&ProductId::from("far")], 0.0);
        assert!(f.data.observed_revenues[&ProductId::from("a")] > 0.0);
    }

    #[test]
    fn zero_distance_coefficient_ignores_location() {
        let config = SpatialConfig { theta: [1.0, 0.0, 0.5], ..Default::default() };
        let (t1, s1) = layout(3.0);
        let (t2, s2) = layout(2.0);
        let a = spatial_fixture_from_layout(&config, t1, s1).unwrap();
        let b = spatial_fixture_from_layout(&config, t2, s2).unwrap();
        for (x, y) in a.data.observed_revenues.values().zip(b.data.observed_revenues.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn economy_reproduces_revenues() {
        let f = generate_spatial_fixture(&SpatialConfig::default()).unwrap();
        let table = nested_shares(&f.economy).unwrap();
        let rev = table.revenues();
        for (j, r) in &f.data.observed_revenues {
            assert!((rev.get(j).copied().unwrap_or(0.0) - r).abs() < 1e-9 * (1.0 + r));
        }
    }
}
