//! The bundled Staples / Office Depot market.
//!
//! Shares `α = (47.3%, 31.6%)` of a $2.05bn office-supplies budget, margins
//! `(25.8%, 23.4%)`, revenues `α_j · B`. The same files live in `fixtures/` at
//! the workspace root for use with the command-line tool.

use crate::ces::{CesEconomy, EconomyFile};
use crate::market::{market_from_json_str, LoadedMarket};

pub const STAPLES_OD_JSON: &str = include_str!("../../../fixtures/staples_od.json");
pub const STAPLES_OD_ECONOMY_JSON: &str = include_str!("../../../fixtures/staples_od_economy.json");

/// Market, share-implied diversion and the Staples + Office Depot merger.
pub fn staples_office_depot() -> LoadedMarket {
    market_from_json_str(STAPLES_OD_JSON).expect("bundled fixture parses")
}

/// Single representative consumer at the mean identified `η`.
pub fn staples_office_depot_economy() -> CesEconomy {
    EconomyFile::from_json_str(STAPLES_OD_ECONOMY_JSON)
        .and_then(|f| f.economy(None))
        .expect("bundled fixture parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::guppi;
    use crate::ProductId;

    #[test]
    fn fixture_loads() {
        let loaded = staples_office_depot();
        let merger = loaded.merger.clone().unwrap();
        let g = guppi(&loaded.market, &loaded.diversion, &merger).unwrap();
        assert!((g[&ProductId::from("SP")] - 0.104).abs() < 1e-3);
        assert_eq!(staples_office_depot_economy().consumers.len(), 1);
    }
}
