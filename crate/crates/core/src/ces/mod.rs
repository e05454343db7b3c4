//! CES and nested-CES demand.
//!
//! A consumer `i` with budget `B_i` spends the share
//! `α_ij = exp(u_ij) / Σ_{k∈C_i} exp(u_ik)` of it on product `j`, where
//! `u_ij = log β_ij + (1-η) log p_j` and the outside option has `u = 0`.
//! Revenues, revenue diversion ratios and elasticities of revenue follow from
//! the shares and the substitution elasticity `η` alone.

mod cv;
mod economy;
mod fit;
mod nested;
mod substitution;

pub use cv::{compensating_variation, CompensatingVariation};
pub use economy::{invert_shares, shares, softmax, CesEconomy, Consumer, ConsumerShares, EconomyFile, ShareTable};
pub use fit::{fit_nested_ces, FitConfig, FitConsumer, FitData, FitIteration, FitResult, Weighting};
pub use nested::{nested_shares, NestedCesEconomy};
pub use substitution::{
    identify_eta, own_price_revenue_elasticity, revenue_diversion, revenue_elasticities,
    second_choice_diversion, EtaIdentification, ETA_SPREAD_WARNING,
};
