//! Conversions between revenue-based and quantity-based substitution measures.
//!
//! With `ε_jj` the own-price elasticity of quantity:
//!
//! * `ε^R_jj = ε_jj + 1` and `ε^R_kj = ε_kj` for `k != j`;
//! * `(1 + 1/ε_jj) D^R_{j->k} = D_{j->k} p_k / p_j`.

use crate::error::{Error, Result};

fn check_elastic(eps_jj: f64) -> Result<()> {
    if eps_jj < -1.0 {
        Ok(())
    } else {
        Err(Error::InelasticPricing(eps_jj))
    }
}

/// `D_{j->k} p_k / p_j` recovered from the revenue diversion ratio.
pub fn revenue_to_quantity_term(d_r: f64, eps_jj: f64) -> Result<f64> {
    check_elastic(eps_jj)?;
    if eps_jj.is_infinite() {
        return Ok(d_r);
    }
    Ok((1.0 + 1.0 / eps_jj) * d_r)
}

/// Revenue diversion ratio from a quantity diversion ratio and prices.
pub fn quantity_to_revenue_diversion(d_q: f64, p_j: f64, p_k: f64, eps_jj: f64) -> Result<f64> {
    check_elastic(eps_jj)?;
    if !(p_j > 0.0 && p_k > 0.0) {
        return Err(Error::invalid("prices must be positive"));
    }
    if eps_jj.is_infinite() {
        return Ok(d_q * p_k / p_j);
    }
    Ok(d_q * p_k / p_j / (1.0 + 1.0 / eps_jj))
}

/// Own and cross elasticities of quantity and revenue with respect to `p_j`,
/// plus the implied diversion ratios from `j` to `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticityBundle {
    /// `ε_jj`
    pub own_q: f64,
    /// `ε^R_jj`
    pub own_r: f64,
    /// `ε_kj`
    pub cross_q: f64,
    /// `ε^R_kj`
    pub cross_r: f64,
    /// `D_{j->k}`
    pub diversion_q: f64,
    /// `D^R_{j->k}`
    pub diversion_r: f64,
}

/// Builds an [`ElasticityBundle`] from demand levels and price derivatives.
pub fn elasticity_bundle_from_derivatives(
    q_j: f64,
    q_k: f64,
    p_j: f64,
    p_k: f64,
    dqj_dpj: f64,
    dqk_dpj: f64,
) -> Result<ElasticityBundle> {
    if q_j == 0.0 {
        return Err(Error::ZeroDenominator("q_j"));
    }
    if q_k == 0.0 {
        return Err(Error::ZeroDenominator("q_k"));
    }
    if dqj_dpj == 0.0 {
        return Err(Error::ZeroDenominator("dq_j/dp_j"));
    }
    let own_q = dqj_dpj * p_j / q_j;
    let cross_q = dqk_dpj * p_j / q_k;
    let diversion_q = -dqk_dpj / dqj_dpj;
    // dR_j/dp_j = q_j + p_j dq_j/dp_j, dR_k/dp_j = p_k dq_k/dp_j.
    let d_rev_j = q_j + p_j * dqj_dpj;
    if d_rev_j == 0.0 {
        return Err(Error::ZeroDenominator("dR_j/dp_j"));
    }
    let diversion_r = -(p_k * dqk_dpj) / d_rev_j;
    Ok(ElasticityBundle {
        own_q,
        own_r: own_q + 1.0,
        cross_q,
        cross_r: cross_q,
        diversion_q,
        diversion_r,
    })
}
