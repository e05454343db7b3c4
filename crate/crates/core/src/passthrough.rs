//! Closed-form merger pass-through matrix for two single-product merging firms
//! facing one representative CES consumer.
//!
//! With log prices `p̃` the merging firms' normalized FOCs are
//! `h_j(p̃) = -1/ε_jj - m_j + (1 + 1/ε_jj) m_k D^R_{j->k}`, and the pass-through
//! matrix is `M = -(∂h/∂p̃)^{-1}` at the pre-merger point.

use nalgebra::{DMatrix, Matrix2};
use serde::Serialize;

use crate::ces::{identify_eta, ShareTable};
use crate::effects::{merging_elasticities, PassThroughMatrix};
use crate::error::{Error, Result};
use crate::market::{LoadedMarket, Market, MergerSpec, PassthroughMode, ProductId, RevenueDiversionMatrix};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PassthroughInputs {
    /// The two merging products `(j, k)`.
    pub products: [ProductId; 2],
    pub alpha: [f64; 2],
    pub margin: [f64; 2],
    pub eps: [f64; 2],
    /// `D^R_{j->k}` and `D^R_{k->j}`.
    pub diversion: [f64; 2],
    pub eta: f64,
}

impl PassthroughInputs {
    pub fn check(&self) -> Result<()> {
        let [a_j, a_k] = self.alpha;
        if !(a_j > 0.0 && a_j < 1.0 && a_k > 0.0 && a_k < 1.0 && a_j + a_k < 1.0) {
            return Err(Error::NonInteriorShares(format!(
                "shares ({a_j}, {a_k}) must lie in (0, 1) and leave room for the outside option"
            )));
        }
        for e in self.eps {
            if !(e < -1.0) {
                return Err(Error::InelasticPricing(e));
            }
        }
        for m in self.margin {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::invalid(format!("margin {m} outside (0, 1)")));
            }
        }
        if !(self.eta > 1.0) {
            return Err(Error::invalid(format!("eta must exceed 1, got {}", self.eta)));
        }
        if self.diversion.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("closed form needs positive diversion in both directions"));
        }
        Ok(())
    }
}

/// Row of `∂h/∂p̃` for product `j` facing partner `k`: `(∂h_j/∂p̃_j, ∂h_j/∂p̃_k)`.
fn jacobian_row(a_j: f64, a_k: f64, m_j: f64, m_k: f64, eps: f64, d_jk: f64, d_kj: f64, eta: f64) -> (f64, f64) {
    let g = (1.0 - eta).powi(2) / (eps * eps);
    let inner = 1.0 - m_k * d_jk;
    let adj = 1.0 + 1.0 / eps;
    let own = -g * a_j * (1.0 - a_j) * inner - (1.0 - m_j);
    let cross = g * a_j * a_k * inner
        + adj * (1.0 - m_k) * d_jk
        + adj * m_k * a_j * (1.0 - eta) * d_jk * (1.0 / d_kj - d_jk);
    (own, cross)
}

/// `∂h/∂p̃` evaluated at the pre-merger point.
pub fn fo_jacobian(inputs: &PassthroughInputs) -> Matrix2<f64> {
    let [a_j, a_k] = inputs.alpha;
    let [m_j, m_k] = inputs.margin;
    let [e_j, e_k] = inputs.eps;
    let [d_jk, d_kj] = inputs.diversion;
    let (jj, jk) = jacobian_row(a_j, a_k, m_j, m_k, e_j, d_jk, d_kj, inputs.eta);
    let (kk, kj) = jacobian_row(a_k, a_j, m_k, m_j, e_k, d_kj, d_jk, inputs.eta);
    Matrix2::new(jj, jk, kj, kk)
}

/// `M = -(∂h/∂p̃)^{-1}`.
pub fn passthrough_matrix(inputs: &PassthroughInputs) -> Result<PassThroughMatrix> {
    inputs.check()?;
    let jac = fo_jacobian(inputs);
    let det = jac.determinant();
    let scale = jac.abs().max().powi(2);
    if !(det.abs() > 1e-12 * scale) {
        return Err(Error::SingularJacobian { determinant: det });
    }
    let inv = jac.try_inverse().ok_or(Error::SingularJacobian { determinant: det })?;
    let m = -inv;
    PassThroughMatrix::new(
        inputs.products.to_vec(),
        DMatrix::from_row_slice(2, 2, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]),
    )
}

/// Assembles the closed-form inputs from a market: elasticities from margins,
/// shares from a single-consumer share table.
pub fn inputs_from_market(
    market: &Market,
    diversion: &RevenueDiversionMatrix,
    merger: &MergerSpec,
    shares: &ShareTable,
    eta: f64,
) -> Result<PassthroughInputs> {
    if shares.consumers.len() != 1 {
        return Err(Error::Unsupported(
            "closed-form pass-through needs a single representative consumer".to_owned(),
        ));
    }
    let ids = merger.merging_products(market);
    if ids.len() != 2 {
        return Err(Error::Unsupported(
            "closed-form pass-through covers two single-product merging firms".to_owned(),
        ));
    }
    let eps = merging_elasticities(market, diversion, merger)?;
    let (j, k) = (&ids[0], &ids[1]);
    let c = &shares.consumers[0];
    let margin = |id: &ProductId| market.product(id).map(|p| p.margin).ok_or_else(|| Error::UnknownProduct(id.to_string()));
    Ok(PassthroughInputs {
        products: [j.clone(), k.clone()],
        alpha: [c.share(j), c.share(k)],
        margin: [margin(j)?, margin(k)?],
        eps: [eps[j], eps[k]],
        diversion: [diversion.require(j, k)?, diversion.require(k, j)?],
        eta,
    })
}

/// Pass-through matrix requested by the merger description, with the notes
/// explaining any fallback to the identity.
///
/// For the CES closed form `eta` defaults to the mean of the per-product values
/// identified from margins and shares.
pub fn resolve_passthrough(
    loaded: &LoadedMarket,
    merger: &MergerSpec,
    eta: Option<f64>,
) -> Result<(PassThroughMatrix, Vec<String>)> {
    let ids = merger.merging_products(&loaded.market);
    match &merger.passthrough {
        PassthroughMode::Identity => Ok((
            PassThroughMatrix::identity(ids),
            vec!["pass-through approximated by the identity matrix (p̈ = GUPPI)".to_owned()],
        )),
        PassthroughMode::Explicit { order, matrix } => {
            if order.len() != ids.len() || ids.iter().any(|id| !order.contains(id)) {
                return Err(Error::DimensionMismatch(
                    "explicit pass-through matrix must cover exactly the merging products".to_owned(),
                ));
            }
            Ok((PassThroughMatrix::new(order.clone(), matrix.clone())?, Vec::new()))
        }
        PassthroughMode::CesClosedForm => {
            let fallback = |why: String| {
                Ok((
                    PassThroughMatrix::identity(ids.clone()),
                    vec![format!("CES pass-through unavailable ({why}); using the identity matrix (p̈ = GUPPI)")],
                ))
            };
            let Some(shares) = &loaded.expenditure_shares else {
                return fallback("no expenditure shares".to_owned());
            };
            if ids.len() != 2 {
                return fallback("needs two single-product merging firms".to_owned());
            }
            let table = shares.to_share_table()?;
            let eta = match eta {
                Some(e) => e,
                None => {
                    let eps = merging_elasticities(&loaded.market, &loaded.diversion, merger)?;
                    identify_eta(&table, &eps)?.mean
                }
            };
            let inputs = inputs_from_market(&loaded.market, &loaded.diversion, merger, &table, eta)?;
            Ok((passthrough_matrix(&inputs)?, Vec::new()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn staples_inputs() -> PassthroughInputs {
        PassthroughInputs {
            products: ["SP".into(), "OD".into()],
            alpha: [0.473, 0.316],
            margin: [0.258, 0.234],
            eps: [-3.875, -4.273],
            diversion: [0.599, 0.691],
            eta: 6.121,
        }
    }

    #[test]
    fn staples_matrix() {
        let m = passthrough_matrix(&staples_inputs()).unwrap().matrix;
        let expected = [1.005, 0.345, 0.347, 1.098];
        for (i, e) in expected.iter().enumerate() {
            assert_relative_eq!(m[(i / 2, i % 2)], *e, epsilon = 5e-3);
        }
        assert!(m[(0, 0)] > m[(0, 1)] && m[(0, 1)] > 0.0);
        assert!(m[(1, 1)] > m[(1, 0)] && m[(1, 0)] > 0.0);
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut bad = staples_inputs();
        bad.alpha = [0.6, 0.5];
        assert!(passthrough_matrix(&bad).is_err());
        let mut bad = staples_inputs();
        bad.eps[0] = -0.9;
        assert!(passthrough_matrix(&bad).unwrap_err().to_string().contains("inelastic"));
    }

    #[test]
    fn no_interaction_as_diversion_vanishes() {
        // Under one CES consumer D^R_{j->k} = α_k/(1-α_j), so diversion vanishes
        // with the partner's share and the cross terms go with it.
        let a = 1e-9;
        let i = PassthroughInputs {
            products: ["j".into(), "k".into()],
            alpha: [a, a],
            margin: [0.25, 0.25],
            eps: [-4.0, -4.0],
            diversion: [a / (1.0 - a), a / (1.0 - a)],
            eta: 4.0,
        };
        let m = passthrough_matrix(&i).unwrap().matrix;
        assert!(m[(0, 1)].abs() < 1e-8 && m[(1, 0)].abs() < 1e-8, "{m}");
        assert_relative_eq!(m[(0, 0)], 1.0 / 0.75, epsilon = 1e-6);
    }
}
