//! First-order unilateral effects from revenues, margins and revenue diversion
//! ratios: own-price elasticities, GUPPI, price effects through a pass-through
//! matrix, welfare approximations and compensating marginal cost reductions.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{FirmId, Market, MergerSpec, ProductId, RevenueDiversionMatrix};
use crate::table::{money, pct, Table};

/// Condition numbers above this are flagged in results.
pub const ILL_CONDITIONED: f64 = 1e8;

fn margin(market: &Market, id: &ProductId) -> Result<f64> {
    market
        .product(id)
        .map(|p| p.margin)
        .ok_or_else(|| Error::UnknownProduct(id.to_string()))
}

/// `Σ_{k ∈ others, k != j} m_k D^R_{j->k}`.
fn weighted_diversion(
    market: &Market,
    diversion: &RevenueDiversionMatrix,
    j: &ProductId,
    others: &[ProductId],
) -> Result<f64> {
    let mut sum = 0.0;
    for k in others.iter().filter(|k| *k != j) {
        sum += margin(market, k)? * diversion.require(j, k)?;
    }
    Ok(sum)
}

fn firm_products(market: &Market, firm: &FirmId) -> Result<Vec<ProductId>> {
    let ids: Vec<ProductId> = market.products_of(firm).map(|p| p.id.clone()).collect();
    if ids.is_empty() {
        return Err(Error::UnknownFirm(firm.to_string()));
    }
    Ok(ids)
}

/// Own-price elasticity implied by the multiproduct Bertrand FOC,
/// `ε_jj = -(1 - S_j)/(m_j - S_j)` with `S_j = Σ_{k∈F\j} m_k D^R_{j->k}`.
pub fn own_price_elasticity(
    market: &Market,
    diversion: &RevenueDiversionMatrix,
    firm: &FirmId,
) -> Result<IndexMap<ProductId, f64>> {
    let ids = firm_products(market, firm)?;
    let mut out = IndexMap::new();
    for j in &ids {
        let m_j = margin(market, j)?;
        let s = weighted_diversion(market, diversion, j, &ids)?;
        let denom = m_j - s;
        if !(denom > 0.0) {
            return Err(Error::InconsistentMargins {
                product: j.to_string(),
                detail: format!("m_j - Σ m_k D^R_jk = {denom}"),
            });
        }
        let eps = -(1.0 - s) / denom;
        if !(eps < -1.0) {
            return Err(Error::InconsistentMargins {
                product: j.to_string(),
                detail: format!("implied own-price elasticity {eps} is not below -1"),
            });
        }
        out.insert(j.clone(), eps);
    }
    Ok(out)
}

/// Own-price elasticities of every product of both merging firms.
pub fn merging_elasticities(
    market: &Market,
    diversion: &RevenueDiversionMatrix,
    merger: &MergerSpec,
) -> Result<IndexMap<ProductId, f64>> {
    let mut eps = own_price_elasticity(market, diversion, &merger.firm_a)?;
    eps.extend(own_price_elasticity(market, diversion, &merger.firm_b)?);
    Ok(eps)
}

fn check_merger(market: &Market, merger: &MergerSpec) -> Result<()> {
    let violations = crate::market::validate_merger(market, merger);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(violations))
    }
}

/// `GUPPI_j = c̈_j(1-m_j) + (1+1/ε_jj) Σ_{k∈partner} m_k D^R_{j->k}` for every
/// merging product.
pub fn guppi(
    market: &Market,
    diversion: &RevenueDiversionMatrix,
    merger: &MergerSpec,
) -> Result<IndexMap<ProductId, f64>> {
    check_merger(market, merger)?;
    let eps = merging_elasticities(market, diversion, merger)?;
    let mut out = IndexMap::new();
    for (own, partner) in [(&merger.firm_a, &merger.firm_b), (&merger.firm_b, &merger.firm_a)] {
        let partner_ids = firm_products(market, partner)?;
        for p in market.products_of(own) {
            let s = weighted_diversion(market, diversion, &p.id, &partner_ids)?;
            let e = eps[&p.id];
            let g = merger.efficiency(&p.id) * (1.0 - p.margin) + (1.0 + 1.0 / e) * s;
            out.insert(p.id.clone(), g);
        }
    }
    Ok(out)
}

/// The comparator that treats revenue diversion as quantity diversion:
/// `Σ_{k∈partner} m_k D^R_{j->k}`, with no elasticity adjustment and no efficiencies.
pub fn naive_guppi(
    market: &Market,
    diversion: &RevenueDiversionMatrix,
    merger: &MergerSpec,
) -> Result<IndexMap<ProductId, f64>> {
    check_merger(market, merger)?;
    let mut out = IndexMap::new();
    for (own, partner) in [(&merger.firm_a, &merger.firm_b), (&merger.firm_b, &merger.firm_a)] {
        let partner_ids = firm_products(market, partner)?;
        for p in market.products_of(own) {
            out.insert(p.id.clone(), weighted_diversion(market, diversion, &p.id, &partner_ids)?);
        }
    }
    Ok(out)
}

/// Merger pass-through matrix over the merging products.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PassThroughMatrix {
    pub order: Vec<ProductId>,
    #[serde(serialize_with = "serialize_rows")]
    pub matrix: DMatrix<f64>,
}

pub(crate) fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl PassThroughMatrix {
    pub fn new(order: Vec<ProductId>, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != order.len() || matrix.ncols() != order.len() {
            return Err(Error::DimensionMismatch(format!(
                "pass-through matrix is {}x{} for {} products",
                matrix.nrows(),
                matrix.ncols(),
                order.len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pass-through matrix has non-finite entries"));
        }
        Ok(PassThroughMatrix { order, matrix })
    }

    pub fn identity(order: Vec<ProductId>) -> Self {
        let n = order.len();
        PassThroughMatrix {
            order,
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn get(&self, row: &ProductId, col: &ProductId) -> Option<f64> {
        let i = self.order.iter().position(|p| p == row)?;
        let j = self.order.iter().position(|p| p == col)?;
        Some(self.matrix[(i, j)])
    }
}

/// First-order price effects `p̈ ≈ M · GUPPI`, keyed like `guppis`.
pub fn price_effects(
    guppis: &IndexMap<ProductId, f64>,
    m: &PassThroughMatrix,
) -> Result<IndexMap<ProductId, f64>> {
    if guppis.len() != m.order.len() || m.order.iter().any(|id| !guppis.contains_key(id)) {
        return Err(Error::DimensionMismatch(format!(
            "pass-through matrix covers {} products, GUPPI map has {}",
            m.order.len(),
            guppis.len()
        )));
    }
    let g = DVector::from_iterator(m.order.len(), m.order.iter().map(|id| guppis[id]));
    let p = &m.matrix * g;
    let by_id: IndexMap<&ProductId, f64> = m.order.iter().zip(p.iter().copied()).collect();
    Ok(guppis.keys().map(|id| (id.clone(), by_id[id])).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WelfareEffect {
    /// `-p̈ R`
    pub delta_cs: f64,
    /// `-p̈ R (1 + ε p̈ / 2)`
    pub delta_cs_star: f64,
    /// `-p̈ R (1 + ε p̈)`
    pub delta_cs_double_star: f64,
    /// `(p̈ - c̈(1-m)) R (1 + ε p̈) + ε R p̈ m`
    pub delta_ps: f64,
}

impl std::ops::AddAssign for WelfareEffect {
    fn add_assign(&mut self, o: Self) {
        self.delta_cs += o.delta_cs;
        self.delta_cs_star += o.delta_cs_star;
        self.delta_cs_double_star += o.delta_cs_double_star;
        self.delta_ps += o.delta_ps;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WelfareReport {
    pub per_product: IndexMap<ProductId, WelfareEffect>,
    pub total: WelfareEffect,
}

/// Welfare effect of a ceteris paribus price change of one product.
pub fn product_welfare(p_dd: f64, revenue: f64, margin: f64, eps: f64, c_dd: f64) -> WelfareEffect {
    WelfareEffect {
        delta_cs: -p_dd * revenue,
        delta_cs_star: -p_dd * revenue * (1.0 + 0.5 * eps * p_dd),
        delta_cs_double_star: -p_dd * revenue * (1.0 + eps * p_dd),
        delta_ps: (p_dd - c_dd * (1.0 - margin)) * revenue * (1.0 + eps * p_dd) + eps * revenue * p_dd * margin,
    }
}

/// Per-product and additive total welfare effects of price changes `p_dd`.
pub fn welfare(
    market: &Market,
    p_dd: &IndexMap<ProductId, f64>,
    merger: &MergerSpec,
    eps: &IndexMap<ProductId, f64>,
) -> Result<WelfareReport> {
    let mut per_product = IndexMap::new();
    let mut total = WelfareEffect::default();
    for (id, &p) in p_dd {
        let product = market.product(id).ok_or_else(|| Error::UnknownProduct(id.to_string()))?;
        let e = *eps.get(id).ok_or_else(|| Error::invalid(format!("no elasticity for product {id}")))?;
        if !(p > -1.0) {
            return Err(Error::invalid(format!("price change {p} for product {id} is not above -1")));
        }
        if !(e < -1.0) {
            return Err(Error::InelasticPricing(e));
        }
        let w = product_welfare(p, product.revenue, product.margin, e, merger.efficiency(id));
        total += w;
        per_product.insert(id.clone(), w);
    }
    Ok(WelfareReport { per_product, total })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CmcrResult {
    /// Post-merger margins `m^1` solving the post-merger FOCs at pre-merger ε and D^R.
    pub post_margins: IndexMap<ProductId, f64>,
    /// `c̈_j = (m^0_j - m^1_j)/(1 - m^0_j)`.
    pub cmcr: IndexMap<ProductId, f64>,
    /// 2-norm condition number of the linear system.
    pub condition: f64,
}

impl CmcrResult {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }
}

pub(crate) fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Compensating marginal cost reductions for every merging product.
pub fn cmcr(market: &Market, diversion: &RevenueDiversionMatrix, merger: &MergerSpec) -> Result<CmcrResult> {
    check_merger(market, merger)?;
    let eps = merging_elasticities(market, diversion, merger)?;
    let ids = merger.merging_products(market);
    let n = ids.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for (r, j) in ids.iter().enumerate() {
        let e = eps[j];
        a[(r, r)] = 1.0;
        for (c, l) in ids.iter().enumerate() {
            if c != r {
                a[(r, c)] = -(1.0 + 1.0 / e) * diversion.require(j, l)?;
            }
        }
        b[r] = -1.0 / e;
    }
    let condition = condition_number(&a);
    let m1 = match a.clone().lu().solve(&b) {
        Some(x) if condition.is_finite() && condition < 1e14 && x.iter().all(|v| v.is_finite()) => x,
        _ => return Err(Error::SingularSystem { condition }),
    };
    let mut post_margins = IndexMap::new();
    let mut out = IndexMap::new();
    for (r, j) in ids.iter().enumerate() {
        let m0 = margin(market, j)?;
        post_margins.insert(j.clone(), m1[r]);
        out.insert(j.clone(), (m0 - m1[r]) / (1.0 - m0));
    }
    Ok(CmcrResult {
        post_margins,
        cmcr: out,
        condition,
    })
}

/// Single-product CMCR formula with revenue diversion in place of quantity
/// diversion and relative prices set to one:
/// `(m_j D_jk D_kj + m_k D_jk) / ((1-m_j)(1-D_jk D_kj))`.
pub fn naive_cmcr(
    market: &Market,
    diversion: &RevenueDiversionMatrix,
    merger: &MergerSpec,
) -> Result<IndexMap<ProductId, f64>> {
    check_merger(market, merger)?;
    let a = firm_products(market, &merger.firm_a)?;
    let b = firm_products(market, &merger.firm_b)?;
    if a.len() != 1 || b.len() != 1 {
        return Err(Error::Unsupported(
            "naive CMCR formula requires single-product merging firms".to_owned(),
        ));
    }
    let (j, k) = (&a[0], &b[0]);
    let (m_j, m_k) = (margin(market, j)?, margin(market, k)?);
    let d_jk = diversion.require(j, k)?;
    let d_kj = diversion.require(k, j)?;
    let formula = |m_j: f64, m_k: f64, d_jk: f64, d_kj: f64| {
        (m_j * d_jk * d_kj + m_k * d_jk) / ((1.0 - m_j) * (1.0 - d_jk * d_kj))
    };
    let mut out = IndexMap::new();
    out.insert(j.clone(), formula(m_j, m_k, d_jk, d_kj));
    out.insert(k.clone(), formula(m_k, m_j, d_kj, d_jk));
    Ok(out)
}

/// Marginal cost reduction `-c̈_j` offsetting a GUPPI computed without efficiency credit.
pub fn compensating_efficiency(guppi_no_credit: f64, margin: f64) -> f64 {
    guppi_no_credit / (1.0 - margin)
}

/// One row of an [`EffectsReport`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductEffects {
    pub product: ProductId,
    pub firm: FirmId,
    pub revenue: f64,
    pub margin: f64,
    pub efficiency: f64,
    pub eps: f64,
    pub guppi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_guppi: Option<f64>,
    pub price_effect: f64,
    #[serde(flatten)]
    pub welfare: WelfareEffect,
    pub cmcr: f64,
    pub post_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_cmcr: Option<f64>,
    pub compensating_efficiency: f64,
}

/// Everything the screening statistics say about one merger.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub currency: Option<String>,
    pub products: Vec<ProductEffects>,
    pub total: WelfareEffect,
    pub passthrough: PassThroughMatrix,
    pub cmcr_condition: f64,
    pub caveats: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisOptions {
    /// Add the comparators that treat revenue diversion as quantity diversion.
    pub naive: bool,
    /// Pass-through matrix; identity over the merging products when absent.
    pub passthrough: Option<PassThroughMatrix>,
    /// Notes carried into the report.
    pub caveats: Vec<String>,
}

/// Computes elasticities, GUPPIs, price and welfare effects and CMCRs.
pub fn analyze(
    market: &Market,
    diversion: &RevenueDiversionMatrix,
    merger: &MergerSpec,
    options: AnalysisOptions,
) -> Result<EffectsReport> {
    let eps = merging_elasticities(market, diversion, merger)?;
    let g = guppi(market, diversion, merger)?;
    let mut caveats = options.caveats;
    let m = match options.passthrough {
        Some(m) => m,
        None => {
            caveats.push("pass-through approximated by the identity matrix (p̈ = GUPPI)".to_owned());
            PassThroughMatrix::identity(g.keys().cloned().collect())
        }
    };
    let p_dd = price_effects(&g, &m)?;
    let w = welfare(market, &p_dd, merger, &eps)?;
    let c = cmcr(market, diversion, merger)?;
    if c.ill_conditioned() {
        caveats.push(format!("CMCR system is ill-conditioned (condition number {:.3e})", c.condition));
    }
    let naive = if options.naive {
        Some(naive_guppi(market, diversion, merger)?)
    } else {
        None
    };
    let naive_c = match (&naive, naive_cmcr(market, diversion, merger)) {
        (Some(_), Ok(v)) => Some(v),
        (Some(_), Err(Error::Unsupported(msg))) => {
            caveats.push(msg);
            None
        }
        (Some(_), Err(e)) => return Err(e),
        (None, _) => None,
    };
    let no_credit = MergerSpec {
        efficiencies: Default::default(),
        ..merger.clone()
    };
    let g0 = guppi(market, diversion, &no_credit)?;
    let products = g
        .keys()
        .map(|id| {
            let p = market.product(id).expect("merging product exists");
            ProductEffects {
                product: id.clone(),
                firm: p.firm.clone(),
                revenue: p.revenue,
                margin: p.margin,
                efficiency: merger.efficiency(id),
                eps: eps[id],
                guppi: g[id],
                naive_guppi: naive.as_ref().map(|n| n[id]),
                price_effect: p_dd[id],
                welfare: w.per_product[id],
                cmcr: c.cmcr[id],
                post_margin: c.post_margins[id],
                naive_cmcr: naive_c.as_ref().map(|n| n[id]),
                compensating_efficiency: compensating_efficiency(g0[id], p.margin),
            }
        })
        .collect();
    Ok(EffectsReport {
        currency: market.currency.clone(),
        products,
        total: w.total,
        passthrough: m,
        cmcr_condition: c.condition,
        caveats,
    })
}

impl EffectsReport {
    /// Table with percentages to one decimal and currency amounts rounded.
    pub fn table(&self) -> Table {
        let naive = self.products.iter().any(|p| p.naive_guppi.is_some());
        let naive_cmcr = self.products.iter().any(|p| p.naive_cmcr.is_some());
        let mut headers = vec!["product", "firm", "margin", "eps", "GUPPI"];
        if naive {
            headers.push("naive GUPPI");
        }
        headers.extend(["price effect", "dCS", "dCS*", "dCS**", "dPS", "CMCR"]);
        if naive_cmcr {
            headers.push("naive CMCR");
        }
        headers.push("comp. efficiency");
        let mut t = Table::new(headers);
        for p in &self.products {
            let mut row = vec![
                p.product.to_string(),
                p.firm.to_string(),
                pct(p.margin),
                format!("{:.3}", p.eps),
                pct(p.guppi),
            ];
            if naive {
                row.push(p.naive_guppi.map(pct).unwrap_or_default());
            }
            row.extend([
                pct(p.price_effect),
                money(p.welfare.delta_cs),
                money(p.welfare.delta_cs_star),
                money(p.welfare.delta_cs_double_star),
                money(p.welfare.delta_ps),
                pct(-p.cmcr),
            ]);
            if naive_cmcr {
                row.push(p.naive_cmcr.map(pct).unwrap_or_default());
            }
            row.push(pct(p.compensating_efficiency));
            t.push(row);
        }
        let mut total = vec!["total".to_owned(), String::new(), String::new(), String::new(), String::new()];
        if naive {
            total.push(String::new());
        }
        total.extend([
            String::new(),
            money(self.total.delta_cs),
            money(self.total.delta_cs_star),
            money(self.total.delta_cs_double_star),
            money(self.total.delta_ps),
        ]);
        t.push(total);
        t
    }

    pub fn render_text(&self) -> String {
        let mut out = self.table().render();
        if let Some(c) = &self.currency {
            out.push_str(&format!("amounts in {c}\n"));
        }
        for c in &self.caveats {
            out.push_str(&format!("note: {c}\n"));
        }
        out
    }
}
