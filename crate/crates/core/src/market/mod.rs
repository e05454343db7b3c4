//! Observed-data markets: products with revenues and relative margins, the
//! firm partition, revenue diversion ratios and merger descriptions.
//!
//! Prices and quantities never appear here. Everything downstream of this
//! module works from revenues `R_j`, relative margins `m_j = (p_j - c_j)/p_j`
//! and revenue diversion ratios `D^R_{j->k}`.

mod io;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_market, market_from_json_str, market_to_json_string, save_market, ExpenditureShares,
    Format, LoadedMarket,
};

/// Reserved identifier of the outside option.
pub const OUTSIDE: &str = "OUTSIDE";

/// Identifier of a product (a store, a brand, a product cluster).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductId(String);

impl ProductId {
    pub fn new(id: impl Into<String>) -> Self {
        ProductId(id.into())
    }

    pub fn outside() -> Self {
        ProductId(OUTSIDE.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_outside(&self) -> bool {
        self.0 == OUTSIDE
    }
}

impl fmt::Display for ProductId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ProductId {
    fn from(s: &str) -> Self {
        ProductId(s.to_owned())
    }
}

/// Identifier of a (multiproduct) firm.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FirmId(String);

impl FirmId {
    pub fn new(id: impl Into<String>) -> Self {
        FirmId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FirmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FirmId {
    fn from(s: &str) -> Self {
        FirmId(s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Product {
    pub id: ProductId,
    pub firm: FirmId,
    pub revenue: f64,
    /// Relative margin `(p - c) / p`.
    pub margin: f64,
}

impl Product {
    pub fn new(id: &str, firm: &str, revenue: f64, margin: f64) -> Self {
        Product {
            id: ProductId::new(id),
            firm: FirmId::new(firm),
            revenue,
            margin,
        }
    }
}

/// A market as the analyst observes it.
///
/// Fields are public so malformed markets can be represented and reported on
/// by [`validate`]; [`Market::new`] is the checked constructor.
#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    pub products: Vec<Product>,
    /// Opaque unit tag for revenues, carried through to reports.
    pub currency: Option<String>,
}

impl Market {
    /// Builds a market and rejects it if any product-level invariant fails.
    pub fn new(products: Vec<Product>) -> Result<Self> {
        if products.is_empty() {
            return Err(Error::NoProducts);
        }
        let market = Market {
            products,
            currency: None,
        };
        let violations = validate_products(&market);
        if violations.is_empty() {
            Ok(market)
        } else {
            Err(Error::Invalid(violations))
        }
    }

    pub fn with_currency(mut self, currency: impl Into<String>) -> Self {
        self.currency = Some(currency.into());
        self
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn ids(&self) -> Vec<ProductId> {
        self.products.iter().map(|p| p.id.clone()).collect()
    }

    pub fn product(&self, id: &ProductId) -> Option<&Product> {
        self.products.iter().find(|p| &p.id == id)
    }

    pub fn index_of(&self, id: &ProductId) -> Option<usize> {
        self.products.iter().position(|p| &p.id == id)
    }

    /// Firms in order of first appearance.
    pub fn firms(&self) -> Vec<FirmId> {
        let mut seen = HashSet::new();
        self.products
            .iter()
            .filter(|p| seen.insert(p.firm.clone()))
            .map(|p| p.firm.clone())
            .collect()
    }

    pub fn has_firm(&self, firm: &FirmId) -> bool {
        self.products.iter().any(|p| &p.firm == firm)
    }

    pub fn products_of<'a>(&'a self, firm: &'a FirmId) -> impl Iterator<Item = &'a Product> + 'a {
        self.products.iter().filter(move |p| &p.firm == firm)
    }

    pub fn total_revenue(&self) -> f64 {
        self.products.iter().map(|p| p.revenue).sum()
    }

    /// Copy of the market with every revenue multiplied by `factor`.
    pub fn scaled_revenues(&self, factor: f64) -> Market {
        let mut out = self.clone();
        for p in &mut out.products {
            p.revenue *= factor;
        }
        out
    }
}

/// Square matrix of revenue diversion ratios, `value(j, k) = D^R_{j->k}`.
///
/// Unknown entries are stored as `NaN` and reported as `None` by
/// [`RevenueDiversionMatrix::get`]. The diagonal holds the self-pair
/// convention `-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RevenueDiversionMatrix {
    order: Vec<ProductId>,
    values: DMatrix<f64>,
}

impl RevenueDiversionMatrix {
    pub fn new(order: Vec<ProductId>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != order.len() || values.ncols() != order.len() {
            return Err(Error::DimensionMismatch(format!(
                "diversion matrix is {}x{} but order lists {} products",
                values.nrows(),
                values.ncols(),
                order.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &order {
            if !seen.insert(id) {
                return Err(Error::invalid(format!("product {id} listed twice in diversion order")));
            }
        }
        Ok(RevenueDiversionMatrix { order, values })
    }

    /// Matrix with the self-pair convention on the diagonal and every
    /// off-diagonal entry unknown.
    pub fn unknown(order: Vec<ProductId>) -> Self {
        let n = order.len();
        let values = DMatrix::from_fn(n, n, |i, j| if i == j { -1.0 } else { f64::NAN });
        RevenueDiversionMatrix { order, values }
    }

    /// Builds a matrix from `(from, to, value)` triples; pairs not listed are unknown.
    pub fn from_pairs<'a>(
        order: Vec<ProductId>,
        pairs: impl IntoIterator<Item = (&'a ProductId, &'a ProductId, f64)>,
    ) -> Result<Self> {
        let mut out = RevenueDiversionMatrix::unknown(order);
        for (from, to, value) in pairs {
            let i = out.index_of(from).ok_or_else(|| Error::UnknownProduct(from.to_string()))?;
            let j = out.index_of(to).ok_or_else(|| Error::UnknownProduct(to.to_string()))?;
            out.values[(i, j)] = value;
        }
        Ok(out)
    }

    pub fn order(&self) -> &[ProductId] {
        &self.order
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn index_of(&self, id: &ProductId) -> Option<usize> {
        self.order.iter().position(|p| p == id)
    }

    pub fn has_outside(&self) -> bool {
        self.order.iter().any(ProductId::is_outside)
    }

    /// `D^R_{from->to}`, or `None` when either product is absent or the entry is unknown.
    pub fn get(&self, from: &ProductId, to: &ProductId) -> Option<f64> {
        let i = self.index_of(from)?;
        let j = self.index_of(to)?;
        let v = self.values[(i, j)];
        (!v.is_nan()).then_some(v)
    }

    /// Like [`get`](Self::get) but reports the missing pair as an error.
    pub fn require(&self, from: &ProductId, to: &ProductId) -> Result<f64> {
        self.get(from, to).ok_or_else(|| Error::MissingDiversion {
            from: from.to_string(),
            to: to.to_string(),
        })
    }

    pub fn set(&mut self, from: &ProductId, to: &ProductId, value: f64) -> Result<()> {
        let i = self.index_of(from).ok_or_else(|| Error::UnknownProduct(from.to_string()))?;
        let j = self.index_of(to).ok_or_else(|| Error::UnknownProduct(to.to_string()))?;
        self.values[(i, j)] = value;
        Ok(())
    }

    /// Reorders the matrix to `order`; products absent from `self` get unknown
    /// rows and columns (and `-1` on the diagonal).
    pub fn aligned_to(&self, order: &[ProductId]) -> RevenueDiversionMatrix {
        let n = order.len();
        let idx: Vec<Option<usize>> = order.iter().map(|id| self.index_of(id)).collect();
        let values = DMatrix::from_fn(n, n, |i, j| match (idx[i], idx[j]) {
            (Some(a), Some(b)) => self.values[(a, b)],
            _ if i == j => -1.0,
            _ => f64::NAN,
        });
        RevenueDiversionMatrix {
            order: order.to_vec(),
            values,
        }
    }
}

/// How GUPPIs are translated into first-order price effects.
#[derive(Clone, Debug, PartialEq)]
pub enum PassthroughMode {
    /// `M = I`, so each price effect equals the product's GUPPI.
    Identity,
    /// Closed-form 2x2 matrix for single-product firms and one CES consumer.
    CesClosedForm,
    /// User-supplied matrix over the merging products.
    Explicit {
        order: Vec<ProductId>,
        matrix: DMatrix<f64>,
    },
}

impl Default for PassthroughMode {
    fn default() -> Self {
        PassthroughMode::Identity
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergerSpec {
    pub firm_a: FirmId,
    pub firm_b: FirmId,
    /// Percentage marginal cost changes `c̈_j` in `(-1, 0]`; absent products get 0.
    pub efficiencies: BTreeMap<ProductId, f64>,
    pub passthrough: PassthroughMode,
}

impl MergerSpec {
    pub fn new(firm_a: &str, firm_b: &str) -> Self {
        MergerSpec {
            firm_a: FirmId::new(firm_a),
            firm_b: FirmId::new(firm_b),
            efficiencies: BTreeMap::new(),
            passthrough: PassthroughMode::Identity,
        }
    }

    pub fn with_efficiency(mut self, product: &str, value: f64) -> Self {
        self.efficiencies.insert(ProductId::new(product), value);
        self
    }

    pub fn with_passthrough(mut self, mode: PassthroughMode) -> Self {
        self.passthrough = mode;
        self
    }

    pub fn efficiency(&self, id: &ProductId) -> f64 {
        self.efficiencies.get(id).copied().unwrap_or(0.0)
    }

    pub fn is_merging(&self, firm: &FirmId) -> bool {
        firm == &self.firm_a || firm == &self.firm_b
    }

    /// The merger counterparty of `firm`, if `firm` is one of the parties.
    pub fn counterparty(&self, firm: &FirmId) -> Option<&FirmId> {
        if firm == &self.firm_a {
            Some(&self.firm_b)
        } else if firm == &self.firm_b {
            Some(&self.firm_a)
        } else {
            None
        }
    }

    /// Merging products: firm A's in market order, then firm B's.
    pub fn merging_products(&self, market: &Market) -> Vec<ProductId> {
        market
            .products_of(&self.firm_a)
            .chain(market.products_of(&self.firm_b))
            .map(|p| p.id.clone())
            .collect()
    }

    /// Ownership map after the merger: firm B's products move to firm A.
    pub fn post_merger_owner(&self, firm: &FirmId) -> FirmId {
        if firm == &self.firm_b {
            self.firm_a.clone()
        } else {
            firm.clone()
        }
    }
}

/// The invariant a [`Violation`] breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyId,
    ReservedId,
    DuplicateProduct,
    EmptyFirm,
    MarginOutOfRange,
    NegativeRevenue,
    NonFiniteValue,
    SelfDiversion,
    NegativeOffDiagonal,
    DiversionAboveOne,
    RowSumAboveOne,
    UnknownDiversionProduct,
    SameFirm,
    UnknownFirm,
    FewerThanTwoFirms,
    EfficiencyOutsideMerger,
    EfficiencyOutOfRange,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::EmptyId => "empty product id",
            Rule::ReservedId => "OUTSIDE is reserved for the outside option",
            Rule::DuplicateProduct => "duplicate product id",
            Rule::EmptyFirm => "empty firm id",
            Rule::MarginOutOfRange => "margin outside (0, 1)",
            Rule::NegativeRevenue => "negative revenue",
            Rule::NonFiniteValue => "non-finite value",
            Rule::SelfDiversion => "self-diversion must be -1",
            Rule::NegativeOffDiagonal => "negative off-diagonal diversion",
            Rule::DiversionAboveOne => "diversion ratio above 1",
            Rule::RowSumAboveOne => "diversion row sum including outside above 1",
            Rule::UnknownDiversionProduct => "diversion references a product not in the market",
            Rule::SameFirm => "merging firms must differ",
            Rule::UnknownFirm => "unknown firm reference",
            Rule::FewerThanTwoFirms => "a merger needs at least two firms",
            Rule::EfficiencyOutsideMerger => "efficiency given for a non-merging product",
            Rule::EfficiencyOutOfRange => "efficiency outside (-1, 0]",
        }
    }
}

/// One broken invariant, with the product/firm it concerns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub subject: String,
    pub rule: Rule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl Violation {
    fn new(subject: impl Into<String>, rule: Rule, value: Option<f64>) -> Self {
        Violation {
            subject: subject.into(),
            rule,
            value,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule.describe())?;
        if let Some(v) = self.value {
            write!(f, " (got {v})")?;
        }
        Ok(())
    }
}

fn validate_products(market: &Market) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (row, p) in market.products.iter().enumerate() {
        let subject = if p.id.as_str().is_empty() {
            format!("products[{row}]")
        } else {
            format!("product {}", p.id)
        };
        if p.id.as_str().is_empty() {
            out.push(Violation::new(&subject, Rule::EmptyId, None));
        } else if p.id.is_outside() {
            out.push(Violation::new(&subject, Rule::ReservedId, None));
        } else if !seen.insert(&p.id) {
            out.push(Violation::new(&subject, Rule::DuplicateProduct, None));
        }
        if p.firm.as_str().is_empty() {
            out.push(Violation::new(&subject, Rule::EmptyFirm, None));
        }
        if !p.margin.is_finite() || !p.revenue.is_finite() {
            out.push(Violation::new(&subject, Rule::NonFiniteValue, None));
        }
        if !(p.margin > 0.0 && p.margin < 1.0) && p.margin.is_finite() {
            out.push(Violation::new(&subject, Rule::MarginOutOfRange, Some(p.margin)));
        }
        if p.revenue < 0.0 {
            out.push(Violation::new(&subject, Rule::NegativeRevenue, Some(p.revenue)));
        }
    }
    out
}

/// Checks every market and diversion invariant and returns the findings.
///
/// An empty result means the inputs are valid. Never panics on malformed
/// values (NaN, out-of-range, unknown ids).
pub fn validate(market: &Market, diversion: &RevenueDiversionMatrix) -> Vec<Violation> {
    let mut out = validate_products(market);
    let order = diversion.order();
    let values = diversion.values();
    let outside = order.iter().position(ProductId::is_outside);
    for (i, from) in order.iter().enumerate() {
        if !from.is_outside() && market.index_of(from).is_none() {
            out.push(Violation::new(
                format!("diversion product {from}"),
                Rule::UnknownDiversionProduct,
                None,
            ));
        }
        let diag = values[(i, i)];
        if diag != -1.0 {
            out.push(Violation::new(format!("diversion {from} -> {from}"), Rule::SelfDiversion, Some(diag)));
        }
        if from.is_outside() {
            continue;
        }
        let mut row_sum = 0.0;
        let mut row_known = true;
        for (j, to) in order.iter().enumerate() {
            if i == j {
                continue;
            }
            let v = values[(i, j)];
            if v.is_nan() {
                row_known = false;
                continue;
            }
            let subject = format!("diversion {from} -> {to}");
            if !v.is_finite() {
                out.push(Violation::new(subject, Rule::NonFiniteValue, None));
                row_known = false;
                continue;
            }
            if v < 0.0 {
                out.push(Violation::new(subject, Rule::NegativeOffDiagonal, Some(v)));
            } else if v > 1.0 {
                out.push(Violation::new(subject, Rule::DiversionAboveOne, Some(v)));
            }
            row_sum += v;
        }
        // Row sums are only meaningful when the outside column is observed.
        if outside.is_some() && row_known && row_sum > 1.0 + 1e-9 {
            out.push(Violation::new(format!("diversion row {from}"), Rule::RowSumAboveOne, Some(row_sum)));
        }
    }
    out
}

/// Checks the merger description against the market.
pub fn validate_merger(market: &Market, merger: &MergerSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if merger.firm_a == merger.firm_b {
        out.push(Violation::new(format!("firm {}", merger.firm_a), Rule::SameFirm, None));
    }
    for firm in [&merger.firm_a, &merger.firm_b] {
        if !market.has_firm(firm) {
            out.push(Violation::new(format!("firm {firm}"), Rule::UnknownFirm, None));
        }
    }
    if market.firms().len() < 2 {
        out.push(Violation::new("market", Rule::FewerThanTwoFirms, None));
    }
    for (id, &value) in &merger.efficiencies {
        let subject = format!("efficiency {id}");
        match market.product(id) {
            Some(p) if merger.is_merging(&p.firm) => {}
            _ => out.push(Violation::new(&subject, Rule::EfficiencyOutsideMerger, None)),
        }
        if !(value > -1.0 && value <= 0.0) {
            out.push(Violation::new(&subject, Rule::EfficiencyOutOfRange, Some(value)));
        }
    }
    out
}

/// Convenience: ordered map keyed by product.
pub type ProductMap<T> = IndexMap<ProductId, T>;

#[cfg(test)]
mod tests {
    use super::*;

    fn two_firm() -> (Market, RevenueDiversionMatrix) {
        let market = Market::new(vec![
            Product::new("a", "F", 100.0, 0.3),
            Product::new("b", "G", 50.0, 0.4),
        ])
        .unwrap();
        let order = market.ids();
        let d = RevenueDiversionMatrix::new(order, DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.3, -1.0]))
            .unwrap();
        (market, d)
    }

    #[test]
    fn valid_market_has_no_violations() {
        let (m, d) = two_firm();
        assert!(validate(&m, &d).is_empty());
    }

    #[test]
    fn negative_off_diagonal_is_reported() {
        let (m, mut d) = two_firm();
        d.set(&"a".into(), &"b".into(), -0.1).unwrap();
        let v = validate(&m, &d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::NegativeOffDiagonal);
        assert!(v[0].to_string().contains("negative off-diagonal diversion"));
    }

    #[test]
    fn zero_diagonal_is_reported() {
        let (m, mut d) = two_firm();
        d.set(&"b".into(), &"b".into(), 0.0).unwrap();
        let v = validate(&m, &d);
        assert_eq!(v[0].rule, Rule::SelfDiversion);
        assert!(v[0].to_string().contains("self-diversion must be -1"));
    }

    #[test]
    fn validate_is_total_on_garbage() {
        let market = Market {
            products: vec![
                Product::new("", "", f64::NAN, f64::INFINITY),
                Product::new("x", "F", -1.0, 1.5),
                Product::new("x", "F", 1.0, 0.5),
            ],
            currency: None,
        };
        let d = RevenueDiversionMatrix::new(
            vec!["x".into(), "ghost".into(), ProductId::outside()],
            DMatrix::from_row_slice(3, 3, &[0.0, 2.0, f64::INFINITY, f64::NAN, -1.0, 0.0, 0.5, 0.5, 7.0]),
        )
        .unwrap();
        let v = validate(&market, &d);
        let rules: Vec<Rule> = v.iter().map(|v| v.rule).collect();
        for r in [
            Rule::EmptyId,
            Rule::EmptyFirm,
            Rule::NonFiniteValue,
            Rule::MarginOutOfRange,
            Rule::NegativeRevenue,
            Rule::DuplicateProduct,
            Rule::UnknownDiversionProduct,
            Rule::SelfDiversion,
            Rule::DiversionAboveOne,
        ] {
            assert!(rules.contains(&r), "missing {r:?} in {rules:?}");
        }
    }

    #[test]
    fn row_sum_checked_only_with_outside_column() {
        let market = Market::new(vec![
            Product::new("a", "F", 1.0, 0.3),
            Product::new("b", "G", 1.0, 0.3),
        ])
        .unwrap();
        let order = vec!["a".into(), "b".into(), ProductId::outside()];
        let d = RevenueDiversionMatrix::new(
            order,
            DMatrix::from_row_slice(3, 3, &[-1.0, 0.7, 0.6, 0.5, -1.0, 0.5, 0.0, 0.0, -1.0]),
        )
        .unwrap();
        let v = validate(&market, &d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::RowSumAboveOne);
        assert_eq!(v[0].subject, "diversion row a");
    }

    #[test]
    fn merger_checks() {
        let (m, _) = two_firm();
        let ok = MergerSpec::new("F", "G").with_efficiency("a", -0.05);
        assert!(validate_merger(&m, &ok).is_empty());
        let bad = MergerSpec::new("F", "F").with_efficiency("a", 0.1);
        let rules: Vec<Rule> = validate_merger(&m, &bad).iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::SameFirm));
        assert!(rules.contains(&Rule::EfficiencyOutOfRange));
        let ghost = MergerSpec::new("F", "Nobody");
        assert_eq!(validate_merger(&m, &ghost)[0].rule, Rule::UnknownFirm);
    }

    #[test]
    fn aligned_to_fills_unknowns() {
        let (_, d) = two_firm();
        let order: Vec<ProductId> = vec!["b".into(), "c".into(), "a".into()];
        let a = d.aligned_to(&order);
        assert_eq!(a.get(&"b".into(), &"a".into()), Some(0.3));
        assert_eq!(a.get(&"c".into(), &"c".into()), Some(-1.0));
        assert_eq!(a.get(&"c".into(), &"a".into()), None);
        assert!(a.require(&"a".into(), &"c".into()).is_err());
    }

    #[test]
    fn market_constructor_rejects_bad_margin() {
        let err = Market::new(vec![Product::new("SP", "S", 1.0, 1.2)]).unwrap_err();
        assert!(err.to_string().contains("product SP"), "{err}");
        assert!(matches!(Market::new(vec![]), Err(Error::NoProducts)));
    }
}
