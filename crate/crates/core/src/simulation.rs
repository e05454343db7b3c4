//! CES merger simulation in percentage-price-change space.
//!
//! Price levels are never needed. A candidate vector of price changes `p̈`
//! moves utilities by `(1-η) log(1+p̈_j)`, which pins down post-merger shares,
//! elasticities and revenue diversion ratios; margins move as
//! `m^post = 1 - (1-m)(1+c̈)/(1+p̈)`. The post-merger equilibrium solves the
//! FOC system `f(p̈) = 0` under the merged ownership.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::ces::{revenue_diversion, revenue_elasticities, shares, CesEconomy, ShareTable};
use crate::effects::condition_number;
use crate::error::{Error, Result};
use crate::market::{FirmId, Market, MergerSpec, ProductId, RevenueDiversionMatrix};
use crate::solver::{newton, NewtonConfig};

/// Supplied-vs-implied margin gaps above this are reported.
pub const MARGIN_GAP_WARNING: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationProblem {
    economy: CesEconomy,
    market: Market,
    products: Vec<ProductId>,
    pre_owner: Vec<FirmId>,
    post_owner: Vec<FirmId>,
    efficiencies: Vec<f64>,
}

impl SimulationProblem {
    /// Problem for `merger`: firm B's products join firm A, efficiencies taken from `merger`.
    pub fn new(economy: CesEconomy, market: Market, merger: &MergerSpec) -> Result<Self> {
        let violations = crate::market::validate_merger(&market, merger);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        let owners = market
            .products
            .iter()
            .map(|p| (p.id.clone(), merger.post_merger_owner(&p.firm)))
            .collect();
        let eff = merger.efficiencies.iter().map(|(k, v)| (k.clone(), *v)).collect();
        Self::with_ownership(economy, market, owners, eff)
    }

    /// Problem with an arbitrary post-merger ownership and efficiencies
    /// (products not listed keep their owner / get `c̈ = 0`).
    pub fn with_ownership(
        economy: CesEconomy,
        market: Market,
        post_owner: IndexMap<ProductId, FirmId>,
        efficiencies: IndexMap<ProductId, f64>,
    ) -> Result<Self> {
        economy.check()?;
        let products = market.ids();
        for j in economy.products() {
            if market.index_of(&j).is_none() {
                return Err(Error::MissingMargin(j.to_string()));
            }
        }
        let considered = economy.products();
        for j in &products {
            if !considered.contains(j) {
                return Err(Error::invalid(format!("product {j} has no pre-merger utility")));
            }
        }
        for (j, c) in &efficiencies {
            if market.index_of(j).is_none() {
                return Err(Error::UnknownProduct(j.to_string()));
            }
            if !(*c > -1.0 && *c <= 0.0) {
                return Err(Error::invalid(format!("efficiency {c} for {j} outside (-1, 0]")));
            }
        }
        let pre_owner: Vec<FirmId> = market.products.iter().map(|p| p.firm.clone()).collect();
        let post: Vec<FirmId> = market
            .products
            .iter()
            .map(|p| post_owner.get(&p.id).cloned().unwrap_or_else(|| p.firm.clone()))
            .collect();
        let eff = products.iter().map(|j| efficiencies.get(j).copied().unwrap_or(0.0)).collect();
        let problem = SimulationProblem {
            economy,
            market,
            products,
            pre_owner,
            post_owner: post,
            efficiencies: eff,
        };
        let bad = crate::market::validate(&problem.market, &RevenueDiversionMatrix::unknown(problem.products.clone()));
        if !bad.is_empty() {
            return Err(Error::Invalid(bad));
        }
        Ok(problem)
    }

    /// The same market with pre-merger ownership and no efficiencies.
    pub fn pre_merger(&self) -> SimulationProblem {
        SimulationProblem {
            post_owner: self.pre_owner.clone(),
            efficiencies: vec![0.0; self.products.len()],
            ..self.clone()
        }
    }

    pub fn products(&self) -> &[ProductId] {
        &self.products
    }

    pub fn economy(&self) -> &CesEconomy {
        &self.economy
    }

    pub fn market(&self) -> &Market {
        &self.market
    }

    /// Products whose owner changes partner set, i.e. the merging products.
    pub fn merging_products(&self) -> Vec<ProductId> {
        (0..self.products.len())
            .filter(|&j| self.new_partners(j).next().is_some() || self.efficiencies[j] != 0.0)
            .map(|j| self.products[j].clone())
            .collect()
    }

    /// Products owned with `j` after the merger but not before.
    fn new_partners(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.products.len())
            .filter(move |&k| k != j && self.post_owner[k] == self.post_owner[j] && self.pre_owner[k] != self.pre_owner[j])
    }
}

/// Post-merger objects at a candidate `p̈`.
#[derive(Clone, Debug, PartialEq)]
pub struct PostMergerState {
    pub p_dd: Vec<f64>,
    pub economy: CesEconomy,
    pub shares: ShareTable,
    /// Own-price elasticities of quantity.
    pub eps: Vec<f64>,
    pub diversion: RevenueDiversionMatrix,
    pub margins: Vec<f64>,
}

/// Computes utilities, shares, elasticities, diversion ratios and margins at `p_dd`
/// (ordered like [`SimulationProblem::products`]).
pub fn post_merger_state(problem: &SimulationProblem, p_dd: &[f64]) -> Result<PostMergerState> {
    if p_dd.len() != problem.products.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} price changes for {} products",
            p_dd.len(),
            problem.products.len()
        )));
    }
    if let Some((j, p)) = problem.products.iter().zip(p_dd).find(|(_, p)| !(**p > -1.0)) {
        return Err(Error::invalid(format!("price change {p} for {j} is not above -1")));
    }
    let eta = problem.economy.eta;
    let mut economy = problem.economy.clone();
    for c in &mut economy.consumers {
        for (j, p) in problem.products.iter().zip(p_dd) {
            if let Some(u) = c.utilities.get_mut(j) {
                *u += (1.0 - eta) * p.ln_1p();
            }
        }
    }
    let table = shares(&economy);
    let eps_r = revenue_elasticities(&table, eta);
    let eps = problem.products.iter().map(|j| eps_r[j] - 1.0).collect();
    let diversion = revenue_diversion(&table)?;
    let margins = problem
        .market
        .products
        .iter()
        .zip(&problem.efficiencies)
        .zip(p_dd)
        .map(|((p, c), dp)| 1.0 - (1.0 - p.margin) * (1.0 + c) / (1.0 + dp))
        .collect();
    Ok(PostMergerState {
        p_dd: p_dd.to_vec(),
        economy,
        shares: table,
        eps,
        diversion,
        margins,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FocResidual {
    pub values: Vec<f64>,
    /// Some `ε^post_jj ≥ -1`: the candidate lies outside the elastic region.
    pub out_of_region: bool,
}

impl FocResidual {
    pub fn norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn residual_from_state(problem: &SimulationProblem, state: &PostMergerState) -> FocResidual {
    let n = problem.products.len();
    let d = state.diversion.values();
    let idx: Vec<usize> = problem
        .products
        .iter()
        .map(|j| state.diversion.index_of(j).expect("every product is considered"))
        .collect();
    let mut out_of_region = false;
    let values = (0..n)
        .map(|j| {
            let e = state.eps[j];
            out_of_region |= !(e < -1.0);
            let s: f64 = (0..n)
                .filter(|&l| l != j && problem.post_owner[l] == problem.post_owner[j])
                .map(|l| state.margins[l] * d[(idx[j], idx[l])])
                .sum();
            -1.0 / e - state.margins[j] + (1.0 + 1.0 / e) * s
        })
        .collect();
    FocResidual { values, out_of_region }
}

/// Post-merger FOC residuals `-1/ε_jj - m_j + (1+1/ε_jj) Σ_{l∈F\j} m_l D^R_{j->l}`.
pub fn foc_residual(problem: &SimulationProblem, p_dd: &[f64]) -> Result<FocResidual> {
    let state = post_merger_state(problem, p_dd)?;
    Ok(residual_from_state(problem, &state))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub newton: NewtonConfig,
    pub fixed_point_iterations: usize,
    pub fixed_point_damping: f64,
    /// Re-solve from `p̈ = 0` and `p̈ = 2·GUPPI` and compare.
    pub check_uniqueness: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            newton: NewtonConfig {
                lower_bound: Some(-0.99),
                ..NewtonConfig::default()
            },
            fixed_point_iterations: 2000,
            fixed_point_damping: 0.5,
            check_uniqueness: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductOutcome {
    pub product: ProductId,
    pub price_change: f64,
    pub post_share: f64,
    pub post_margin: f64,
    pub post_eps: f64,
    pub revenue_pre: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    pub products: Vec<ProductOutcome>,
    /// Post-merger revenue diversion among the market's products (rows and
    /// columns in product order, outside option last).
    pub post_diversion: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: String,
    /// Set when restarts from other points reach a different root.
    pub non_unique: bool,
    pub warnings: Vec<String>,
}

impl SimulationResult {
    pub fn price_changes(&self) -> IndexMap<ProductId, f64> {
        self.products.iter().map(|p| (p.product.clone(), p.price_change)).collect()
    }

    /// First-order consumer harm `Σ p̈_j R_j` (positive for a loss).
    pub fn first_order_harm(&self) -> f64 {
        self.products.iter().map(|p| p.price_change * p.revenue_pre).sum()
    }
}

/// GUPPIs of the problem at the pre-merger point under CES elasticities and
/// diversion ratios; zero for products whose partner set does not change.
pub fn ces_guppi(problem: &SimulationProblem) -> Result<Vec<f64>> {
    let n = problem.products.len();
    let state = post_merger_state(problem, &vec![0.0; n])?;
    let d = state.diversion.values();
    let idx: Vec<usize> = problem.products.iter().map(|j| state.diversion.index_of(j).unwrap()).collect();
    Ok((0..n)
        .map(|j| {
            let p = &problem.market.products[j];
            let e = state.eps[j];
            let s: f64 = problem.new_partners(j).map(|k| problem.market.products[k].margin * d[(idx[j], idx[k])]).sum();
            problem.efficiencies[j] * (1.0 - p.margin) + (1.0 + 1.0 / e) * s
        })
        .collect())
}

fn residual_fn(problem: &SimulationProblem) -> impl Fn(&DVector<f64>) -> Option<DVector<f64>> + '_ {
    move |x: &DVector<f64>| {
        let r = foc_residual(problem, x.as_slice()).ok()?;
        if r.out_of_region || r.values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(DVector::from_vec(r.values))
    }
}

/// Damped fixed-point iteration on the margin form of the FOCs.
fn fixed_point(problem: &SimulationProblem, start: &[f64], config: &SimulationConfig) -> Option<Vec<f64>> {
    let n = problem.products.len();
    let mut p = start.to_vec();
    for _ in 0..config.fixed_point_iterations {
        let state = post_merger_state(problem, &p).ok()?;
        let r = residual_from_state(problem, &state);
        if r.out_of_region {
            return None;
        }
        if r.norm() < 1e-8 {
            return Some(p);
        }
        // Target margins satisfy the FOC at the current elasticities and diversions.
        let target: Vec<f64> = (0..n).map(|j| state.margins[j] + r.values[j]).collect();
        for j in 0..n {
            let m0 = problem.market.products[j].margin;
            let implied = (1.0 - m0) * (1.0 + problem.efficiencies[j]) / (1.0 - target[j].min(0.999)) - 1.0;
            let next = (1.0 - config.fixed_point_damping) * p[j] + config.fixed_point_damping * implied;
            p[j] = next.max(-0.99);
        }
    }
    None
}

fn solve_from(problem: &SimulationProblem, start: &[f64], config: &SimulationConfig) -> (crate::solver::NewtonOutcome, String) {
    let f = residual_fn(problem);
    let out = newton(&f, DVector::from_column_slice(start), &config.newton);
    if out.converged {
        return (out, "newton".to_owned());
    }
    if let Some(p) = fixed_point(problem, start, config) {
        let polished = newton(&f, DVector::from_vec(p), &config.newton);
        if polished.converged || polished.residual_norm < out.residual_norm {
            return (polished, "fixed-point + newton".to_owned());
        }
    }
    (out, "newton".to_owned())
}

/// Solves the post-merger equilibrium from the GUPPI warm start.
///
/// Failure to converge is reported through `converged = false`, not as an error.
pub fn simulate(problem: &SimulationProblem, config: &SimulationConfig) -> Result<SimulationResult> {
    let n = problem.products.len();
    let mut warnings = Vec::new();
    let pre = foc_residual(&problem.pre_merger(), &vec![0.0; n])?;
    if pre.norm() > 1e-6 {
        warnings.push(format!(
            "pre-merger market is not self-consistent under CES (FOC residual {:.3e}); see the consistency check",
            pre.norm()
        ));
    }
    let guppi = ces_guppi(problem)?;
    let (out, method) = solve_from(problem, &guppi, config);
    let mut non_unique = false;
    if out.converged && config.check_uniqueness {
        let zero = vec![0.0; n];
        let double: Vec<f64> = guppi.iter().map(|g| 2.0 * g).collect();
        for start in [zero, double] {
            let (alt, _) = solve_from(problem, &start, config);
            if alt.converged && (&alt.x - &out.x).amax() > 1e-6 {
                non_unique = true;
                warnings.push(format!(
                    "a restart reached a different equilibrium (max difference {:.3e})",
                    (&alt.x - &out.x).amax()
                ));
            }
        }
    }
    if !out.converged {
        warnings.push(format!(
            "solver stopped after {} iterations with residual {:.3e}",
            out.iterations, out.residual_norm
        ));
    }
    let state = post_merger_state(problem, out.x.as_slice())?;
    let agg = state.shares.aggregate();
    let mut order = problem.products.clone();
    order.push(ProductId::outside());
    let d = state.diversion.aligned_to(&order);
    let post_diversion = (0..order.len())
        .map(|i| (0..order.len()).map(|j| d.values()[(i, j)]).collect())
        .collect();
    let products = problem
        .products
        .iter()
        .enumerate()
        .map(|(j, id)| ProductOutcome {
            product: id.clone(),
            price_change: out.x[j],
            post_share: agg[id],
            post_margin: state.margins[j],
            post_eps: state.eps[j],
            revenue_pre: problem.market.products[j].revenue,
        })
        .collect();
    Ok(SimulationResult {
        products,
        post_diversion,
        residual_norm: out.residual_norm,
        iterations: out.iterations,
        converged: out.converged,
        method,
        non_unique,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginGap {
    pub supplied: f64,
    /// Margin solving the pre-merger FOCs at the CES elasticities and diversions.
    pub implied: f64,
    /// `supplied - implied`.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub per_product: IndexMap<ProductId, MarginGap>,
    pub max_abs_gap: f64,
    pub threshold: f64,
    pub warnings: Vec<String>,
}

/// Compares supplied margins with those the pre-merger FOCs imply given the
/// economy's shares and `η`.
pub fn consistency_check(problem: &SimulationProblem) -> Result<ConsistencyReport> {
    let n = problem.products.len();
    let state = post_merger_state(&problem.pre_merger(), &vec![0.0; n])?;
    let d = state.diversion.values();
    let idx: Vec<usize> = problem.products.iter().map(|j| state.diversion.index_of(j).unwrap()).collect();
    // m_j - (1+1/ε_j) Σ_{l∈F\j} m_l D_jl = -1/ε_j under pre-merger ownership.
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        let e = state.eps[j];
        a[(j, j)] = 1.0;
        for l in 0..n {
            if l != j && problem.pre_owner[l] == problem.pre_owner[j] {
                a[(j, l)] = -(1.0 + 1.0 / e) * d[(idx[j], idx[l])];
            }
        }
        b[j] = -1.0 / e;
    }
    let condition = condition_number(&a);
    let implied = a.lu().solve(&b).ok_or(Error::SingularSystem { condition })?;
    let mut per_product = IndexMap::new();
    let mut warnings = Vec::new();
    let mut max_abs_gap: f64 = 0.0;
    for (j, id) in problem.products.iter().enumerate() {
        let supplied = problem.market.products[j].margin;
        let gap = supplied - implied[j];
        max_abs_gap = max_abs_gap.max(gap.abs());
        if gap.abs() > MARGIN_GAP_WARNING {
            warnings.push(format!(
                "product {id}: supplied margin {supplied:.4} differs from the FOC-implied {:.4}",
                implied[j]
            ));
        }
        per_product.insert(
            id.clone(),
            MarginGap {
                supplied,
                implied: implied[j],
                gap,
            },
        );
    }
    Ok(ConsistencyReport {
        per_product,
        max_abs_gap,
        threshold: MARGIN_GAP_WARNING,
        warnings,
    })
}
