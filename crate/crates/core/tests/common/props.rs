//! Invariant properties, shared by the proptest suite and the acceptance run.

use indexmap::IndexMap;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use uppkit::ces::{compensating_variation, revenue_diversion, revenue_elasticities, shares, CesEconomy};
use uppkit::effects::{cmcr, guppi, product_welfare};
use uppkit::simulation::{post_merger_state, simulate, SimulationConfig, SimulationProblem};
use uppkit::{Market, MergerSpec, Product, ProductId};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Market of single-product firms observed in `economy`, with margins set by
/// the single-product CES Lerner condition, and a merger of the first two.
pub fn market_for(economy: &CesEconomy) -> (Market, MergerSpec) {
    let table = shares(economy);
    let rev = table.revenues();
    let eps_r = revenue_elasticities(&table, economy.eta);
    let products: Vec<Product> = economy
        .products()
        .iter()
        .map(|j| Product::new(j.as_str(), &format!("F{j}"), rev[j], 1.0 / (1.0 - eps_r[j])))
        .collect();
    let merger = MergerSpec::new(&format!("F{}", products[0].id), &format!("F{}", products[1].id));
    (Market::new(products).unwrap(), merger)
}

pub fn share_normalization(e: &CesEconomy) -> Result<(), TestCaseError> {
    for c in shares(e).consumers {
        let total: f64 = c.shares.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "shares sum to {}", total);
        prop_assert!(c.shares.values().all(|s| *s > 0.0 && *s < 1.0));
    }
    Ok(())
}

pub fn shift_invariance(e: &CesEconomy, who: usize, delta: f64) -> Result<(), TestCaseError> {
    let i = who % e.consumers.len();
    let f = e.shifted(i, delta);
    let (ta, tb) = (shares(e), shares(&f));
    for (a, b) in ta.consumers.iter().zip(&tb.consumers) {
        for (j, s) in &a.shares {
            prop_assert!(close(*s, b.shares[j], 1e-12));
        }
    }
    let (da, db) = (revenue_diversion(&ta).unwrap(), revenue_diversion(&tb).unwrap());
    for (x, y) in da.values().iter().zip(db.values().iter()) {
        prop_assert!((x.is_nan() && y.is_nan()) || close(*x, *y, 1e-12));
    }
    let (ea, eb) = (revenue_elasticities(&ta, e.eta), revenue_elasticities(&tb, f.eta));
    for (j, v) in &ea {
        prop_assert!(close(*v, eb[j], 1e-12));
    }
    let p_dd: IndexMap<ProductId, f64> = e.products().into_iter().map(|j| (j, 0.05)).collect();
    let (ca, cb) = (compensating_variation(e, &p_dd).unwrap(), compensating_variation(&f, &p_dd).unwrap());
    prop_assert!(close(ca.total, cb.total, 1e-10));
    if e.products().len() >= 2 {
        let (market, merger) = market_for(e);
        let pa = SimulationProblem::new(e.clone(), market.clone(), &merger).unwrap();
        let pb = SimulationProblem::new(f.clone(), market, &merger).unwrap();
        let x = vec![0.03; pa.products().len()];
        let (sa, sb) = (post_merger_state(&pa, &x).unwrap(), post_merger_state(&pb, &x).unwrap());
        for (u, v) in sa.eps.iter().zip(&sb.eps) {
            prop_assert!(close(*u, *v, 1e-12));
        }
    }
    Ok(())
}

/// `ΔCS < ΔCS* < ΔCS** < 0` for `0 < p̈ < -1/ε`.
pub fn welfare_ordering(frac: f64, eps: f64, revenue: f64, margin: f64) -> Result<(), TestCaseError> {
    let p = frac * (-1.0 / eps);
    let w = product_welfare(p, revenue, margin, eps, 0.0);
    prop_assert!(w.delta_cs < w.delta_cs_star, "{:?}", w);
    prop_assert!(w.delta_cs_star < w.delta_cs_double_star, "{:?}", w);
    prop_assert!(w.delta_cs_double_star < 0.0, "{:?}", w);
    Ok(())
}

/// Revenue a product loses goes somewhere: rows of `D^R` (outside included) sum to one.
pub fn diversion_row_sum(e: &CesEconomy) -> Result<(), TestCaseError> {
    let d = revenue_diversion(&shares(e)).unwrap();
    let v = d.values();
    for (i, j) in d.order().iter().enumerate() {
        if j.is_outside() {
            continue;
        }
        let s: f64 = (0..v.ncols()).filter(|&k| k != i).map(|k| v[(i, k)]).sum();
        prop_assert!((s - 1.0).abs() < 1e-12, "row {} sums to {}", j, s);
    }
    Ok(())
}

pub fn revenue_scale_invariance(e: &CesEconomy, factor: f64) -> Result<(), TestCaseError> {
    prop_assume!(e.products().len() >= 2);
    let (market, merger) = market_for(e);
    let table = shares(e);
    let div = revenue_diversion(&table).unwrap();
    let scaled = market.scaled_revenues(factor);
    let (ga, gb) = (guppi(&market, &div, &merger).unwrap(), guppi(&scaled, &div, &merger).unwrap());
    for (j, g) in &ga {
        prop_assert!(close(*g, gb[j], 1e-12));
    }
    let (ca, cb) = (cmcr(&market, &div, &merger).unwrap(), cmcr(&scaled, &div, &merger).unwrap());
    for (j, c) in &ca.cmcr {
        prop_assert!(close(*c, cb.cmcr[j], 1e-12));
    }
    let mut richer = e.clone();
    for c in &mut richer.consumers {
        c.budget *= factor;
    }
    let cfg = SimulationConfig {
        check_uniqueness: false,
        ..Default::default()
    };
    let sa = simulate(&SimulationProblem::new(e.clone(), market, &merger).unwrap(), &cfg).unwrap();
    let sb = simulate(&SimulationProblem::new(richer, scaled, &merger).unwrap(), &cfg).unwrap();
    prop_assert!(sa.converged && sb.converged);
    for (a, b) in sa.products.iter().zip(&sb.products) {
        prop_assert!((a.price_change - b.price_change).abs() < 1e-9);
    }
    Ok(())
}
