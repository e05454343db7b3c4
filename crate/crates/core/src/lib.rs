//! Unilateral merger effects when prices and quantities are not observed.
//!
//! The inputs are revenues, relative margins and revenue diversion ratios.
//! From them the crate computes own-price elasticities, gross upward pricing
//! pressure (GUPPI), first-order price and welfare effects, compensating
//! marginal cost reductions (CMCR), CES and nested-CES demand objects, and a
//! full CES merger simulation in percentage-price-change space. A Monte-Carlo
//! harness checks the screening statistics against brute-force equilibria.
//!
//! ```
//! use uppkit::effects::guppi;
//! use uppkit::fixtures::staples_office_depot;
//! use uppkit::ProductId;
//!
//! let loaded = staples_office_depot();
//! let merger = loaded.merger.as_ref().unwrap();
//! let g = guppi(&loaded.market, &loaded.diversion, merger).unwrap();
//! assert!((g[&ProductId::from("SP")] - 0.104).abs() < 1e-3);
//! ```

pub mod ces;
pub mod diversion;
pub mod effects;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod market;
pub mod numeric;
pub mod passthrough;
pub mod simulation;
pub mod solver;
pub mod table;

pub use error::{Error, ErrorKind, Result};
pub use market::{FirmId, Market, MergerSpec, Product, ProductId, RevenueDiversionMatrix};
