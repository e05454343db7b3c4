//! Synthetic ground-truth markets for checking the screening statistics.
//!
//! Markets are drawn with observable prices and costs, Bertrand equilibria
//! are solved before and after the merger, and the GUPPI prediction computed
//! from revenues, margins and diversion alone is compared with the true
//! price change.

pub mod equilibrium;
pub mod experiment;
pub mod generator;
pub mod primitives;
pub mod spatial;

pub use equilibrium::{
    foc_residual, solve_equilibrium, solve_post_merger_equilibrium, solve_pre_merger_equilibrium, Equilibrium,
    PostMergerOutcome,
};
pub use experiment::{
    run_accuracy_experiment, run_trial, trial_merger, trial_rng, ExperimentResult, HarnessSummary, TrialFailure,
    TrialRecord,
};
pub use generator::{generate_market, HarnessConfig};
pub use primitives::{CesConsumerPrimitives, Demand, DemandModel, SyntheticPrimitives};
pub use spatial::{
    generate_spatial_fixture, spatial_fixture_from_layout, SpatialConfig, SpatialFixture, Store, Tract, SPATIAL_COVARIATES,
};
