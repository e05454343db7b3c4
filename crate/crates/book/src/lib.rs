//! Runs the code blocks of the guide and the README as doc-tests, one module
//! per chapter so a failure points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/inputs.md")]
pub mod inputs {}
#[doc = include_str!("../../../book/src/guppi.md")]
pub mod guppi {}
#[doc = include_str!("../../../book/src/cmcr.md")]
pub mod cmcr {}
#[doc = include_str!("../../../book/src/welfare.md")]
pub mod welfare {}
#[doc = include_str!("../../../book/src/ces.md")]
pub mod ces {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/fit.md")]
pub mod fit {}
#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
