//! Offline model-based optimization at desk scale.
//!
//! Synthetic tasks with exact oracles ([`tasks`]), learned surrogates
//! ([`surrogate`]), search densities ([`density`]), offline optimizers that
//! never see the oracle ([`optimizers`]) and a seeded evaluation protocol
//! ([`harness`]). The guide in `book/` walks through each part.

// NaN must fail range checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod error;
pub mod harness;
pub mod optimizers;
pub mod rng;
pub mod space;
pub mod surrogate;
pub mod tasks;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tasks.md")]
    mod tasks {}
    #[doc = include_str!("../../../book/src/surrogates.md")]
    mod surrogates {}
    #[doc = include_str!("../../../book/src/optimizers.md")]
    mod optimizers {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
