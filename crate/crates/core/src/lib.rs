//! Recursive Koopman learning: lifted linear models fitted in batch and
//! updated one sample at a time, with controllers that act on them.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod control;
pub mod dataset;
pub mod edmd;
pub mod env;
pub mod error;
pub mod observables;
pub mod par;
pub mod pipeline;
pub mod rls;

pub use error::{Error, Result};
