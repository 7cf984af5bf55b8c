//! Operator-learning surrogates for a two-axis synchronous generator
//! connected to an infinite bus.

// `!(a < b)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dagger;
pub mod data;
pub mod dynamics;
pub mod config;
pub mod error;
pub mod experiment;
pub mod eval;
pub mod nn;
pub mod rollout;
pub mod trajectory;

pub use error::{Error, Result};
