//! Confidence-aware forward reachable tubes for planning around a
//! human-driven vehicle.

// `!(x > 0.0)` is how argument checks reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confidence;
pub mod dynamics;
pub mod error;
pub mod prediction;
pub mod reachability;
pub mod safety;
pub mod sim;

pub use error::{Error, ErrorKind, Result};
