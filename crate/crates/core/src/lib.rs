//! Hybrid network digital twin identified by online deterministic annealing.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline;
pub mod divergence;
pub mod error;
pub mod io;
pub mod netsim;
pub mod oda;
pub mod session;
pub mod triggers;
pub mod twin;
pub mod types;

pub use error::{Error, Result};
