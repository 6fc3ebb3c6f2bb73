//! Certified space-time reduced basis methods for parabolic problems.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod config;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod greedy;
pub mod hifi;
pub mod io;
pub mod kron_ops;

pub use error::{Error, Result};
pub use exec::Execution;
pub mod pod;
pub mod problem;
pub mod rb_core;
pub mod space_fem;
pub mod time_disc;
pub mod wspace;
