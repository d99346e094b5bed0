//! Numerical laboratory for second-order SPDEs
//! `du = (a^{ij}(ω,t) u_{x^i x^j} + f) dt + g^k dw^k_t` with time-dependent,
//! possibly random and predictable, coefficients.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod catalog;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod hormander;
pub mod kernel;
pub mod moments;
pub mod parallel;
pub mod report;
pub mod solvers;
pub mod spectral;
pub mod stats;
pub mod suites;
pub mod wiener;

pub use error::{Error, Result};
