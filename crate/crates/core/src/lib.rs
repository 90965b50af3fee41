//! Random-walk approximation of the heat equation and a numerical audit of
//! its convergence to the Gaussian limit.
//!
//! The crate builds `u_n(x, t) = E[f(x + S_{⌊nt⌋}/√n)]` exactly for lattice
//! step laws (by k-fold convolution) or by Monte Carlo for continuous ones,
//! evaluates the heat-equation solution `u(x, t) = E[f(x + √t ξ)]`,
//! `ξ ~ N(0, Σ)`, and checks the finite-difference bounds, the consistency
//! error of the scheme, the sup-norm gap and its rate, and the structure of
//! the penalised doubling-of-variables functional.
//!
//! Module map:
//!
//! - [`distributions`]: centred step laws, exact convolution powers, sampling
//! - [`testfn`]: test functions with analytic derivatives and certified norms
//! - [`heatref`]: reference heat-equation solution
//! - [`scheme`]: the random-walk scheme on a spatial grid
//! - [`verifier`]: bound audits, consistency error, gaps, rates, doubling
//! - [`cli`]: JSON-configured experiment runner

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod distributions;
mod error;
pub mod heatref;
pub mod linalg;
pub mod numeric;
mod params;
pub mod scheme;
pub mod testfn;
pub mod verifier;

pub use error::{Error, Result};
pub use params::FamilySpec;

/// Largest spatial dimension supported anywhere in the crate.
pub const MAX_DIM: usize = 4;
