//! Tamed Euler-Maruyama simulation of scalar SDEs whose drift is both
//! discontinuous and polynomially growing, with Monte Carlo estimators for
//! the strong convergence order and the bounds that support it.

pub mod analysis;
pub mod brownian;
pub mod cli;
pub mod error;
pub mod model;
pub mod schemes;
pub mod transform;

pub use error::{Error, Result};
pub use model::{Coefficients, PiecewisePolynomial, Polynomial, SdeProblem};
