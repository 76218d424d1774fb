//! Pricing and calibration of European index call options.
//!
//! Models: Black-Scholes, Heston stochastic volatility with and without
//! lognormal jumps, jump-diffusion with non-iid jump sizes, and exponential
//! Lévy models driven by generalized hyperbolic, normal inverse Gaussian and
//! CGMY processes. Each model is calibrated to quote sets by minimizing a
//! Vega-weighted sum of squared pricing errors.

pub mod blackscholes;
pub mod calibration;
pub mod diagnostics;
pub mod error;
pub mod heston;
pub mod levy;
pub mod model;
pub mod noniid;
pub mod quad;
pub mod quotes;
pub mod specfun;
pub mod sweep;
pub mod synthetic;

pub use diagnostics::{Diagnostic, Flagged};
pub use error::{Error, Result};
