use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pricing, calibration and data-handling layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}, column `{column}`: {message}")]
    MalformedRow {
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv header mismatch: expected `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("gamma function pole at {0}")]
    GammaPole(f64),

    #[error("exponent overflow: |{0}| > 700")]
    Overflow(f64),

    #[error("target price {target} is {side} the no-arbitrage band [{lower}, {upper}]")]
    OutOfBand {
        target: f64,
        lower: f64,
        upper: f64,
        side: &'static str,
    },

    #[error("implied volatility did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("integration failure at phi = {phi}: {message}")]
    Integration { phi: f64, message: String },

    #[error("branch tracking failed near u = {u}: phase jump could not be resolved")]
    BranchDiscontinuity { u: f64 },

    #[error("jump series did not converge: weight {last_weight:e} at n_max = {n_max}")]
    SeriesNotConverged { n_max: usize, last_weight: f64 },

    #[error("negative model price {0:e}")]
    NegativePrice(f64),

    #[error("strike {strike} outside the FFT grid [{min}, {max}]")]
    StrikeOutsideGrid { strike: f64, min: f64, max: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sweep has only {valid} valid points, at least 5 required")]
    TooFewSweepPoints { valid: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
