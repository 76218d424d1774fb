//! Non-fatal numerical diagnostics carried alongside prices and calibration results.

use std::fmt;

use serde::{Serialize, Serializer};

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    /// A raw price in (-1e-6, 0) was floored to zero.
    FlooredNegativePrice { value: f64 },
    /// A price below -1e-6 was kept as-is (FFT grids only).
    NegativePrice { strike: f64, value: f64 },
    /// A Heston probability left [-0.01, 1.01] and was clamped.
    ClampedProbability { j: u8, value: f64 },
    /// Quote had no usable implied vol; Vega was computed at the floor vol.
    FlooredVega { index: usize },
    /// Quote excluded from ARE because its market price is ~0.
    ExcludedFromAre { index: usize },
    /// Objective returned the penalty value for an infeasible parameter vector.
    Penalty { reason: String },
    /// GH parameters accepted with alpha < 0 by taking |alpha|.
    RelaxedGhAlpha { alpha: f64 },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::FlooredNegativePrice { value } => {
                write!(f, "floored_negative_price:{value:e}")
            }
            Diagnostic::NegativePrice { strike, value } => {
                write!(f, "negative_price:K={strike}:{value:e}")
            }
            Diagnostic::ClampedProbability { j, value } => {
                write!(f, "clamped_probability:pi{j}={value}")
            }
            Diagnostic::FlooredVega { index } => write!(f, "floored_vega:quote={index}"),
            Diagnostic::ExcludedFromAre { index } => write!(f, "excluded_from_are:quote={index}"),
            Diagnostic::Penalty { reason } => write!(f, "penalty:{reason}"),
            Diagnostic::RelaxedGhAlpha { alpha } => write!(f, "relaxed_gh_alpha:{alpha}"),
        }
    }
}

impl Serialize for Diagnostic {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// A value with the diagnostics raised while computing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub flags: Vec<Diagnostic>,
}

impl<T> Flagged<T> {
    pub fn clean(value: T) -> Self {
        Self {
            value,
            flags: Vec::new(),
        }
    }
}
