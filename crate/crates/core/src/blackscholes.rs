//! Black-Scholes call price, Vega and implied volatility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{norm_cdf, norm_pdf};

/// Lower end of the implied-vol search bracket.
pub const VOL_MIN: f64 = 1e-6;
/// Upper end of the implied-vol search bracket.
pub const VOL_MAX: f64 = 10.0;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsInputs {
    pub spot: f64,
    pub strike: f64,
    pub maturity: f64,
    pub rate: f64,
    pub dividend_yield: f64,
    pub vol: f64,
}

impl BsInputs {
    pub fn new(spot: f64, strike: f64, maturity: f64, rate: f64, dividend_yield: f64, vol: f64) -> Self {
        Self {
            spot,
            strike,
            maturity,
            rate,
            dividend_yield,
            vol,
        }
    }

    pub fn with_vol(self, vol: f64) -> Self {
        Self { vol, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(Error::param("spot", format!("must be positive, got {}", self.spot)));
        }
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::param("strike", format!("must be positive, got {}", self.strike)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::param("maturity", format!("must be positive, got {}", self.maturity)));
        }
        if !(self.vol >= 0.0 && self.vol.is_finite()) {
            return Err(Error::param("vol", format!("must be nonnegative, got {}", self.vol)));
        }
        Ok(())
    }

    /// Discounted spot `S e^{-q tau}`.
    pub fn discounted_spot(&self) -> f64 {
        self.spot * (-self.dividend_yield * self.maturity).exp()
    }

    /// Discounted strike `K e^{-r tau}`.
    pub fn discounted_strike(&self) -> f64 {
        self.strike * (-self.rate * self.maturity).exp()
    }

    /// The no-arbitrage band `[max(0, S e^{-q tau} - K e^{-r tau}), S e^{-q tau}]`.
    pub fn price_bounds(&self) -> (f64, f64) {
        let upper = self.discounted_spot();
        ((upper - self.discounted_strike()).max(0.0), upper)
    }

    /// Standard `d1 = [ln(S/K) + (r - q + vol^2/2) tau] / (vol sqrt(tau))`.
    pub fn d1(&self) -> f64 {
        let sqrt_t = self.maturity.sqrt();
        ((self.spot / self.strike).ln() + (self.rate - self.dividend_yield + 0.5 * self.vol * self.vol) * self.maturity)
            / (self.vol * sqrt_t)
    }
}

/// Black-Scholes price of a European call with continuous dividend yield.
pub fn bs_call(inputs: &BsInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(call_unchecked(inputs))
}

pub(crate) fn call_unchecked(inputs: &BsInputs) -> f64 {
    let fs = inputs.discounted_spot();
    let fk = inputs.discounted_strike();
    let total_vol = inputs.vol * inputs.maturity.sqrt();
    if total_vol <= 0.0 {
        return (fs - fk).max(0.0);
    }
    let d1 = ((fs / fk).ln() + 0.5 * total_vol * total_vol) / total_vol;
    let d2 = d1 - total_vol;
    let price = fs * norm_cdf(d1) - fk * norm_cdf(d2);
    let (lower, upper) = inputs.price_bounds();
    price.clamp(lower, upper)
}

/// Vega `S e^{-q tau} n(d1) sqrt(tau)`.
pub fn bs_vega(inputs: &BsInputs) -> Result<f64> {
    inputs.validate()?;
    if inputs.vol == 0.0 {
        return Err(Error::Domain("vega is degenerate at zero volatility".into()));
    }
    Ok(vega_unchecked(inputs))
}

pub(crate) fn vega_unchecked(inputs: &BsInputs) -> f64 {
    inputs.discounted_spot() * norm_pdf(inputs.d1()) * inputs.maturity.sqrt()
}

/// Implied volatility by safeguarded Newton iteration inside a bisection bracket.
///
/// The `vol` field of `inputs` is ignored.
pub fn implied_vol(target_price: f64, inputs: &BsInputs) -> Result<f64> {
    let base = inputs.with_vol(0.0);
    base.validate()?;
    let (band_lo, band_hi) = base.price_bounds();
    if !(target_price > band_lo) {
        return Err(Error::OutOfBand {
            target: target_price,
            lower: band_lo,
            upper: band_hi,
            side: "below",
        });
    }
    if !(target_price < band_hi) {
        return Err(Error::OutOfBand {
            target: target_price,
            lower: band_lo,
            upper: band_hi,
            side: "above",
        });
    }
    let objective = |vol: f64| call_unchecked(&base.with_vol(vol)) - target_price;
    let f_lo = objective(VOL_MIN);
    let f_hi = objective(VOL_MAX);
    if f_lo > 0.0 {
        return Err(Error::OutOfBand {
            target: target_price,
            lower: target_price - f_lo,
            upper: band_hi,
            side: "below",
        });
    }
    if f_hi < 0.0 {
        return Err(Error::OutOfBand {
            target: target_price,
            lower: band_lo,
            upper: target_price - f_hi,
            side: "above",
        });
    }

    let tol = 1e-11f64.max(1e-15 * inputs.spot);
    let mut lo = VOL_MIN;
    let mut hi = VOL_MAX;
    // Start from the vol that puts the forward at the inflection point of the price curve.
    let log_moneyness = (base.discounted_spot() / base.discounted_strike()).ln();
    let mut vol = (2.0 * log_moneyness.abs() / base.maturity).sqrt().clamp(0.05, 3.0);
    let mut residual = objective(vol);
    for _ in 0..MAX_ITERATIONS {
        if residual.abs() <= tol {
            return Ok(vol);
        }
        if residual > 0.0 {
            hi = vol;
        } else {
            lo = vol;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let vega = vega_unchecked(&base.with_vol(vol));
        let newton = vol - residual / vega;
        vol = if vega > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        residual = objective(vol);
    }
    if residual.abs() <= 10.0 * tol {
        return Ok(vol);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
    })
}
