//! Carr-Madan call pricing: FFT across a log-strike grid and direct quadrature
//! of the same damped transform at a single strike.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{log_risk_neutral, LevyModel, C};
use crate::diagnostics::{Diagnostic, Flagged};
use crate::error::{Error, Result};
use crate::quad::adaptive_gk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    CubicSpline,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FftConfig {
    pub grid_size: usize,
    /// Spacing of the Fourier grid.
    pub eta: f64,
    pub damping_alpha: f64,
    pub interpolation: Interpolation,
}

impl Default for FftConfig {
    fn default() -> Self {
        Self {
            grid_size: 4096,
            eta: 0.25,
            damping_alpha: 1.5,
            interpolation: Interpolation::CubicSpline,
        }
    }
}

impl FftConfig {
    pub fn validate_for(&self, model: &LevyModel) -> Result<()> {
        if !self.grid_size.is_power_of_two() || self.grid_size < 16 {
            return Err(Error::param("grid_size", format!("must be a power of two >= 16, got {}", self.grid_size)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::param("eta", "must be positive"));
        }
        let max = model.max_damping();
        if !(self.damping_alpha > 0.0 && self.damping_alpha < max) {
            return Err(Error::param(
                "damping_alpha",
                format!(
                    "{} is not admissible for this {} model: must lie in (0, {max})",
                    self.damping_alpha,
                    model.name()
                ),
            ));
        }
        Ok(())
    }
}

/// Damped call transform `psi(v)` for unit spot.
fn damped_transform(model: &LevyModel, v: f64, t: f64, rate: f64, q: f64, alpha: f64) -> Result<C> {
    let u = C::new(v, -(alpha + 1.0));
    let log_phi = log_risk_neutral(model, u, t, rate, q)?;
    if log_phi.re > 700.0 {
        return Err(Error::Overflow(log_phi.re));
    }
    let denom = C::new(alpha * alpha + alpha - v * v, (2.0 * alpha + 1.0) * v);
    Ok((-rate * t).exp() * log_phi.exp() / denom)
}

/// Call prices on a log-strike grid with an interpolator for intermediate strikes.
#[derive(Debug, Clone)]
pub struct FftGrid {
    spot: f64,
    /// `ln(K / S)` at the grid nodes, ascending and evenly spaced.
    log_moneyness: Vec<f64>,
    /// Prices in currency units at the grid nodes, after flooring.
    prices: Vec<f64>,
    /// Second derivatives of the natural cubic spline through `prices`.
    curvature: Vec<f64>,
    interpolation: Interpolation,
    pub flags: Vec<Diagnostic>,
}

impl FftGrid {
    pub fn strikes(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_moneyness.iter().map(|k| self.spot * k.exp())
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    /// `(strike, price)` pairs at the grid nodes.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.strikes().zip(self.prices.iter().copied()).collect()
    }

    pub fn strike_range(&self) -> (f64, f64) {
        (
            self.spot * self.log_moneyness[0].exp(),
            self.spot * self.log_moneyness[self.log_moneyness.len() - 1].exp(),
        )
    }

    /// Interpolated price at `strike`.
    pub fn price(&self, strike: f64) -> Result<f64> {
        let (min, max) = self.strike_range();
        if !(strike >= min && strike <= max) {
            return Err(Error::StrikeOutsideGrid { strike, min, max });
        }
        let k = (strike / self.spot).ln();
        let k0 = self.log_moneyness[0];
        let h = self.log_moneyness[1] - k0;
        let n = self.prices.len();
        let i = (((k - k0) / h).floor() as usize).min(n - 2);
        let t = (k - self.log_moneyness[i]) / h;
        let (y0, y1) = (self.prices[i], self.prices[i + 1]);
        let value = match self.interpolation {
            Interpolation::Linear => y0 + t * (y1 - y0),
            Interpolation::CubicSpline => {
                let (m0, m1) = (self.curvature[i], self.curvature[i + 1]);
                let a = 1.0 - t;
                a * y0 + t * y1 + h * h / 6.0 * ((a * a * a - a) * m0 + (t * t * t - t) * m1)
            }
        };
        Ok(value.max(0.0))
    }
}

/// Natural cubic spline second derivatives on a uniform grid (Thomas algorithm).
fn spline_curvature(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let inner = n - 2;
    let mut c = vec![0.0; inner];
    let mut d = vec![0.0; inner];
    for i in 0..inner {
        let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (h * h);
        if i == 0 {
            c[i] = 1.0 / 4.0;
            d[i] = rhs / 4.0;
        } else {
            let denom = 4.0 - c[i - 1];
            c[i] = 1.0 / denom;
            d[i] = (rhs - d[i - 1]) / denom;
        }
    }
    for i in (0..inner).rev() {
        let next = if i + 1 < inner { m[i + 2] } else { 0.0 };
        m[i + 1] = d[i] - c[i] * next;
    }
    m
}

/// Log-price standard deviations the strike grid must cover on each side of the mean.
const GRID_SPREADS: f64 = 8.0;
const MAX_REFINE: u32 = 5;

/// Number of halvings of `eta` (with matching doublings of the grid size) needed
/// for the log-strike grid to cover the return distribution, so that wide
/// distributions do not alias around the FFT period.
fn grid_refinement(model: &LevyModel, t: f64, rate: f64, q: f64, eta: f64) -> Result<u32> {
    let h = 1e-3;
    let up = log_risk_neutral(model, C::new(h, 0.0), t, rate, q)?;
    let down = log_risk_neutral(model, C::new(-h, 0.0), t, rate, q)?;
    let mean = (up.im - down.im) / (2.0 * h);
    let var = (-(up.re + down.re) / (h * h)).max(0.0);
    let reach = mean.abs() + GRID_SPREADS * var.sqrt();
    let mut refine = 0;
    while refine < MAX_REFINE && PI / (eta / (1u32 << refine) as f64) < reach {
        refine += 1;
    }
    Ok(refine)
}

/// Carr-Madan FFT call prices for spot `spot` at horizon `t`.
///
/// `cfg.eta` is an upper bound on the Fourier spacing: when the log-return
/// distribution is wider than the grid period the spacing is halved and the
/// grid size doubled, up to 32 times.
pub fn fft_call_prices(
    model: &LevyModel,
    spot: f64,
    rate: f64,
    dividend_yield: f64,
    t: f64,
    cfg: &FftConfig,
) -> Result<FftGrid> {
    model.validate()?;
    cfg.validate_for(model)?;
    if !(spot > 0.0 && spot.is_finite()) {
        return Err(Error::param("spot", format!("must be positive, got {spot}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    let refine = grid_refinement(model, t, rate, dividend_yield, cfg.eta)?;
    let n = cfg.grid_size << refine;
    let eta = cfg.eta / (1 << refine) as f64;
    let alpha = cfg.damping_alpha;
    let lambda = 2.0 * PI / (n as f64 * eta);
    let b = PI / eta;

    let transform: Vec<C> = (0..n)
        .into_par_iter()
        .map(|j| damped_transform(model, j as f64 * eta, t, rate, dividend_yield, alpha))
        .collect::<Result<_>>()?;
    let mut buffer: Vec<C> = transform
        .iter()
        .enumerate()
        .map(|(j, psi)| {
            let v = j as f64 * eta;
            // Simpson weights 1/3, 4/3, 2/3, 4/3, ...
            let w = if j == 0 {
                1.0 / 3.0
            } else if j % 2 == 1 {
                4.0 / 3.0
            } else {
                2.0 / 3.0
            };
            C::new(0.0, b * v).exp() * psi * eta * w
        })
        .collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buffer);

    let mut flags = Vec::new();
    let mut log_moneyness = Vec::with_capacity(n);
    let mut prices = Vec::with_capacity(n);
    for (u, x) in buffer.iter().enumerate() {
        let k = -b + lambda * u as f64;
        let raw = spot * (-alpha * k).exp() / PI * x.re;
        let price = if raw >= 0.0 {
            raw
        } else if raw > -1e-6 {
            0.0
        } else {
            flags.push(Diagnostic::NegativePrice {
                strike: spot * k.exp(),
                value: raw,
            });
            raw
        };
        log_moneyness.push(k);
        prices.push(price);
    }
    let curvature = match cfg.interpolation {
        Interpolation::CubicSpline => spline_curvature(&prices, lambda),
        Interpolation::Linear => Vec::new(),
    };
    Ok(FftGrid {
        spot,
        log_moneyness,
        prices,
        curvature,
        interpolation: cfg.interpolation,
        flags,
    })
}

/// Single-strike price by adaptive Gauss-Kronrod quadrature of the damped transform.
#[allow(clippy::too_many_arguments)]
pub fn quadrature_call(
    model: &LevyModel,
    spot: f64,
    strike: f64,
    rate: f64,
    dividend_yield: f64,
    t: f64,
    cfg: &FftConfig,
) -> Result<Flagged<f64>> {
    model.validate()?;
    cfg.validate_for(model)?;
    if !(spot > 0.0 && strike > 0.0) {
        return Err(Error::param("spot/strike", "must be positive"));
    }
    let alpha = cfg.damping_alpha;
    let k = (strike / spot).ln();
    let failure = std::cell::RefCell::new(None);
    let integrand = |v: f64| -> f64 {
        match damped_transform(model, v, t, rate, dividend_yield, alpha) {
            Ok(psi) => (C::new(0.0, -v * k).exp() * psi).re,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let mut total = 0.0;
    let mut a = 0.0;
    let mut width = 2.0;
    loop {
        let b = a + width;
        let (panel, _) = adaptive_gk(integrand, a, b, 1e-13, 2000);
        total += panel;
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        let tail = damped_transform(model, b, t, rate, dividend_yield, alpha)?.norm() * b;
        if tail < 1e-14 {
            break;
        }
        if b > 1e6 {
            return Err(Error::Integration {
                phi: b,
                message: "damped transform does not decay".into(),
            });
        }
        a = b;
        width *= 2.0;
    }
    let raw = spot * (-alpha * k).exp() / PI * total;
    if raw >= 0.0 {
        Ok(Flagged::clean(raw))
    } else if raw > -1e-6 {
        Ok(Flagged::clean(0.0))
    } else {
        Ok(Flagged {
            value: raw,
            flags: vec![Diagnostic::NegativePrice { strike, value: raw }],
        })
    }
}
