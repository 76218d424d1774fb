//! Special functions used by the model characteristic functions.
//!
//! The normal distribution and the real gamma function are thin wrappers over
//! `libm`. The modified Bessel function of the third kind `K_nu(z)` for complex
//! `z` in the right half-plane is evaluated from its integral representation
//!
//! ```text
//! K_nu(z) = int_0^inf exp(-z cosh t) cosh(nu t) dt,   Re z > 0
//! ```
//!
//! with the trapezoidal rule. The integrand is entire in `t` and decays
//! double-exponentially, so the trapezoidal rule converges geometrically once
//! the step resolves the analyticity strip `|Im t| < pi/2 - |arg z|` and the
//! width of the integrand's peak.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex number type used for Fourier variables and characteristic functions.
pub type ComplexValue = Complex64;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Gamma function on the real line, rejecting the poles at 0, -1, -2, ...
pub fn gamma_real(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("gamma of non-finite argument {x}")));
    }
    if x <= 0.0 && x == x.floor() {
        return Err(Error::GammaPole(x));
    }
    Ok(libm::tgamma(x))
}

/// `e^z K_nu(z)`. Exponentially scaled so that large `|z|` neither underflows
/// nor loses relative precision.
pub fn bessel_k_scaled(nu: f64, z: ComplexValue) -> Result<ComplexValue> {
    if !(z.re.is_finite() && z.im.is_finite() && nu.is_finite()) {
        return Err(Error::Domain(format!("bessel_k of non-finite input nu={nu}, z={z}")));
    }
    if z.re <= 0.0 {
        return Err(Error::Domain(format!("bessel_k requires Re z > 0, got z = {z}")));
    }
    let nu = nu.abs();
    let modulus = z.norm();
    let theta = z.im.atan2(z.re).abs();
    let cos_theta = theta.cos();

    // Half the distance to the edge of the strip where the integrand decays.
    let half_strip = 0.5 * (FRAC_PI_2 - theta);
    let h_strip = 2.0 * PI * half_strip / 38.0;
    let h_width_z = 0.7 * (cos_theta / modulus).sqrt();
    let h_width_nu = 0.7 / (nu + 1.0).sqrt();
    let h = h_strip.min(h_width_z).min(h_width_nu);

    const MAX_NODES: usize = 2_000_000;
    let integrand = |s: f64| -> (ComplexValue, f64) {
        // cosh(s) - 1 = 2 sinh^2(s/2), which keeps full precision near s = 0.
        let sh = (0.5 * s).sinh();
        let w = 2.0 * sh * sh;
        let base = -z * w;
        let up = (base + nu * s).exp();
        let down = (base - nu * s).exp();
        let value = 0.5 * (up + down);
        // Modulus of the dominant exponential, used for the stopping rule.
        let log_mag = -z.re * w + nu * s;
        (value, log_mag)
    };

    let (first, mut prev_log) = integrand(0.0);
    let mut sum = 0.5 * first;
    let mut max_log = prev_log;
    let mut small_run = 0;
    for k in 1..MAX_NODES {
        let s = k as f64 * h;
        let (term, log_mag) = integrand(s);
        sum += term;
        max_log = max_log.max(log_mag);
        let decreasing = log_mag < prev_log;
        prev_log = log_mag;
        // Past the peak and 40 e-folds below it: the remaining tail is < 1e-17 relative.
        if decreasing && log_mag < max_log - 40.0 {
            small_run += 1;
            if small_run >= 3 {
                return Ok(sum * h);
            }
        } else {
            small_run = 0;
        }
    }
    Err(Error::Domain(format!(
        "bessel_k quadrature did not terminate for nu={nu}, z={z}"
    )))
}

/// Modified Bessel function of the third kind `K_nu(z)`, `Re z > 0`.
pub fn bessel_k(nu: f64, z: ComplexValue) -> Result<ComplexValue> {
    Ok(bessel_k_scaled(nu, z)? * (-z).exp())
}
