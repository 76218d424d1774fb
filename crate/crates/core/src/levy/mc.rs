//! Monte Carlo call pricing used as an independent check of the Fourier pricers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CgmyParams, LevyModel};
use crate::error::{Error, Result};
use crate::quad::adaptive_gk;

/// Jumps smaller than this are replaced by a drift and a Gaussian term.
const SMALL_JUMP: f64 = 1e-3;
const MIN_PATHS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub price: f64,
    pub stderr: f64,
    pub paths: usize,
}

/// Discounted call payoff average over `paths` simulated terminal prices.
///
/// NIG is simulated exactly as Brownian motion with drift run on an inverse
/// Gaussian clock. CGMY with `Y < 1` uses compound Poisson jumps above a cutoff
/// plus a moment-matched Gaussian for the small jumps. GH is not supported.
#[allow(clippy::too_many_arguments)]
pub fn mc_call(
    model: &LevyModel,
    spot: f64,
    strike: f64,
    rate: f64,
    dividend_yield: f64,
    t: f64,
    paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    model.validate()?;
    if paths < MIN_PATHS {
        return Err(Error::param("paths", format!("need at least {MIN_PATHS}, got {paths}")));
    }
    if !(spot > 0.0 && strike > 0.0 && t > 0.0) {
        return Err(Error::param("spot/strike/t", "must be positive"));
    }
    let omega = model.martingale_drift(rate, dividend_yield)?;
    let log_drift = spot.ln() + (omega + model.drift()) * t;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler: Box<dyn FnMut(&mut ChaCha8Rng) -> f64> = match model {
        LevyModel::Nig(p) => {
            let gamma = (p.alpha * p.alpha - p.beta * p.beta).sqrt();
            let clock = InverseGaussian::new(p.delta * t / gamma, p.delta * p.delta * t * t)
                .map_err(|e| Error::Domain(format!("inverse Gaussian clock: {e}")))?;
            let beta = p.beta;
            Box::new(move |rng: &mut ChaCha8Rng| {
                // The sampler can return tiny negative values from cancellation when delta is near zero.
                let tau: f64 = clock.sample(rng).max(0.0);
                let z: f64 = rng.sample(StandardNormal);
                beta * tau + tau.sqrt() * z
            })
        }
        LevyModel::Cgmy(p) if p.y < 1.0 => Box::new(cgmy_sampler(p, t)?),
        LevyModel::Cgmy(p) => {
            return Err(Error::Unsupported(format!(
                "Monte Carlo for CGMY requires Y < 1, got Y = {}",
                p.y
            )))
        }
        LevyModel::Gh(_) => return Err(Error::Unsupported("Monte Carlo for the GH model".into())),
    };
    let discount = (-rate * t).exp();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..paths {
        let x = sampler(&mut rng);
        let payoff = discount * ((log_drift + x).exp() - strike).max(0.0);
        sum += payoff;
        sum_sq += payoff * payoff;
    }
    let n = paths as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        price: mean,
        stderr: (var / n).sqrt(),
        paths,
    })
}

/// `int_0^eps x^{a-1} e^{-rate x} dx` by the series of the lower incomplete gamma function.
fn lower_moment(a: f64, rate: f64, eps: f64) -> f64 {
    let x = rate * eps;
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..200 {
        term *= x / (a + n as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    eps.powf(a) * (-x).exp() * sum
}

/// `int_eps^inf x^{-1-Y} e^{-rate x} dx`, integrated in `ln x`.
fn tail_mass(y: f64, rate: f64, eps: f64) -> f64 {
    let hi = if rate > 0.0 { (60.0 / rate).max(eps * 2.0).ln() } else { 0.0 };
    let (v, _) = adaptive_gk(|s: f64| (-y * s - rate * s.exp()).exp(), eps.ln(), hi, 1e-14, 500);
    v
}

fn cgmy_sampler(p: &CgmyParams, t: f64) -> Result<impl FnMut(&mut ChaCha8Rng) -> f64> {
    let (c, g, m, y) = (p.c, p.g, p.m, p.y);
    let eps = SMALL_JUMP;
    let small_mean = c * (lower_moment(1.0 - y, m, eps) - lower_moment(1.0 - y, g, eps));
    let small_var = c * (lower_moment(2.0 - y, m, eps) + lower_moment(2.0 - y, g, eps));
    let up_rate = c * tail_mass(y, m, eps) * t;
    let down_rate = c * tail_mass(y, g, eps) * t;
    let poisson = |rate: f64| -> Result<Option<Poisson<f64>>> {
        if rate > 0.0 {
            Poisson::new(rate)
                .map(Some)
                .map_err(|e| Error::Domain(format!("jump count: {e}")))
        } else {
            Ok(None)
        }
    };
    let up_count = poisson(up_rate)?;
    let down_count = poisson(down_rate)?;
    let gamma = |rate: f64| -> Result<Option<Gamma<f64>>> {
        if y < 0.0 {
            Gamma::new(-y, 1.0 / rate)
                .map(Some)
                .map_err(|e| Error::Domain(format!("jump size: {e}")))
        } else {
            Ok(None)
        }
    };
    let up_gamma = gamma(m)?;
    let down_gamma = gamma(g)?;

    // Jump size above eps with density proportional to x^{-1-Y} e^{-rate x}.
    let draw = move |rng: &mut ChaCha8Rng, rate: f64, gamma: &Option<Gamma<f64>>| -> f64 {
        loop {
            match gamma {
                Some(gd) => {
                    let x: f64 = gd.sample(rng);
                    if x >= eps {
                        return x;
                    }
                }
                None => {
                    // Pareto proposal x^{-1-Y} on [eps, inf), accepted with e^{-rate (x - eps)}.
                    let u: f64 = 1.0 - rng.random::<f64>();
                    let x = eps * u.powf(-1.0 / y);
                    if rng.random::<f64>() < (-rate * (x - eps)).exp() {
                        return x;
                    }
                }
            }
        }
    };
    Ok(move |rng: &mut ChaCha8Rng| {
        let z: f64 = rng.sample(StandardNormal);
        let mut x = small_mean * t + (small_var * t).sqrt() * z;
        if let Some(pd) = &up_count {
            let n = pd.sample(rng) as usize;
            for _ in 0..n {
                x += draw(rng, m, &up_gamma);
            }
        }
        if let Some(pd) = &down_count {
            let n = pd.sample(rng) as usize;
            for _ in 0..n {
                x -= draw(rng, g, &down_gamma);
            }
        }
        x
    })
}

#[cfg(test)]
mod tests {
    use super::super::reference::{gh, nig};
    use super::super::{fft_call_prices, FftConfig, NigParams};
    use super::*;

    #[test]
    fn nig_agrees_with_fft() {
        let m = LevyModel::Nig(nig());
        let est = mc_call(&m, 10.0, 11.0, 0.05, 0.0, 1.0, 100_000, 7).unwrap();
        let fft = fft_call_prices(&m, 10.0, 0.05, 0.0, 1.0, &FftConfig::default())
            .unwrap()
            .price(11.0)
            .unwrap();
        assert!((est.price - fft).abs() < 3.0 * est.stderr, "mc {} ± {} vs fft {fft}", est.price, est.stderr);
    }

    #[test]
    fn finite_variation_cgmy_agrees_with_fft() {
        for y in [0.5, -0.5] {
            let m = LevyModel::Cgmy(CgmyParams::new(1.0, 5.0, 10.0, y).unwrap());
            let est = mc_call(&m, 100.0, 100.0, 0.03, 0.0, 0.5, 100_000, 11).unwrap();
            let fft = fft_call_prices(&m, 100.0, 0.03, 0.0, 0.5, &FftConfig::default())
                .unwrap()
                .price(100.0)
                .unwrap();
            assert!(
                (est.price - fft).abs() < 4.0 * est.stderr,
                "Y={y}: mc {} ± {} vs fft {fft}",
                est.price,
                est.stderr
            );
        }
    }

    #[test]
    fn degenerate_nig_is_discounted_intrinsic() {
        let m = LevyModel::Nig(NigParams::new(5.0, 0.0, 1e-8, 0.0).unwrap());
        let est = mc_call(&m, 100.0, 90.0, 0.05, 0.0, 1.0, 10_000, 1).unwrap();
        let intrinsic = (-0.05f64).exp() * (100.0 * 0.05f64.exp() - 90.0);
        assert!((est.price - intrinsic).abs() < 1e-5, "{} vs {intrinsic}", est.price);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let m = LevyModel::Nig(nig());
        let a = mc_call(&m, 10.0, 10.0, 0.05, 0.0, 1.0, 20_000, 42).unwrap();
        let b = mc_call(&m, 10.0, 10.0, 0.05, 0.0, 1.0, 20_000, 42).unwrap();
        assert_eq!(a.price.to_bits(), b.price.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn unsupported_models_error() {
        assert!(matches!(
            mc_call(&LevyModel::Gh(gh()), 10.0, 10.0, 0.05, 0.0, 1.0, 10_000, 1),
            Err(Error::Unsupported(_))
        ));
        let cg = LevyModel::Cgmy(CgmyParams::new(0.0244, 0.0765, 7.5515, 1.2945).unwrap());
        assert!(matches!(mc_call(&cg, 10.0, 10.0, 0.05, 0.0, 1.0, 10_000, 1), Err(Error::Unsupported(_))));
        assert!(mc_call(&LevyModel::Nig(nig()), 10.0, 10.0, 0.05, 0.0, 1.0, 100, 1).is_err());
    }

    #[test]
    fn incomplete_moment_series() {
        // a = 1, rate = 2: int_0^eps e^{-2x} dx = (1 - e^{-2 eps}) / 2.
        let eps = 0.3;
        assert!((lower_moment(1.0, 2.0, eps) - (1.0 - (-2.0 * eps).exp()) / 2.0).abs() < 1e-15);
    }
}
