//! Jump-diffusion call pricing with non-iid lognormal jump sizes.
//!
//! The price is a Poisson-type mixture of Black-Scholes prices,
//!
//! ```text
//! P = e^{-lambda T} / K1 * sum_n (lambda'_n T)^n / n! * (S e^{-qT} N(d1_n) - K e^{-r_n T} N(d2_n))
//! K1 = e^{-lambda T} * sum_n (lambda'_n T)^n / n!
//! ```
//!
//! where `lambda'_n`, `sigma_n` and `r_n` depend on the jump structure through
//! the average mean, variance or correlation of the first `n` jumps.

use serde::{Deserialize, Serialize};

use crate::blackscholes::{call_unchecked, BsInputs};
use crate::error::{Error, Result};

const EXP_LIMIT: f64 = 700.0;

/// Pairwise correlation of jump sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Autocorrelation {
    /// Same correlation for every pair of distinct jumps.
    Constant(f64),
    /// `by_lag[l - 1]` is the correlation of jumps `l` apart; missing lags are zero.
    ByLag(Vec<f64>),
}

impl Autocorrelation {
    /// Average off-diagonal correlation among the first `n` jumps.
    pub fn average(&self, n: usize) -> f64 {
        if n < 2 {
            return 0.0;
        }
        match self {
            Autocorrelation::Constant(rho) => *rho,
            Autocorrelation::ByLag(lags) => {
                // Ordered pairs at lag l: 2 (n - l).
                let total: f64 = lags
                    .iter()
                    .take(n - 1)
                    .enumerate()
                    .map(|(i, rho)| (n - (i + 1)) as f64 * rho)
                    .sum();
                2.0 * total / (n * (n - 1)) as f64
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |r: f64| r > -1.0 && r < 1.0;
        let valid = match self {
            Autocorrelation::Constant(r) => ok(*r),
            Autocorrelation::ByLag(v) => v.iter().all(|&r| ok(r)),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::param("autocorr", "correlations must lie in (-1, 1)"))
        }
    }
}

/// How the jump-size distribution varies across jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum JumpStructure {
    /// Jump `i` has mean `means[i - 1]` (zero past the end) and common variance.
    TimeVaryingMeans { means: Vec<f64>, variance: f64 },
    /// Jump `i` has variance `variances[i - 1]` (zero past the end) and common mean.
    TimeVaryingVariances { mean: f64, variances: Vec<f64> },
    /// Common mean and variance, correlated jump sizes.
    Autocorrelated {
        mean: f64,
        variance: f64,
        autocorr: Autocorrelation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonIidSpec {
    /// Diffusion volatility.
    pub base_vol: f64,
    /// Jump intensity.
    pub lambda: f64,
    pub jumps: JumpStructure,
}

impl NonIidSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_vol >= 0.0 && self.base_vol.is_finite()) {
            return Err(Error::param("base_vol", format!("must be nonnegative, got {}", self.base_vol)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be nonnegative, got {}", self.lambda)));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.jumps {
            JumpStructure::TimeVaryingMeans { means, variance } => {
                if !finite(means) {
                    return Err(Error::param("means", "must be finite"));
                }
                if !(*variance >= 0.0) {
                    return Err(Error::param("variance", "must be nonnegative"));
                }
            }
            JumpStructure::TimeVaryingVariances { mean, variances } => {
                if !mean.is_finite() {
                    return Err(Error::param("mean", "must be finite"));
                }
                if !variances.iter().all(|&v| v >= 0.0 && v.is_finite()) {
                    return Err(Error::param("variances", "must be finite and nonnegative"));
                }
            }
            JumpStructure::Autocorrelated {
                mean,
                variance,
                autocorr,
            } => {
                if !mean.is_finite() {
                    return Err(Error::param("mean", "must be finite"));
                }
                if !(*variance >= 0.0) {
                    return Err(Error::param("variance", "must be nonnegative"));
                }
                autocorr.validate()?;
            }
        }
        Ok(())
    }

    /// Mean and variance of the sum of the first `n` log jump sizes, divided by `n`
    /// for the mean: `(m_n, v_n)` with `lambda'_n = lambda e^{m_n + v_n/2}`,
    /// `sigma_n^2 = sigma^2 + n v_n / T` and `r_n` drift `n (m_n + v_n / 2) / T`.
    fn jump_moments(&self, n: usize) -> Result<(f64, f64)> {
        let avg = |v: &[f64]| -> f64 {
            if n == 0 {
                0.0
            } else {
                v.iter().take(n).sum::<f64>() / n as f64
            }
        };
        match &self.jumps {
            JumpStructure::TimeVaryingMeans { means, variance } => Ok((avg(means), *variance)),
            JumpStructure::TimeVaryingVariances { mean, variances } => Ok((*mean, avg(variances))),
            JumpStructure::Autocorrelated {
                mean,
                variance,
                autocorr,
            } => {
                let scale = 1.0 + (n as f64 - 1.0) * autocorr.average(n);
                if n >= 1 && scale < 0.0 {
                    return Err(Error::Domain(format!(
                        "negative jump-sum variance factor {scale} at n = {n}"
                    )));
                }
                Ok((*mean, variance * if n == 0 { 1.0 } else { scale }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub n_max: usize,
    pub tail_tol: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            n_max: 50,
            tail_tol: 1e-12,
        }
    }
}

impl SeriesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::param("n_max", "must be at least 1"));
        }
        if !(self.tail_tol > 0.0) {
            return Err(Error::param("tail_tol", "must be positive"));
        }
        Ok(())
    }
}

/// Per-term inputs of the Black-Scholes mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTermParams {
    pub lambda_prime_n: f64,
    pub sigma_n: f64,
    pub r_n: f64,
    pub k1: f64,
}

/// Mixture terms for one maturity: log weights and per-term moments.
struct Series {
    log_weights: Vec<f64>,
    moments: Vec<(f64, f64)>,
    ln_k1: f64,
}

fn log_factorial(n: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

fn build_series(spec: &NonIidSpec, maturity: f64, cfg: &SeriesConfig) -> Result<Series> {
    spec.validate()?;
    cfg.validate()?;
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(Error::param("maturity", format!("must be positive, got {maturity}")));
    }
    let mut log_weights = Vec::new();
    let mut moments = Vec::new();
    let mut max_log = f64::NEG_INFINITY;
    let mut prev_log = f64::NEG_INFINITY;
    let mut converged = false;
    let mut last_weight = 0.0;
    for n in 0..=cfg.n_max {
        let (m, v) = spec.jump_moments(n)?;
        let exponent = m + 0.5 * v;
        if exponent > EXP_LIMIT {
            return Err(Error::Overflow(exponent));
        }
        let lp = spec.lambda * exponent.exp();
        let log_w = if n == 0 {
            0.0
        } else if lp == 0.0 {
            f64::NEG_INFINITY
        } else {
            n as f64 * (lp * maturity).ln() - log_factorial(n)
        };
        log_weights.push(log_w);
        moments.push((m, v));
        max_log = max_log.max(log_w);
        // Relative to the running sum, which is at least the largest weight so far.
        let rel = (log_w - max_log).exp();
        last_weight = rel;
        if n > 0 && log_w < prev_log && rel < cfg.tail_tol {
            converged = true;
            break;
        }
        prev_log = log_w;
    }
    if !converged {
        return Err(Error::SeriesNotConverged {
            n_max: cfg.n_max,
            last_weight,
        });
    }
    let sum_scaled: f64 = log_weights.iter().map(|&lw| (lw - max_log).exp()).sum();
    let ln_k1 = -spec.lambda * maturity + max_log + sum_scaled.ln();
    Ok(Series {
        log_weights,
        moments,
        ln_k1,
    })
}

/// `K1` for a maturity, summed until the weights fall below `tail_tol`.
pub fn k1(spec: &NonIidSpec, maturity: f64, cfg: &SeriesConfig) -> Result<f64> {
    let ln_k1 = build_series(spec, maturity, cfg)?.ln_k1;
    if ln_k1 > EXP_LIMIT {
        return Err(Error::Overflow(ln_k1));
    }
    Ok(ln_k1.exp())
}

/// `lambda'_n`, `sigma_n`, `r_n` and `K1` for term `n`.
pub fn effective_params(
    spec: &NonIidSpec,
    n: usize,
    maturity: f64,
    rate: f64,
    cfg: &SeriesConfig,
) -> Result<EffectiveTermParams> {
    if n > cfg.n_max {
        return Err(Error::param("n", format!("{n} exceeds n_max = {}", cfg.n_max)));
    }
    let series = build_series(spec, maturity, cfg)?;
    let (m, v) = spec.jump_moments(n)?;
    let lp = spec.lambda * (m + 0.5 * v).exp();
    Ok(EffectiveTermParams {
        lambda_prime_n: lp,
        sigma_n: term_vol(spec, n, v, maturity),
        r_n: term_rate(rate, series.ln_k1, n, m, v, maturity),
        k1: series.ln_k1.exp(),
    })
}

fn term_vol(spec: &NonIidSpec, n: usize, v: f64, maturity: f64) -> f64 {
    (spec.base_vol * spec.base_vol + n as f64 * v / maturity).sqrt()
}

fn term_rate(rate: f64, ln_k1: f64, n: usize, m: f64, v: f64, maturity: f64) -> f64 {
    rate - ln_k1 / maturity + n as f64 * (m + 0.5 * v) / maturity
}

/// Call price under the non-iid jump-diffusion.
pub fn noniid_call(
    spec: &NonIidSpec,
    spot: f64,
    strike: f64,
    maturity: f64,
    rate: f64,
    dividend_yield: f64,
    cfg: &SeriesConfig,
) -> Result<f64> {
    if !(spot > 0.0 && strike > 0.0) {
        return Err(Error::param("spot/strike", "must be positive"));
    }
    let series = build_series(spec, maturity, cfg)?;
    let max_log = series.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (n, (&lw, &(m, v))) in series.log_weights.iter().zip(&series.moments).enumerate() {
        let w = (lw - max_log).exp();
        if w == 0.0 {
            continue;
        }
        let inputs = BsInputs::new(
            spot,
            strike,
            maturity,
            term_rate(rate, series.ln_k1, n, m, v, maturity),
            dividend_yield,
            term_vol(spec, n, v, maturity),
        );
        num += w * call_unchecked(&inputs);
        den += w;
    }
    // e^{-lambda T} / K1 * sum w_n BS_n == sum w_n BS_n / sum w_n.
    Ok((num / den).max(0.0))
}
