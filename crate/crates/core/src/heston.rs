//! Stochastic volatility (SV) and stochastic volatility with lognormal jumps
//! (SVJ) call pricing through the two risk-neutral probabilities
//!
//! ```text
//! Pi_j = 1/2 + 1/pi * int_0^U Re[ e^{-i phi ln K} f_j(phi) / (i phi) ] dphi
//! C    = S e^{-q tau} Pi_1 - K e^{-r tau} Pi_2
//! ```
//!
//! `ln f_j` is affine in the spot variance, `ln f_j = A_j(phi) + V D_j(phi)`, so
//! `A_j` and `D_j` are tabulated once per maturity slice and reused across
//! strikes and per-quote variances.
//!
//! The only multivalued piece is `Q = 2 ln R + x tau` with
//! `R = 1 - x (1 - e^{-xi tau}) / (2 xi)` and `x = xi - b`. `Q` is invariant
//! under `xi -> -xi` up to multiples of `4 pi i`, so it is tracked by continuity
//! in `phi` starting from `Q(0) = 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Diagnostic, Flagged};
use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, GaussLegendre};
use crate::quotes::OptionQuote;
use crate::specfun::ComplexValue;

type C = ComplexValue;

const EXP_LIMIT: f64 = 700.0;
/// Largest accepted phase change of the tracked logarithm between samples.
const PHASE_STEP: f64 = PI / 4.0;
const MAX_BISECTIONS: u32 = 40;
/// Path step used when tracking to an isolated point.
const WALK_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    /// Long-run variance.
    pub theta: f64,
    pub sigma_v: f64,
    pub rho: f64,
    /// Spot variance; ignored when the variance comes from quote implied vols.
    pub v0: f64,
    pub lambda: f64,
    pub mu_j: f64,
    pub sigma_j: f64,
}

impl HestonParams {
    pub fn sv(kappa: f64, theta: f64, sigma_v: f64, rho: f64, v0: f64) -> Self {
        Self {
            kappa,
            theta,
            sigma_v,
            rho,
            v0,
            lambda: 0.0,
            mu_j: 0.0,
            sigma_j: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn svj(kappa: f64, theta: f64, sigma_v: f64, rho: f64, v0: f64, lambda: f64, mu_j: f64, sigma_j: f64) -> Self {
        Self {
            kappa,
            theta,
            sigma_v,
            rho,
            v0,
            lambda,
            mu_j,
            sigma_j,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("sigma_v", self.sigma_v),
            ("v0", self.v0),
            ("lambda", self.lambda),
            ("sigma_j", self.sigma_j),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::param("rho", format!("must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.mu_j > -1.0 && self.mu_j.is_finite()) {
            return Err(Error::param("mu_j", format!("must exceed -1, got {}", self.mu_j)));
        }
        Ok(())
    }
}

/// Market data shared by all strikes of one maturity slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonContext {
    pub spot: f64,
    pub rate: f64,
    pub dividend_yield: f64,
    pub maturity: f64,
}

impl HestonContext {
    pub fn of(quote: &OptionQuote) -> Self {
        Self {
            spot: quote.spot,
            rate: quote.rate,
            dividend_yield: quote.dividend_yield,
            maturity: quote.maturity_years,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(Error::param("spot", format!("must be positive, got {}", self.spot)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::param("maturity", format!("must be positive, got {}", self.maturity)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    GaussLegendre,
    AdaptiveSimpson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub upper_bound: f64,
    pub nodes: usize,
    pub scheme: Scheme,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            upper_bound: 100.0,
            nodes: 256,
            scheme: Scheme::GaussLegendre,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.upper_bound > 0.0 && self.upper_bound.is_finite()) {
            return Err(Error::param("upper_bound", "must be positive"));
        }
        if self.nodes < 32 {
            return Err(Error::param("nodes", format!("must be at least 32, got {}", self.nodes)));
        }
        Ok(())
    }
}

/// Where the spot variance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolSource {
    /// Squared market implied vol of each quote.
    ImpliedPerQuote,
    /// The `v0` parameter, shared by all quotes.
    CalibratedConstant,
}

/// Probability index: 1 for the share measure, 2 for the risk-neutral exercise probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prob {
    One,
    Two,
}

impl Prob {
    fn index(self) -> u8 {
        match self {
            Prob::One => 1,
            Prob::Two => 2,
        }
    }
}

/// Pieces of `ln f_j` at one `phi`, before branch resolution.
struct Pieces {
    /// Principal value of `Q = 2 ln R + x tau`.
    q: C,
    /// `Q / sigma_v^2` computed without cancellation, valid when `Q` is tiny.
    q_scaled: Option<C>,
    /// Coefficient of the spot variance.
    d: C,
    /// Drift and jump terms.
    rest: C,
}

/// `(1 - e^{-z}) / z * tau` where `z = xi tau`, stable near zero.
fn one_minus_exp_over(xi: C, tau: f64) -> C {
    let z = xi * tau;
    if z.norm() < 1e-5 {
        tau * (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0)
    } else {
        (1.0 - (-z).exp()) / xi
    }
}

/// `ln(1 - y) / y`, stable near zero.
fn log1m_over(y: C) -> C {
    if y.norm() < 1e-3 {
        -(1.0 + y / 2.0 + y * y / 3.0 + y * y * y / 4.0 + y * y * y * y / 5.0)
    } else {
        (1.0 - y).ln() / y
    }
}

fn pieces(j: Prob, p: &HestonParams, ctx: &HestonContext, phi: C) -> Pieces {
    let i = C::i();
    let iphi = i * phi;
    let tau = ctx.maturity;
    let s2 = p.sigma_v * p.sigma_v;
    let (u, a) = match j {
        Prob::One => (1.0 + iphi, iphi * (iphi + 1.0)),
        Prob::Two => (iphi, iphi * (iphi - 1.0)),
    };
    let b = p.kappa - u * p.rho * p.sigma_v;
    let xi = (b * b - a * s2).sqrt();

    // x = xi - b, either directly or as -a sigma^2 / (xi + b), whichever avoids cancellation.
    let plus = xi + b;
    let minus = xi - b;
    let (x, xs) = if plus.norm() >= minus.norm() && plus.norm() > 0.0 {
        let xs = -a / plus;
        (xs * s2, Some(xs))
    } else if s2 > 0.0 {
        (minus, Some(minus / s2))
    } else {
        (minus, None)
    };
    let e = one_minus_exp_over(xi, tau);
    let y = x * e / 2.0;
    let q = if y.norm() < 1e-3 {
        2.0 * y * log1m_over(y) + x * tau
    } else {
        2.0 * (1.0 - y).ln() + x * tau
    };
    let q_scaled = match xs {
        Some(xs) if y.norm() < 1e-3 => Some(xs * e * log1m_over(y) + xs * tau),
        _ => None,
    };
    let d = a * e / (2.0 - x * e);

    let drift = iphi * (ctx.spot.ln() + (ctx.rate - ctx.dividend_yield) * tau);
    let jumps = if p.lambda > 0.0 {
        let sj2 = p.sigma_j * p.sigma_j;
        let growth = (iphi * (1.0 + p.mu_j).ln()).exp();
        let comp = -p.lambda * iphi * p.mu_j * tau;
        match j {
            Prob::One => {
                p.lambda * (1.0 + p.mu_j) * tau * (growth * (iphi / 2.0 * (1.0 + iphi) * sj2).exp() - 1.0) + comp
            }
            Prob::Two => p.lambda * tau * (growth * (iphi / 2.0 * (iphi - 1.0) * sj2).exp() - 1.0) + comp,
        }
    } else {
        C::new(0.0, 0.0)
    };
    Pieces {
        q,
        q_scaled,
        d,
        rest: drift + jumps,
    }
}

/// `ln f_j = a + V d` on the branch selected by `k` (number of `4 pi i` shifts of `Q`).
fn assemble(pc: &Pieces, k: i64, p: &HestonParams) -> (C, C) {
    let kt = p.kappa * p.theta;
    let log_term = if kt == 0.0 {
        C::new(0.0, 0.0)
    } else {
        match pc.q_scaled {
            Some(qs) if k == 0 => -kt * qs,
            _ => {
                let s2 = p.sigma_v * p.sigma_v;
                -kt * (pc.q + C::new(0.0, 4.0 * PI * k as f64)) / s2
            }
        }
    };
    (pc.rest + log_term, pc.d)
}

/// Branch state of the tracked `Q`.
#[derive(Clone, Copy)]
struct Track {
    t: f64,
    k: i64,
    im: f64,
}

fn resolve(prev_im: f64, principal_im: f64) -> (i64, f64) {
    let k = ((prev_im - principal_im) / (4.0 * PI)).round() as i64;
    (k, principal_im + 4.0 * PI * k as f64)
}

/// Advances the branch state along `path(t)` from `from.t` to `t_to`, bisecting
/// whenever the phase of `Q` moves by more than `PHASE_STEP`.
fn advance<F: Fn(f64) -> Pieces>(path: &F, from: Track, t_to: f64, depth: u32, u_report: f64) -> Result<(Track, Pieces)> {
    let pc = path(t_to);
    let (k, im) = resolve(from.im, pc.q.im);
    if (im - from.im).abs() <= PHASE_STEP {
        return Ok((Track { t: t_to, k, im }, pc));
    }
    if depth >= MAX_BISECTIONS {
        return Err(Error::BranchDiscontinuity { u: u_report });
    }
    let mid = 0.5 * (from.t + t_to);
    let (mid_state, _) = advance(path, from, mid, depth + 1, u_report)?;
    advance(path, mid_state, t_to, depth + 1, u_report)
}

fn check_exponent(z: C, phi: f64) -> Result<()> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Integration {
            phi,
            message: "non-finite characteristic exponent".into(),
        });
    }
    // Large negative real parts underflow harmlessly to zero.
    if z.re > EXP_LIMIT {
        return Err(Error::Overflow(z.re));
    }
    Ok(())
}

/// `ln f_j(phi)` on the continuous branch along the segment from 0 to `phi`.
fn log_char_fn(j: Prob, p: &HestonParams, ctx: &HestonContext, phi: C, v0: f64) -> Result<C> {
    let path = |t: f64| pieces(j, p, ctx, phi * t);
    let steps = ((phi.norm() / WALK_STEP).ceil() as usize).max(1);
    let mut state = Track { t: 0.0, k: 0, im: path(0.0).q.im };
    let mut last = path(0.0);
    for s in 1..=steps {
        let (st, pc) = advance(&path, state, s as f64 / steps as f64, 0, phi.re)?;
        state = st;
        last = pc;
    }
    let (a, d) = assemble(&last, state.k, p);
    Ok(a + v0 * d)
}

const TAIL_TOL: f64 = 1e-10;
const MAX_EXTENSIONS: u32 = 4;

fn truncation_for(params: &HestonParams, ctx: &HestonContext, cfg: &IntegrationConfig, v0: f64) -> Result<IntegrationConfig> {
    let mut out = *cfg;
    for _ in 0..MAX_EXTENSIONS {
        let phi = C::new(out.upper_bound, 0.0);
        let mut decayed = true;
        for j in [Prob::One, Prob::Two] {
            let z = log_char_fn(j, params, ctx, phi, v0)?;
            decayed &= z.re < TAIL_TOL.ln();
        }
        if decayed {
            break;
        }
        out.upper_bound *= 2.0;
        out.nodes *= 2;
    }
    Ok(out)
}

/// Characteristic function `f_j` of the log spot under measure `j`, evaluated at `phi`
/// with spot variance `params.v0`.
pub fn char_fn(j: Prob, params: &HestonParams, ctx: &HestonContext, phi: C) -> Result<C> {
    params.validate()?;
    ctx.validate()?;
    let z = log_char_fn(j, params, ctx, phi, params.v0)?;
    check_exponent(z, phi.re)?;
    Ok(z.exp())
}

/// `A_j` and `D_j` tabulated on the quadrature nodes of one maturity slice.
#[derive(Debug, Clone)]
pub struct HestonSlice {
    params: HestonParams,
    ctx: HestonContext,
    cfg: IntegrationConfig,
    phi: Vec<f64>,
    weights: Vec<f64>,
    a: [Vec<C>; 2],
    d: [Vec<C>; 2],
}

impl HestonSlice {
    /// Slice for pricing with spot variance `params.v0`.
    pub fn new(params: &HestonParams, ctx: &HestonContext, cfg: &IntegrationConfig) -> Result<Self> {
        Self::for_variance(params, ctx, cfg, params.v0)
    }

    /// Slice for pricing with spot variances of at least `min_v0`.
    ///
    /// `cfg.upper_bound` is a lower limit: it is doubled, with the node count,
    /// until both characteristic functions have decayed below `1e-10` at the
    /// truncation point, at most 16-fold. Short maturities need this.
    pub fn for_variance(params: &HestonParams, ctx: &HestonContext, cfg: &IntegrationConfig, min_v0: f64) -> Result<Self> {
        params.validate()?;
        ctx.validate()?;
        cfg.validate()?;
        let cfg = &truncation_for(params, ctx, cfg, min_v0.max(0.0))?;
        let mut slice = Self {
            params: *params,
            ctx: *ctx,
            cfg: *cfg,
            phi: Vec::new(),
            weights: Vec::new(),
            a: [Vec::new(), Vec::new()],
            d: [Vec::new(), Vec::new()],
        };
        if cfg.scheme == Scheme::GaussLegendre {
            let rule = GaussLegendre::get(cfg.nodes);
            let (phi, weights): (Vec<f64>, Vec<f64>) = rule.mapped(0.0, cfg.upper_bound).unzip();
            for (idx, j) in [Prob::One, Prob::Two].into_iter().enumerate() {
                let path = |t: f64| pieces(j, params, ctx, C::new(t, 0.0));
                let mut state = Track { t: 0.0, k: 0, im: 0.0 };
                let mut a = Vec::with_capacity(phi.len());
                let mut d = Vec::with_capacity(phi.len());
                for &x in &phi {
                    let (st, pc) = advance(&path, state, x, 0, x)?;
                    state = st;
                    let (ai, di) = assemble(&pc, st.k, params);
                    a.push(ai);
                    d.push(di);
                }
                slice.a[idx] = a;
                slice.d[idx] = d;
            }
            slice.phi = phi;
            slice.weights = weights;
        }
        Ok(slice)
    }

    /// Raw `Pi_j` at `strike` with spot variance `v0`, before clamping.
    pub fn raw_probability(&self, j: Prob, strike: f64, v0: f64) -> Result<f64> {
        let ln_k = strike.ln();
        let integral = match self.cfg.scheme {
            Scheme::GaussLegendre => {
                let idx = (j.index() - 1) as usize;
                let (a, d) = (&self.a[idx], &self.d[idx]);
                let mut sum = 0.0;
                for n in 0..self.phi.len() {
                    let phi = self.phi[n];
                    let z = a[n] + v0 * d[n] - C::new(0.0, phi * ln_k);
                    check_exponent(z, phi)?;
                    let term = z.exp().im / phi;
                    if !term.is_finite() {
                        return Err(Error::Integration {
                            phi,
                            message: "non-finite integrand".into(),
                        });
                    }
                    sum += self.weights[n] * term;
                }
                sum
            }
            Scheme::AdaptiveSimpson => {
                let mut failure: Option<Error> = None;
                let value = adaptive_simpson(
                    |phi: f64| {
                        if failure.is_some() {
                            return 0.0;
                        }
                        let phi = phi.max(1e-9);
                        let z = log_char_fn(j, &self.params, &self.ctx, C::new(phi, 0.0), v0)
                            .and_then(|z| {
                                let z = z - C::new(0.0, phi * ln_k);
                                check_exponent(z, phi).map(|_| z)
                            });
                        match z {
                            Ok(z) => z.exp().im / phi,
                            Err(e) => {
                                failure = Some(e);
                                0.0
                            }
                        }
                    },
                    0.0,
                    self.cfg.upper_bound,
                    1e-11,
                    50,
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                value
            }
        };
        Ok(0.5 + integral / PI)
    }

    /// `Pi_j`, clamped to [-0.01, 1.01] with a diagnostic when outside.
    pub fn probability(&self, j: Prob, strike: f64, v0: f64) -> Result<Flagged<f64>> {
        let raw = self.raw_probability(j, strike, v0)?;
        if !(-0.01..=1.01).contains(&raw) {
            return Ok(Flagged {
                value: raw.clamp(-0.01, 1.01),
                flags: vec![Diagnostic::ClampedProbability { j: j.index(), value: raw }],
            });
        }
        Ok(Flagged::clean(raw))
    }

    /// Call price at `strike` with spot variance `v0`.
    pub fn call(&self, strike: f64, v0: f64) -> Result<Flagged<f64>> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(Error::param("strike", format!("must be positive, got {strike}")));
        }
        if !(v0 >= 0.0 && v0.is_finite()) {
            return Err(Error::param("v0", format!("must be nonnegative, got {v0}")));
        }
        let p1 = self.probability(Prob::One, strike, v0)?;
        let p2 = self.probability(Prob::Two, strike, v0)?;
        let tau = self.ctx.maturity;
        let raw = self.ctx.spot * (-self.ctx.dividend_yield * tau).exp() * p1.value
            - strike * (-self.ctx.rate * tau).exp() * p2.value;
        let mut flags = p1.flags;
        flags.extend(p2.flags);
        let value = if raw >= 0.0 {
            raw
        } else if raw > -1e-6 {
            flags.push(Diagnostic::FlooredNegativePrice { value: raw });
            0.0
        } else {
            return Err(Error::NegativePrice(raw));
        };
        Ok(Flagged { value, flags })
    }
}

/// `Pi_j` for a single strike.
pub fn probability_pi(
    j: Prob,
    params: &HestonParams,
    ctx: &HestonContext,
    strike: f64,
    cfg: &IntegrationConfig,
) -> Result<Flagged<f64>> {
    HestonSlice::new(params, ctx, cfg)?.probability(j, strike, params.v0)
}

/// Call price for one quote, taking the spot variance from `vol_source`.
pub fn heston_call(
    params: &HestonParams,
    quote: &OptionQuote,
    vol_source: VolSource,
    cfg: &IntegrationConfig,
) -> Result<Flagged<f64>> {
    let v0 = spot_variance(params, quote, vol_source)?;
    HestonSlice::new(params, &HestonContext::of(quote), cfg)?.call(quote.strike, v0)
}

/// Spot variance for `quote` under `vol_source`.
pub fn spot_variance(params: &HestonParams, quote: &OptionQuote, vol_source: VolSource) -> Result<f64> {
    match vol_source {
        VolSource::CalibratedConstant => Ok(params.v0),
        VolSource::ImpliedPerQuote => quote
            .implied_vol
            .map(|v| v * v)
            .ok_or_else(|| Error::param("implied_vol", "per-quote vol source requires every quote to carry an implied vol")),
    }
}
