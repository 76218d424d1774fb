//! Exponential-Lévy models: generalized hyperbolic (GH), normal inverse
//! Gaussian (NIG) and CGMY.
//!
//! Each model exposes the time-1 Lévy exponent `psi(u) = ln E[e^{iuX_1}]` of its
//! driftless part. The log-price at horizon `t` under the pricing measure is
//!
//! ```text
//! ln S_t = ln S_0 + (omega + mu) t + X_t,   omega = r - q - psi(-i)
//! ```
//!
//! where `mu` is the explicit NIG drift (zero for GH and CGMY). `omega` makes
//! `S_0 e^{omega t + X_t}` grow at `r - q`.

mod fft;
mod mc;

pub use fft::{fft_call_prices, quadrature_call, FftConfig, FftGrid, Interpolation};
pub use mc::{mc_call, McEstimate};

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Diagnostic, Flagged};
use crate::error::{Error, Result};
use crate::specfun::{bessel_k_scaled, gamma_real, ComplexValue};

type C = ComplexValue;

const EXP_LIMIT: f64 = 700.0;
const PHASE_STEP: f64 = PI / 4.0;
const MAX_BISECTIONS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// Index of the Bessel function (often written lambda).
    pub nu: f64,
}

impl GhParams {
    pub fn new(alpha: f64, beta: f64, delta: f64, nu: f64) -> Result<Self> {
        let p = Self { alpha, beta, delta, nu };
        p.validate()?;
        Ok(p)
    }

    /// Accepts a negative `alpha` by using `|alpha|`, flagging the substitution.
    pub fn new_relaxed(alpha: f64, beta: f64, delta: f64, nu: f64) -> Result<Flagged<Self>> {
        let p = Self::new(alpha.abs(), beta, delta, nu)?;
        let flags = if alpha < 0.0 {
            vec![Diagnostic::RelaxedGhAlpha { alpha }]
        } else {
            Vec::new()
        };
        Ok(Flagged { value: p, flags })
    }

    pub fn validate(&self) -> Result<()> {
        validate_hyperbolic(self.alpha, self.beta, self.delta)?;
        if !self.nu.is_finite() {
            return Err(Error::param("nu", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// Drift per unit time, added on top of the martingale drift.
    pub mu: f64,
}

impl NigParams {
    pub fn new(alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<Self> {
        let p = Self { alpha, beta, delta, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_hyperbolic(self.alpha, self.beta, self.delta)?;
        if !self.mu.is_finite() {
            return Err(Error::param("mu", "must be finite"));
        }
        Ok(())
    }
}

fn validate_hyperbolic(alpha: f64, beta: f64, delta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    if !(beta.abs() < alpha) {
        return Err(Error::param("beta", format!("|beta| must be below alpha = {alpha}, got {beta}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::param("delta", format!("must be positive, got {delta}")));
    }
    if !((beta + 1.0).abs() < alpha) {
        return Err(Error::param(
            "beta",
            format!("E[e^X] is infinite: |beta + 1| = {} must be below alpha = {alpha}", (beta + 1.0).abs()),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgmyParams {
    pub c: f64,
    pub g: f64,
    pub m: f64,
    pub y: f64,
}

impl CgmyParams {
    pub fn new(c: f64, g: f64, m: f64, y: f64) -> Result<Self> {
        let p = Self { c, g, m, y };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::param("c", format!("must be positive, got {}", self.c)));
        }
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(Error::param("g", format!("must be nonnegative, got {}", self.g)));
        }
        if !(self.m > 1.0 && self.m.is_finite()) {
            return Err(Error::param("m", format!("must exceed 1, got {}", self.m)));
        }
        if !(self.y < 2.0 && self.y.is_finite()) {
            return Err(Error::param("y", format!("must be below 2, got {}", self.y)));
        }
        if self.y == 0.0 || self.y == 1.0 {
            return Err(Error::param("y", "Gamma(-Y) has a pole at Y = 0 and Y = 1"));
        }
        if self.y < 0.0 && self.g == 0.0 {
            return Err(Error::param("g", "must be positive when Y < 0"));
        }
        Ok(())
    }
}

/// A Lévy model; serializes as `{"model": "gh"|"nig"|"cgmy", "params": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "lowercase")]
pub enum LevyModel {
    Gh(GhParams),
    Nig(NigParams),
    Cgmy(CgmyParams),
}

impl LevyModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            LevyModel::Gh(p) => p.validate(),
            LevyModel::Nig(p) => p.validate(),
            LevyModel::Cgmy(p) => p.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LevyModel::Gh(_) => "gh",
            LevyModel::Nig(_) => "nig",
            LevyModel::Cgmy(_) => "cgmy",
        }
    }

    /// Explicit drift per unit time (NIG `mu`, otherwise zero).
    pub fn drift(&self) -> f64 {
        match self {
            LevyModel::Nig(p) => p.mu,
            _ => 0.0,
        }
    }

    /// Largest Carr-Madan damping exponent for which `E[S_t^{1 + damping}]` is finite.
    pub fn max_damping(&self) -> f64 {
        match self {
            LevyModel::Gh(p) => p.alpha - p.beta - 1.0,
            LevyModel::Nig(p) => p.alpha - p.beta - 1.0,
            LevyModel::Cgmy(p) => p.m - 1.0,
        }
    }

    /// Whether `u` lies in the strip where the exponent is analytic.
    fn in_strip(&self, u: C) -> bool {
        // e^{iuX} integrability depends on -Im u.
        let s = -u.im;
        match self {
            LevyModel::Gh(p) => (p.beta + s).abs() < p.alpha,
            LevyModel::Nig(p) => (p.beta + s).abs() < p.alpha,
            LevyModel::Cgmy(p) => s < p.m && s > -p.g || (s == 0.0),
        }
    }

    /// Time-1 Lévy exponent of the driftless part on its continuous branch.
    pub fn exponent(&self, u: C) -> Result<C> {
        if !(u.re.is_finite() && u.im.is_finite()) {
            return Err(Error::Domain(format!("non-finite Fourier argument {u}")));
        }
        if !self.in_strip(u) {
            return Err(Error::Domain(format!(
                "u = {u} is outside the analytic strip of the {} exponent",
                self.name()
            )));
        }
        match self {
            LevyModel::Nig(p) => Ok(nig_exponent(p.alpha, p.beta, p.delta, u)),
            LevyModel::Gh(p) => gh_exponent(p, u),
            LevyModel::Cgmy(p) => cgmy_exponent(p, u),
        }
    }

    /// Martingale drift `omega = r - q - psi(-i)`.
    pub fn martingale_drift(&self, rate: f64, dividend_yield: f64) -> Result<f64> {
        let psi = self.exponent(C::new(0.0, -1.0))?;
        if !psi.re.is_finite() {
            return Err(Error::Domain("E[e^X] is not finite".into()));
        }
        Ok(rate - dividend_yield - psi.re)
    }
}

fn nig_exponent(alpha: f64, beta: f64, delta: f64, u: C) -> C {
    let gamma = (alpha * alpha - beta * beta).sqrt();
    let b = beta + C::i() * u;
    delta * (gamma - (alpha * alpha - b * b).sqrt())
}

fn gh_exponent(p: &GhParams, u: C) -> Result<C> {
    let a2 = p.alpha * p.alpha;
    let g2 = a2 - p.beta * p.beta;
    let b = p.beta + C::i() * u;
    let w = a2 - b * b;
    let z = p.delta * w.sqrt();
    let z0 = p.delta * g2.sqrt();
    let power = 0.5 * p.nu * (g2 / w).ln();
    let ks0 = bessel_k_scaled(p.nu, C::new(z0, 0.0))?;
    let ln_ks = ln_bessel_k_scaled(p.nu, z, u.re)?;
    Ok(power + (z0 - z) + ln_ks - ks0.re.ln())
}

/// Continuous logarithm of `e^z K_nu(z)` on `Re z > 0`, continued from the
/// positive real axis along the arc `|z| e^{i s arg z}`. `K_nu` has no zeros in
/// the right half-plane, so the result does not depend on the path.
fn ln_bessel_k_scaled(nu: f64, z: C, u_report: f64) -> Result<C> {
    let r = z.norm();
    let theta = z.im.atan2(z.re);
    let at = |s: f64| -> Result<C> { Ok(bessel_k_scaled(nu, C::from_polar(r, s * theta))?.ln()) };
    let start = at(0.0)?;
    if theta == 0.0 {
        return Ok(start);
    }
    let steps = ((theta.abs() / (FRAC_PI_2 / 4.0)).ceil() as usize).max(1);
    let mut s_prev = 0.0;
    let mut im_prev = start.im;
    let mut last = start;
    for k in 1..=steps {
        let s = k as f64 / steps as f64;
        let (v, im) = follow(&at, s_prev, im_prev, s, 0, u_report)?;
        s_prev = s;
        im_prev = im;
        last = C::new(v.re, im);
    }
    Ok(last)
}

/// Moves the tracked phase from `s0` to `s1`, bisecting on large jumps.
fn follow<F: Fn(f64) -> Result<C>>(at: &F, s0: f64, im0: f64, s1: f64, depth: u32, u_report: f64) -> Result<(C, f64)> {
    let v = at(s1)?;
    let k = ((im0 - v.im) / (2.0 * PI)).round();
    let im = v.im + 2.0 * PI * k;
    if (im - im0).abs() <= PHASE_STEP {
        return Ok((v, im));
    }
    if depth >= MAX_BISECTIONS {
        return Err(Error::BranchDiscontinuity { u: u_report });
    }
    let mid = 0.5 * (s0 + s1);
    let (_, im_mid) = follow(at, s0, im0, mid, depth + 1, u_report)?;
    follow(at, mid, im_mid, s1, depth + 1, u_report)
}

fn cgmy_exponent(p: &CgmyParams, u: C) -> Result<C> {
    let iu = C::i() * u;
    let left = p.m - iu;
    let right = p.g + iu;
    if left.re <= 0.0 || (right.re <= 0.0 && !(right.re == 0.0 && right.im == 0.0 && p.y > 0.0)) {
        return Err(Error::Domain(format!("CGMY power base leaves the right half-plane at u = {u}")));
    }
    let pow = |z: C| -> C {
        if z == C::new(0.0, 0.0) {
            C::new(0.0, 0.0)
        } else {
            (p.y * z.ln()).exp()
        }
    };
    let gm = gamma_real(-p.y)?;
    Ok(p.c * gm * (pow(left) - p.m.powf(p.y) + pow(right) - pow(C::new(p.g, 0.0))))
}

/// Characteristic function of `X_t + mu t` (model drift included, no martingale correction).
pub fn raw_char_fn(model: &LevyModel, u: C, t: f64) -> Result<C> {
    check_horizon(t)?;
    model.validate()?;
    let z = t * (model.exponent(u)? + C::i() * u * model.drift());
    exp_checked(z)
}

/// Characteristic function of `ln(S_t / S_0)` under the pricing measure.
pub fn risk_neutral_char_fn(model: &LevyModel, u: C, t: f64, rate: f64, dividend_yield: f64) -> Result<C> {
    check_horizon(t)?;
    model.validate()?;
    exp_checked(log_risk_neutral(model, u, t, rate, dividend_yield)?)
}

pub(crate) fn log_risk_neutral(model: &LevyModel, u: C, t: f64, rate: f64, dividend_yield: f64) -> Result<C> {
    let omega = model.martingale_drift(rate, dividend_yield)?;
    Ok(t * (model.exponent(u)? + C::i() * u * (omega + model.drift())))
}

fn check_horizon(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    Ok(())
}

fn exp_checked(z: C) -> Result<C> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::Domain(format!("non-finite characteristic exponent {z}")));
    }
    if z.re > EXP_LIMIT {
        return Err(Error::Overflow(z.re));
    }
    Ok(z.exp())
}

/// Parameter sets used for the sensitivity studies.
pub mod reference {
    use super::*;

    pub fn gh() -> GhParams {
        GhParams {
            alpha: 3.8288,
            beta: -3.8286,
            delta: 0.2375,
            nu: -1.7555,
        }
    }

    pub fn nig() -> NigParams {
        NigParams {
            alpha: 6.1882,
            beta: -3.8941,
            delta: 0.1622,
            mu: 0.0,
        }
    }

    pub fn cgmy() -> CgmyParams {
        CgmyParams {
            c: 0.0244,
            g: 0.0765,
            m: 7.5515,
            y: 1.2945,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::reference::*;
    use super::*;
    use crate::quad::adaptive_gk;
    use proptest::prelude::*;

    fn models() -> [LevyModel; 3] {
        [LevyModel::Gh(gh()), LevyModel::Nig(nig()), LevyModel::Cgmy(cgmy())]
    }

    #[test]
    fn unit_at_zero() {
        for m in models() {
            let f = raw_char_fn(&m, C::new(0.0, 0.0), 1.3).unwrap();
            assert!((f - 1.0).norm() < 1e-14, "{}: {f}", m.name());
        }
    }

    #[test]
    fn conjugate_symmetry_on_real_axis() {
        for m in models() {
            for &u in &[0.1, 1.0, 5.0, 37.0, 250.0] {
                let a = raw_char_fn(&m, C::new(u, 0.0), 0.7).unwrap();
                let b = raw_char_fn(&m, C::new(-u, 0.0), 0.7).unwrap();
                assert!((a - b.conj()).norm() <= 1e-12 * a.norm().max(1e-300), "{} u={u}", m.name());
            }
        }
    }

    #[test]
    fn gh_with_minus_half_index_is_nig() {
        let n = nig();
        let g = LevyModel::Gh(GhParams {
            alpha: n.alpha,
            beta: n.beta,
            delta: n.delta,
            nu: -0.5,
        });
        for k in 0..64 {
            let u = C::new(-20.0 + 40.0 * k as f64 / 63.0, 0.0);
            let a = raw_char_fn(&g, u, 1.0).unwrap();
            let b = raw_char_fn(&LevyModel::Nig(n), u, 1.0).unwrap();
            assert!((a - b).norm() < 1e-10, "u={u}");
        }
    }

    #[test]
    fn martingale_identity() {
        for m in models() {
            for &t in &[0.1, 0.5, 1.0, 2.0] {
                let f = risk_neutral_char_fn(&m, C::new(0.0, -1.0), t, 0.05, 0.01).unwrap();
                let target = (0.04 * t as f64).exp();
                assert!((f - target).norm() < 1e-12, "{} t={t}: {f}", m.name());
            }
        }
    }

    #[test]
    fn equal_rates_give_unit_forward_factor() {
        for m in models() {
            let f = risk_neutral_char_fn(&m, C::new(0.0, -1.0), 1.0, 0.03, 0.03).unwrap();
            assert!((f - 1.0).norm() < 1e-13);
        }
    }

    #[test]
    fn nig_drift_shifts_the_forward() {
        let m = LevyModel::Nig(NigParams { mu: 0.2, ..nig() });
        let f = risk_neutral_char_fn(&m, C::new(0.0, -1.0), 1.0, 0.05, 0.0).unwrap();
        assert!((f.re - (0.25f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn constructors_reject_invalid_parameters() {
        assert!(GhParams::new(-1.0, 0.0, 1.0, 1.0).is_err());
        assert!(GhParams::new(2.0, 2.5, 1.0, 1.0).is_err());
        assert!(GhParams::new(2.0, 1.5, 1.0, 1.0).is_err(), "|beta + 1| >= alpha");
        assert!(NigParams::new(6.0, -3.0, 0.0, 0.0).is_err());
        assert!(CgmyParams::new(1.0, 1.0, 1.0, 0.5).is_err());
        assert!(CgmyParams::new(1.0, 1.0, 5.0, 1.0).is_err());
        assert!(CgmyParams::new(1.0, 1.0, 5.0, 0.0).is_err());
        assert!(CgmyParams::new(1.0, 1.0, 5.0, 2.0).is_err());
        assert!(CgmyParams::new(1.0, 0.0, 5.0, -0.5).is_err());
        assert!(CgmyParams::new(1.0, 1.0, 5.0, -0.5).is_ok());
    }

    #[test]
    fn relaxed_gh_flags_negative_alpha() {
        let f = GhParams::new_relaxed(-17.3388, -3.0, 1.0, 2.0).unwrap();
        assert_eq!(f.value.alpha, 17.3388);
        assert!(matches!(f.flags[0], Diagnostic::RelaxedGhAlpha { .. }));
        assert!(GhParams::new_relaxed(4.0, -3.0, 1.0, 2.0).unwrap().flags.is_empty());
    }

    #[test]
    fn outside_strip_is_domain_error() {
        let m = LevyModel::Nig(nig());
        assert!(matches!(m.exponent(C::new(0.0, -20.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn model_json_shape() {
        let text = serde_json::to_string(&LevyModel::Cgmy(cgmy())).unwrap();
        assert_eq!(text, r#"{"model":"cgmy","params":{"c":0.0244,"g":0.0765,"m":7.5515,"y":1.2945}}"#);
        let back: LevyModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, LevyModel::Cgmy(cgmy()));
    }

    /// Oracle: CGMY with Y < 1 has finite variation, so its exponent is
    /// `int (e^{iux} - 1) k(x) dx` with `k(x) = C e^{-Mx} x^{-1-Y}` for x > 0 and
    /// `C e^{-G|x|} |x|^{-1-Y}` for x < 0; integrated numerically.
    #[test]
    fn cgmy_exponent_matches_levy_measure_integral() {
        let p = CgmyParams::new(0.7, 3.0, 6.0, 0.4).unwrap();
        let u = 1.7;
        let side = |rate: f64, sign: f64| -> C {
            let re = |x: f64| ((sign * u * x).cos() - 1.0) * (-rate * x).exp() * x.powf(-1.0 - p.y);
            let im = |x: f64| (sign * u * x).sin() * (-rate * x).exp() * x.powf(-1.0 - p.y);
            let mut total = C::new(0.0, 0.0);
            let mut a = 0.0;
            let mut b = 1e-6;
            while a < 60.0 {
                let (r, _) = adaptive_gk(re, a, b, 1e-14, 200);
                let (i, _) = adaptive_gk(im, a, b, 1e-14, 200);
                total += C::new(r, i);
                a = b;
                b *= 4.0;
            }
            total * p.c
        };
        let oracle = side(p.m, 1.0) + side(p.g, -1.0);
        let got = cgmy_exponent(&p, C::new(u, 0.0)).unwrap();
        assert!((got - oracle).norm() < 1e-7, "{got} vs {oracle}");
    }

    /// The tracked GH logarithm must be continuous along a fine real grid even
    /// when the Bessel phase wraps several times (large index, long horizon).
    #[test]
    fn gh_log_is_continuous_for_large_index() {
        let m = LevyModel::Gh(GhParams::new(4.0, -1.0, 3.0, 12.0).unwrap());
        let mut prev = m.exponent(C::new(0.0, 0.0)).unwrap();
        for k in 1..4000 {
            let u = C::new(k as f64 * 0.05, 0.0);
            let cur = m.exponent(u).unwrap();
            assert!((cur.im - prev.im).abs() < 0.5, "jump at u={u}: {prev} -> {cur}");
            prev = cur;
        }
    }

    proptest! {
        #[test]
        fn martingale_identity_random_horizon(t in 0.05..3.0f64, r in -0.01..0.1f64, q in 0.0..0.05f64) {
            for m in models() {
                let f = risk_neutral_char_fn(&m, C::new(0.0, -1.0), t, r, q).unwrap();
                prop_assert!((f - ((r - q) * t).exp()).norm() < 1e-12);
            }
        }

        #[test]
        fn real_axis_modulus_bounded(u in -200.0..200.0f64, t in 0.05..3.0f64) {
            for m in models() {
                let f = raw_char_fn(&m, C::new(u, 0.0), t).unwrap();
                prop_assert!(f.norm() <= 1.0 + 1e-12);
            }
        }
    }
}
