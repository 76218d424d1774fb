//! Vega-weighted least-squares calibration and pricing-error metrics.

mod nelder_mead;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blackscholes::bs_vega;
use crate::diagnostics::{Diagnostic, Flagged};
use crate::error::{Error, Result};
use crate::heston::VolSource;
use crate::model::{named_params, Contract, ModelKind, ModelParams, PricerBinding};
use crate::quad::pairwise_sum;
use crate::quotes::OptionQuote;

/// Objective value for parameter vectors the pricer rejects.
pub const PENALTY: f64 = 1e12;
/// Volatility used for the Vega weight when a quote has no implied vol.
pub const FLOOR_VOL: f64 = 1e-2;
/// Smallest Vega weight used in the objective.
pub const MIN_VEGA: f64 = 1e-8;
/// Limit on the unconstrained coordinates, keeping the logistic map away from saturation.
const Z_BOUND: f64 = 10.0;
/// Quotes with a smaller market price are left out of the relative error.
const ARE_MIN_PRICE: f64 = 1e-9;

/// Box-constrained search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub names: Vec<String>,
    pub initial: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamSpace {
    pub fn new(names: Vec<String>, initial: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let space = Self {
            names,
            initial,
            lower,
            upper,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 || self.initial.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::param("space", "names, initial, lower and upper must have equal nonzero length"));
        }
        for i in 0..n {
            let (lo, x, hi) = (self.lower[i], self.initial[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && x.is_finite()) || !(lo <= x && x <= hi) {
                return Err(Error::param(
                    "space",
                    format!("`{}` needs finite lower <= initial <= upper, got {lo} <= {x} <= {hi}", self.names[i]),
                ));
            }
        }
        Ok(())
    }

    /// Default starting values and bounds for `binding`.
    pub fn defaults(binding: &PricerBinding) -> Self {
        let table: &[(&str, f64, f64, f64)] = &[
            ("sigma", 0.5, 0.0, 2.0),
            ("kappa", 2.0, 0.0, 20.0),
            ("theta", 0.05, 0.0, 2.0),
            ("sigma_v", 1.3, 0.0, 2.0),
            ("rho", 0.8, -1.0, 1.0),
            ("lambda", 0.05, 0.0, 2.0),
            ("mu_j", -0.1, -1.0, 1.0),
            ("sigma_j", 0.1, 0.0, 2.0),
            ("v0", 0.5, 0.0, 1.0),
        ];
        let noniid: &[(&str, f64, f64, f64)] = &[
            ("sigma", 0.2, 0.0, 2.0),
            ("lambda", 0.05, 0.0, 2.0),
            ("jump_mean", -0.1, -1.0, 1.0),
            ("jump_var", 0.01, 0.0, 1.0),
            ("rho", 0.0, -0.9, 0.9),
        ];
        let levy_initial: &[(&str, f64)] = match binding.kind {
            ModelKind::Gh => &[("alpha", 3.8), ("beta", -3.0), ("delta", 1.0), ("nu", 2.0)],
            ModelKind::Nig => &[("alpha", 6.0), ("beta", -3.0), ("delta", 1.0), ("mu", 0.01)],
            ModelKind::Cgmy => &[("c", 0.02), ("g", 0.08), ("m", 7.55), ("y", 1.3)],
            _ => &[],
        };
        let mut space = Self {
            names: Vec::new(),
            initial: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        for name in binding.param_names() {
            let (x, lo, hi) = if binding.kind.is_levy() {
                let x = levy_initial.iter().find(|(n, _)| *n == name).expect("levy name").1;
                (x, -20.0, 20.0)
            } else {
                let rows = if binding.kind == ModelKind::Noniid { noniid } else { table };
                let row = rows.iter().find(|r| r.0 == name).expect("known name");
                (row.1, row.2, row.3)
            };
            space.names.push(name.to_string());
            space.initial.push(x);
            space.lower.push(lo);
            space.upper.push(hi);
        }
        space
    }

    /// Replaces the starting point, keeping the bounds.
    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        self.initial = initial;
        self.validate()?;
        Ok(self)
    }

    fn to_box(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &zi)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                lo + (hi - lo) / (1.0 + (-zi).exp())
            })
            .collect()
    }

    fn from_box(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let (lo, hi) = (self.lower[i], self.upper[i]);
                if hi == lo {
                    return 0.0;
                }
                let p = ((xi - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
                (p / (1.0 - p)).ln()
            })
            .collect()
    }
}

/// Quotes prepared for repeated objective evaluation, with cached Vega weights.
#[derive(Debug, Clone)]
pub struct QuoteSet {
    quotes: Vec<OptionQuote>,
    contracts: Vec<Contract>,
    mids: Vec<f64>,
    vegas: Vec<f64>,
    pub flags: Vec<Diagnostic>,
}

impl QuoteSet {
    /// Backs out missing implied vols and computes each quote's Vega weight.
    pub fn new(quotes: &[OptionQuote]) -> Self {
        let mut flags = Vec::new();
        let mut prepared = Vec::with_capacity(quotes.len());
        let mut vegas = Vec::with_capacity(quotes.len());
        for (index, q) in quotes.iter().enumerate() {
            let mut q = q.clone();
            let vega = match q.implied_vol_or_solve() {
                Ok(iv) => {
                    q.implied_vol = Some(iv);
                    bs_vega(&q.bs_inputs(iv)).unwrap_or(0.0)
                }
                Err(_) => {
                    flags.push(Diagnostic::FlooredVega { index });
                    bs_vega(&q.bs_inputs(FLOOR_VOL)).unwrap_or(0.0)
                }
            };
            let vega = if vega >= MIN_VEGA {
                vega
            } else {
                if !flags.contains(&Diagnostic::FlooredVega { index }) {
                    flags.push(Diagnostic::FlooredVega { index });
                }
                MIN_VEGA
            };
            vegas.push(vega);
            prepared.push(q);
        }
        Self {
            contracts: prepared.iter().map(Contract::from).collect(),
            mids: prepared.iter().map(OptionQuote::mid).collect(),
            quotes: prepared,
            vegas,
            flags,
        }
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    pub fn quotes(&self) -> &[OptionQuote] {
        &self.quotes
    }

    pub fn vegas(&self) -> &[f64] {
        &self.vegas
    }

    fn weighted_sse(&self, prices: &[f64]) -> f64 {
        let terms: Vec<f64> = prices
            .iter()
            .zip(&self.mids)
            .zip(&self.vegas)
            .map(|((p, m), v)| ((m - p) / v).powi(2))
            .collect();
        pairwise_sum(&terms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub sse: f64,
    pub sse_per_quote: f64,
    /// Mean absolute pricing error.
    pub ae: f64,
    /// Mean absolute relative pricing error.
    pub are: f64,
    pub n_quotes: usize,
}

/// Vega-weighted sum of squared pricing errors at the parameter vector `x`.
///
/// Vectors the pricer rejects score [`PENALTY`] with a flag instead of failing.
pub fn sse_objective(binding: &PricerBinding, x: &[f64], set: &QuoteSet) -> Flagged<f64> {
    let priced = binding
        .params_from_vec(x)
        .and_then(|p| binding.price_all(&p.value, &set.contracts));
    match priced {
        Ok(prices) => {
            let sse = set.weighted_sse(&prices.value);
            if sse.is_finite() {
                Flagged {
                    value: sse,
                    flags: prices.flags,
                }
            } else {
                penalty("non-finite objective".into())
            }
        }
        Err(e) => penalty(e.to_string()),
    }
}

fn penalty(reason: String) -> Flagged<f64> {
    Flagged {
        value: PENALTY,
        flags: vec![Diagnostic::Penalty { reason }],
    }
}

/// SSE, AE and ARE of `params` on `set`.
pub fn evaluate_metrics(binding: &PricerBinding, params: &ModelParams, set: &QuoteSet) -> Result<Flagged<ErrorMetrics>> {
    if set.is_empty() {
        return Err(Error::param("quotes", "no quotes to evaluate"));
    }
    let prices = binding.price_all(params, &set.contracts)?;
    let mut flags = set.flags.clone();
    flags.extend(prices.flags);
    let n = set.len();
    let abs: Vec<f64> = prices.value.iter().zip(&set.mids).map(|(p, m)| (p - m).abs()).collect();
    let mut rel = Vec::with_capacity(n);
    for (index, (e, m)) in abs.iter().zip(&set.mids).enumerate() {
        if *m < ARE_MIN_PRICE {
            flags.push(Diagnostic::ExcludedFromAre { index });
        } else {
            rel.push(e / m);
        }
    }
    let sse = set.weighted_sse(&prices.value);
    Ok(Flagged {
        value: ErrorMetrics {
            sse,
            sse_per_quote: sse / n as f64,
            ae: pairwise_sum(&abs) / n as f64,
            are: if rel.is_empty() { 0.0 } else { pairwise_sum(&rel) / rel.len() as f64 },
            n_quotes: n,
        },
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// One parameter set for all quotes.
    #[default]
    Pooled,
    /// One parameter set per trade date.
    PerDay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Maximum objective evaluations across all starts.
    pub budget: usize,
    /// Random starts inside the box after the run from the initial point.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            budget: 5000,
            restarts: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub evaluation: usize,
    pub best_sse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub model: ModelKind,
    pub mode: CalibrationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vol_source: Option<VolSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trade_date: Option<String>,
    pub params: BTreeMap<String, f64>,
    /// Same values as `params`, in the model's parameter order.
    pub best_params: Vec<f64>,
    pub sse: f64,
    pub sse_per_quote: f64,
    pub ae: f64,
    pub are: f64,
    pub n_quotes: usize,
    pub converged: bool,
    pub evaluations: usize,
    pub trace: Vec<TracePoint>,
    pub flags: Vec<String>,
}

impl CalibrationResult {
    /// Rebuilds the calibrated parameters for `binding`, which must match the result's model.
    pub fn model_params(&self, binding: &PricerBinding) -> Result<Flagged<ModelParams>> {
        if binding.kind != self.model {
            return Err(Error::param(
                "model",
                format!("result is for the {} model but {} was requested", self.model, binding.kind),
            ));
        }
        let x = binding
            .param_names()
            .iter()
            .map(|n| {
                self.params
                    .get(*n)
                    .copied()
                    .ok_or_else(|| Error::param("params", format!("calibration result lacks `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        binding.params_from_vec(&x)
    }

    pub fn trace_is_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1].best_sse <= w[0].best_sse)
    }
}

/// Minimizes the weighted SSE over `space` with Nelder-Mead on a logistic
/// reparameterization of the box, followed by random restarts.
pub fn optimize(binding: &PricerBinding, space: &ParamSpace, set: &QuoteSet, cfg: &OptimizerConfig) -> Result<CalibrationResult> {
    space.validate()?;
    let names = binding.param_names();
    if space.names.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::param(
            "space",
            format!("parameter names {:?} do not match the {} model {:?}", space.names, binding.kind, names),
        ));
    }
    if set.is_empty() {
        return Err(Error::param("quotes", "cannot calibrate on an empty quote set"));
    }
    if cfg.budget == 0 {
        return Err(Error::param("budget", "must be positive"));
    }

    let mut evaluations = 0usize;
    let mut best_f = f64::INFINITY;
    let mut best_x = space.initial.clone();
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut infeasible = 0usize;
    let mut first_reason: Option<String> = None;
    let mut objective = |z: &[f64]| -> f64 {
        let x = space.to_box(z);
        let r = sse_objective(binding, &x, set);
        evaluations += 1;
        if r.value >= PENALTY {
            infeasible += 1;
            if first_reason.is_none() {
                if let Some(Diagnostic::Penalty { reason }) = r.flags.first() {
                    first_reason = Some(reason.clone());
                }
            }
        }
        if r.value < best_f {
            best_f = r.value;
            best_x = x;
            trace.push(TracePoint {
                evaluation: evaluations,
                best_sse: best_f,
            });
        }
        r.value
    };

    let settings = |max_evals: usize| nelder_mead::Settings {
        max_evals,
        xtol: 1e-8,
        ftol: 1e-10,
        window: 50,
        stall_floor: PENALTY,
        rebuilds: 2,
        bound: Z_BOUND,
    };
    let mut remaining = cfg.budget;
    let first_share = if cfg.restarts == 0 { remaining } else { remaining * 3 / 5 };
    let z0 = space.from_box(&space.initial);
    let out = nelder_mead::minimize(&mut objective, &z0, 0.5, &settings(first_share));
    remaining -= out.evals;
    let mut best_run = (out.f, out.converged);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for k in 0..cfg.restarts {
        if remaining < 2 * (space.names.len() + 1) {
            break;
        }
        let share = remaining / (cfg.restarts - k);
        let mut used = 0;
        // Draw starting points until one is feasible.
        let mut start = None;
        for _ in 0..20 {
            if used >= share {
                break;
            }
            let x: Vec<f64> = (0..space.names.len())
                .map(|i| {
                    let p = rng.random_range(0.05..0.95);
                    space.lower[i] + p * (space.upper[i] - space.lower[i])
                })
                .collect();
            let z = space.from_box(&x);
            used += 1;
            if objective(&z) < PENALTY {
                start = Some(z);
                break;
            }
        }
        if let Some(z) = start {
            let out = nelder_mead::minimize(&mut objective, &z, 0.5, &settings(share - used));
            used += out.evals;
            if out.f < best_run.0 {
                best_run = (out.f, out.converged);
            }
        }
        remaining -= used.min(remaining);
    }

    let params = binding.params_from_vec(&best_x)?;
    let metrics = evaluate_metrics(binding, &params.value, set)?;
    let mut flags: Vec<String> = params.flags.iter().chain(&metrics.flags).map(ToString::to_string).collect();
    if infeasible > 0 {
        flags.push(
            Diagnostic::Penalty {
                reason: format!(
                    "{infeasible} infeasible parameter vectors, first: {}",
                    first_reason.unwrap_or_default()
                ),
            }
            .to_string(),
        );
    }
    let result = CalibrationResult {
        model: binding.kind,
        mode: CalibrationMode::Pooled,
        vol_source: binding.kind.is_heston().then_some(binding.vol_source),
        trade_date: None,
        params: named_params(&params.value)?
            .into_iter()
            .filter(|(k, _)| names.contains(&k.as_str()))
            .collect(),
        best_params: best_x,
        sse: metrics.value.sse,
        sse_per_quote: metrics.value.sse_per_quote,
        ae: metrics.value.ae,
        are: metrics.value.are,
        n_quotes: metrics.value.n_quotes,
        converged: best_run.1,
        evaluations,
        trace,
        flags,
    };
    debug_assert!(result.trace_is_monotone());
    Ok(result)
}

/// Calibrates on all quotes at once or separately per trade date.
pub fn calibrate(
    binding: &PricerBinding,
    space: &ParamSpace,
    quotes: &[OptionQuote],
    mode: CalibrationMode,
    cfg: &OptimizerConfig,
) -> Result<Vec<CalibrationResult>> {
    match mode {
        CalibrationMode::Pooled => {
            let mut r = optimize(binding, space, &QuoteSet::new(quotes), cfg)?;
            r.mode = mode;
            Ok(vec![r])
        }
        CalibrationMode::PerDay => {
            let mut days: BTreeMap<_, Vec<OptionQuote>> = BTreeMap::new();
            for q in quotes {
                days.entry(q.trade_date).or_default().push(q.clone());
            }
            if days.is_empty() {
                return Err(Error::param("quotes", "cannot calibrate on an empty quote set"));
            }
            days.into_iter()
                .map(|(day, qs)| {
                    let mut r = optimize(binding, space, &QuoteSet::new(&qs), cfg)?;
                    r.mode = mode;
                    r.trade_date = Some(day.to_string());
                    Ok(r)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackscholes::{bs_call, implied_vol};
    use crate::heston::HestonParams;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2013, 3, d).unwrap()
    }

    /// Quotes priced exactly by `binding` at `params`.
    fn synthetic(binding: &PricerBinding, params: &ModelParams, strikes: &[f64], days: &[u32]) -> Vec<OptionQuote> {
        let mut contracts = Vec::new();
        for &d in days {
            for &k in strikes {
                contracts.push((d, k));
            }
        }
        let cs: Vec<Contract> = contracts
            .iter()
            .map(|&(d, k)| Contract {
                spot: 100.0,
                strike: k,
                maturity: d as f64 / 252.0,
                rate: 0.02,
                dividend_yield: 0.01,
                implied_vol: None,
            })
            .collect();
        let prices = binding.price_all(params, &cs).unwrap().value;
        contracts
            .iter()
            .zip(prices)
            .map(|(&(d, k), p)| OptionQuote::new(day(1), 100.0, k, d, p, p, 0.02, 0.01, None))
            .collect()
    }

    fn raw_set(mids: Vec<f64>, vegas: Vec<f64>) -> QuoteSet {
        QuoteSet {
            quotes: Vec::new(),
            contracts: Vec::new(),
            mids,
            vegas,
            flags: Vec::new(),
        }
    }

    #[test]
    fn single_quote_arithmetic() {
        // Error 0.5 against Vega 10.
        let set = raw_set(vec![5.0], vec![10.0]);
        assert!((set.weighted_sse(&[4.5]) - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn two_quote_metrics() {
        // Errors +1 and -1 against mids 10 and 20 with unit Vega weights.
        let set = raw_set(vec![10.0, 20.0], vec![1.0, 1.0]);
        assert_eq!(set.weighted_sse(&[9.0, 21.0]), 2.0);
    }

    #[test]
    fn metrics_on_two_quotes_through_pricer() {
        let b = PricerBinding::new(ModelKind::Bs);
        let strikes = [95.0, 105.0];
        let params = ModelParams::Bs { sigma: 0.2 };
        let mut quotes = synthetic(&b, &params, &strikes, &[63]);
        quotes[0].bid += 1.0;
        quotes[0].ask += 1.0;
        quotes[1].bid -= 1.0;
        quotes[1].ask -= 1.0;
        let set = QuoteSet::new(&quotes);
        let m = evaluate_metrics(&b, &params, &set).unwrap().value;
        assert!((m.ae - 1.0).abs() < 1e-12);
        let expected_are = (1.0 / quotes[0].mid() + 1.0 / quotes[1].mid()) / 2.0;
        assert!((m.are - expected_are).abs() < 1e-12);
        let expected_sse = (1.0 / set.vegas()[0]).powi(2) + (1.0 / set.vegas()[1]).powi(2);
        assert!((m.sse - expected_sse).abs() < 1e-12);
        assert_eq!(m.sse, sse_objective(&b, &[0.2], &set).value);
    }

    #[test]
    fn perfect_fit_has_zero_error() {
        let b = PricerBinding::new(ModelKind::Sv);
        let params = b.params_from_vec(&[2.0, 0.04, 0.3, -0.5, 0.04]).unwrap().value;
        let quotes = synthetic(&b, &params, &[90.0, 100.0, 110.0], &[30, 90]);
        let set = QuoteSet::new(&quotes);
        let m = evaluate_metrics(&b, &params, &set).unwrap().value;
        assert!(m.sse < 1e-12 && m.ae < 1e-12 && m.are < 1e-12);
    }

    #[test]
    fn bs_objective_decreases_towards_true_vol() {
        let b = PricerBinding::new(ModelKind::Bs);
        let quotes = synthetic(&b, &ModelParams::Bs { sigma: 0.25 }, &[90.0, 100.0, 110.0], &[30, 90, 180]);
        let set = QuoteSet::new(&quotes);
        let grid = [0.10, 0.15, 0.20, 0.23, 0.24];
        let values: Vec<f64> = grid.iter().map(|&s| sse_objective(&b, &[s], &set).value).collect();
        assert!(values.iter().all(|v| *v > 0.0));
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
        let above: Vec<f64> = [0.26, 0.3, 0.4].iter().map(|&s| sse_objective(&b, &[s], &set).value).collect();
        assert!(above.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn one_dimensional_bs_calibration_recovers_vol() {
        let b = PricerBinding::new(ModelKind::Bs);
        let quotes = synthetic(&b, &ModelParams::Bs { sigma: 0.237 }, &[90.0, 100.0, 110.0], &[60]);
        // Independent check: the ATM quote's implied vol by bisection.
        let atm = &quotes[1];
        let (mut lo, mut hi) = (0.01, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bs_call(&atm.bs_inputs(mid)).unwrap() < atm.mid() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = calibrate(&b, &ParamSpace::defaults(&b), &quotes, CalibrationMode::Pooled, &OptimizerConfig::default()).unwrap();
        assert!((r[0].params["sigma"] - 0.5 * (lo + hi)).abs() < 1e-6, "{:?}", r[0].params);
        assert!(r[0].trace_is_monotone());
    }

    #[test]
    fn quadratic_objective_through_logistic_box() {
        let space = ParamSpace::new(vec!["x".into()], vec![2.0], vec![0.0], vec![20.0]).unwrap();
        let mut f = |z: &[f64]| (space.to_box(z)[0] - 3.0).powi(2);
        let z0 = space.from_box(&space.initial);
        let out = nelder_mead::minimize(
            &mut f,
            &z0,
            0.5,
            &nelder_mead::Settings {
                max_evals: 2000,
                xtol: 1e-10,
                ftol: 1e-16,
                window: 50,
                stall_floor: PENALTY,
                rebuilds: 2,
                bound: Z_BOUND,
            },
        );
        assert!((space.to_box(&out.x)[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn sv_round_trip_reaches_small_sse() {
        let b = PricerBinding::new(ModelKind::Sv);
        let truth = b.params_from_vec(&[2.0, 0.04, 0.3, -0.5, 0.04]).unwrap().value;
        let strikes: Vec<f64> = (0..10).map(|i| 85.0 + 3.0 * i as f64).collect();
        let quotes = synthetic(&b, &truth, &strikes, &[21, 63, 126, 252]);
        let cfg = OptimizerConfig {
            budget: 3000,
            ..Default::default()
        };
        let r = calibrate(&b, &ParamSpace::defaults(&b), &quotes, CalibrationMode::Pooled, &cfg).unwrap();
        assert!(r[0].sse < 1e-4, "sse {}", r[0].sse);
        assert!(r[0].evaluations <= 3000);
        assert!(r[0].trace_is_monotone());
    }

    #[test]
    fn infeasible_vectors_are_penalized() {
        let b = PricerBinding::new(ModelKind::Nig);
        let quotes = synthetic(
            &PricerBinding::new(ModelKind::Bs),
            &ModelParams::Bs { sigma: 0.2 },
            &[100.0],
            &[63],
        );
        let set = QuoteSet::new(&quotes);
        // |beta| > alpha.
        let r = sse_objective(&b, &[2.0, 5.0, 1.0, 0.0], &set);
        assert_eq!(r.value, PENALTY);
        assert!(matches!(r.flags[0], Diagnostic::Penalty { .. }));
        let ok = sse_objective(&b, &[6.0, -3.0, 0.2, 0.0], &set);
        assert!(ok.value < r.value);
    }

    #[test]
    fn per_day_mode_emits_one_result_per_date() {
        let b = PricerBinding::new(ModelKind::Bs);
        let mut quotes = synthetic(&b, &ModelParams::Bs { sigma: 0.2 }, &[95.0, 100.0, 105.0], &[63]);
        let mut later = synthetic(&b, &ModelParams::Bs { sigma: 0.3 }, &[95.0, 100.0, 105.0], &[63]);
        for q in &mut later {
            q.trade_date = day(2);
        }
        quotes.extend(later);
        let space = ParamSpace::defaults(&b);
        let cfg = OptimizerConfig::default();
        let per_day = calibrate(&b, &space, &quotes, CalibrationMode::PerDay, &cfg).unwrap();
        assert_eq!(per_day.len(), 2);
        assert!((per_day[0].params["sigma"] - 0.2).abs() < 1e-6);
        assert!((per_day[1].params["sigma"] - 0.3).abs() < 1e-6);
        assert_eq!(per_day[1].trade_date.as_deref(), Some("2013-03-02"));
        let pooled = calibrate(&b, &space, &quotes, CalibrationMode::Pooled, &cfg).unwrap();
        assert_eq!(pooled.len(), 1);
        assert!(pooled[0].sse > 0.0);
    }

    #[test]
    fn result_json_round_trip() {
        let b = PricerBinding::new(ModelKind::Sv);
        let truth = b.params_from_vec(&[2.0, 0.04, 0.3, -0.5, 0.04]).unwrap().value;
        let quotes = synthetic(&b, &truth, &[95.0, 100.0, 105.0], &[63]);
        let cfg = OptimizerConfig {
            budget: 200,
            restarts: 0,
            seed: 1,
        };
        let r = calibrate(&b, &ParamSpace::defaults(&b), &quotes, CalibrationMode::Pooled, &cfg).unwrap();
        let text = serde_json::to_string(&r[0]).unwrap();
        for key in ["\"model\":\"sv\"", "\"mode\":\"pooled\"", "\"params\"", "\"sse\"", "\"sse_per_quote\"", "\"converged\"", "\"flags\""] {
            assert!(text.contains(key), "{key} missing from {text}");
        }
        let back: CalibrationResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r[0]);
        let p = back.model_params(&b).unwrap().value;
        let m = evaluate_metrics(&b, &p, &QuoteSet::new(&quotes)).unwrap().value;
        assert_eq!(m.sse, r[0].sse);
        assert!(back.model_params(&PricerBinding::new(ModelKind::Svj)).is_err());
    }

    #[test]
    fn missing_implied_vol_is_solved_and_out_of_band_is_floored() {
        let b = PricerBinding::new(ModelKind::Bs);
        let good = synthetic(&b, &ModelParams::Bs { sigma: 0.2 }, &[100.0], &[63]);
        let mut bad = good[0].clone();
        bad.bid = 200.0;
        bad.ask = 200.0;
        let set = QuoteSet::new(&[good[0].clone(), bad]);
        let iv = implied_vol(good[0].mid(), &good[0].bs_inputs(0.0)).unwrap();
        assert_eq!(set.quotes()[0].implied_vol, Some(iv));
        assert_eq!(set.flags, vec![Diagnostic::FlooredVega { index: 1 }]);
        assert!(set.vegas()[1] > 0.0);
    }

    #[test]
    fn space_validation() {
        assert!(ParamSpace::new(vec!["x".into()], vec![5.0], vec![0.0], vec![1.0]).is_err());
        assert!(ParamSpace::new(vec!["x".into()], vec![0.5], vec![0.0], vec![f64::INFINITY]).is_err());
        let b = PricerBinding::new(ModelKind::Svj);
        let s = ParamSpace::defaults(&b);
        assert_eq!(s.names, b.param_names());
        s.validate().unwrap();
        let p = HestonParams::svj(2.0, 0.05, 1.3, 0.8, 0.5, 0.05, -0.1, 0.1);
        assert_eq!(s.initial, b.params_to_vec(&ModelParams::Heston(p)).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn logistic_map_round_trips(p in 0.001f64..0.999, lo in -20.0f64..0.0, width in 0.1f64..40.0) {
            let space = ParamSpace::new(vec!["x".into()], vec![lo + p * width], vec![lo], vec![lo + width]).unwrap();
            let z = space.from_box(&space.initial);
            let x = space.to_box(&z)[0];
            prop_assert!((x - space.initial[0]).abs() < 1e-9 * (1.0 + width));
            prop_assert!(x > lo && x < lo + width);
        }

        #[test]
        fn objective_is_deterministic_and_penalty_dominates(sigma in 0.05f64..1.0) {
            let b = PricerBinding::new(ModelKind::Bs);
            let quotes = synthetic(&b, &ModelParams::Bs { sigma: 0.2 }, &[90.0, 100.0, 110.0], &[30, 120]);
            let set = QuoteSet::new(&quotes);
            let a = sse_objective(&b, &[sigma], &set).value;
            let c = sse_objective(&b, &[sigma], &set).value;
            prop_assert_eq!(a.to_bits(), c.to_bits());
            prop_assert!(a < sse_objective(&b, &[-1.0], &set).value);
        }
    }
}
