//! Uniform pricing interface over every supported model, used by calibration,
//! sweeps and the command line.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blackscholes::{bs_call, BsInputs};
use crate::diagnostics::{Diagnostic, Flagged};
use crate::error::{Error, Result};
use crate::heston::{HestonContext, HestonParams, HestonSlice, IntegrationConfig, VolSource};
use crate::levy::{fft_call_prices, CgmyParams, FftConfig, GhParams, LevyModel, NigParams};
use crate::noniid::{noniid_call, Autocorrelation, JumpStructure, NonIidSpec, SeriesConfig};
use crate::quotes::OptionQuote;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bs,
    Sv,
    Svj,
    Noniid,
    Gh,
    Nig,
    Cgmy,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Bs,
        ModelKind::Sv,
        ModelKind::Svj,
        ModelKind::Noniid,
        ModelKind::Gh,
        ModelKind::Nig,
        ModelKind::Cgmy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bs => "bs",
            ModelKind::Sv => "sv",
            ModelKind::Svj => "svj",
            ModelKind::Noniid => "noniid",
            ModelKind::Gh => "gh",
            ModelKind::Nig => "nig",
            ModelKind::Cgmy => "cgmy",
        }
    }

    pub fn is_heston(self) -> bool {
        matches!(self, ModelKind::Sv | ModelKind::Svj)
    }

    pub fn is_levy(self) -> bool {
        matches!(self, ModelKind::Gh | ModelKind::Nig | ModelKind::Cgmy)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::param("model", format!("unknown model `{s}`")))
    }
}

/// A contract to price: one strike and maturity against one market state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub spot: f64,
    pub strike: f64,
    /// Years.
    pub maturity: f64,
    pub rate: f64,
    pub dividend_yield: f64,
    pub implied_vol: Option<f64>,
}

impl From<&OptionQuote> for Contract {
    fn from(q: &OptionQuote) -> Self {
        Self {
            spot: q.spot,
            strike: q.strike,
            maturity: q.maturity_years,
            rate: q.rate,
            dividend_yield: q.dividend_yield,
            implied_vol: q.implied_vol,
        }
    }
}

impl Contract {
    /// Contracts sharing this key share one Heston slice or FFT grid.
    fn slice_key(&self) -> [u64; 4] {
        [
            self.spot.to_bits(),
            self.maturity.to_bits(),
            self.rate.to_bits(),
            self.dividend_yield.to_bits(),
        ]
    }
}

/// Concrete parameters for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelParams {
    Bs { sigma: f64 },
    Heston(HestonParams),
    NonIid(NonIidSpec),
    Levy(LevyModel),
}

/// Model choice plus the numerical settings of its pricer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricerBinding {
    pub kind: ModelKind,
    /// Only consulted by SV and SVJ.
    pub vol_source: VolSource,
    pub heston: IntegrationConfig,
    pub fft: FftConfig,
    pub series: SeriesConfig,
    /// Accept GH parameter vectors with negative alpha by taking its absolute value.
    pub relaxed_gh: bool,
}

impl PricerBinding {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            vol_source: VolSource::CalibratedConstant,
            heston: IntegrationConfig::default(),
            fft: FftConfig::default(),
            series: SeriesConfig::default(),
            relaxed_gh: false,
        }
    }

    pub fn with_vol_source(mut self, vol_source: VolSource) -> Self {
        self.vol_source = vol_source;
        self
    }

    /// Names of the entries of a parameter vector, in order.
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = match self.kind {
            ModelKind::Bs => vec!["sigma"],
            ModelKind::Sv => vec!["kappa", "theta", "sigma_v", "rho"],
            ModelKind::Svj => vec!["kappa", "theta", "sigma_v", "rho", "lambda", "mu_j", "sigma_j"],
            ModelKind::Noniid => vec!["sigma", "lambda", "jump_mean", "jump_var", "rho"],
            ModelKind::Gh => vec!["alpha", "beta", "delta", "nu"],
            ModelKind::Nig => vec!["alpha", "beta", "delta", "mu"],
            ModelKind::Cgmy => vec!["c", "g", "m", "y"],
        };
        if self.kind.is_heston() && self.vol_source == VolSource::CalibratedConstant {
            names.push("v0");
        }
        names
    }

    /// Builds model parameters from a vector ordered as [`Self::param_names`].
    pub fn params_from_vec(&self, x: &[f64]) -> Result<Flagged<ModelParams>> {
        let names = self.param_names();
        if x.len() != names.len() {
            return Err(Error::param(
                "params",
                format!("{} model takes {} parameters, got {}", self.kind, names.len(), x.len()),
            ));
        }
        let get = |name: &str| x[names.iter().position(|n| *n == name).expect("known name")];
        let v0 = if names.contains(&"v0") { get("v0") } else { 0.0 };
        let mut flags = Vec::new();
        let params = match self.kind {
            ModelKind::Bs => ModelParams::Bs { sigma: get("sigma") },
            ModelKind::Sv => ModelParams::Heston(HestonParams::sv(get("kappa"), get("theta"), get("sigma_v"), get("rho"), v0)),
            ModelKind::Svj => ModelParams::Heston(HestonParams::svj(
                get("kappa"),
                get("theta"),
                get("sigma_v"),
                get("rho"),
                v0,
                get("lambda"),
                get("mu_j"),
                get("sigma_j"),
            )),
            ModelKind::Noniid => ModelParams::NonIid(NonIidSpec {
                base_vol: get("sigma"),
                lambda: get("lambda"),
                jumps: JumpStructure::Autocorrelated {
                    mean: get("jump_mean"),
                    variance: get("jump_var"),
                    autocorr: Autocorrelation::Constant(get("rho")),
                },
            }),
            ModelKind::Gh => {
                let (a, b, d, n) = (get("alpha"), get("beta"), get("delta"), get("nu"));
                let p = if self.relaxed_gh {
                    let r = GhParams::new_relaxed(a, b, d, n)?;
                    flags.extend(r.flags);
                    r.value
                } else {
                    GhParams::new(a, b, d, n)?
                };
                ModelParams::Levy(LevyModel::Gh(p))
            }
            ModelKind::Nig => ModelParams::Levy(LevyModel::Nig(NigParams::new(
                get("alpha"),
                get("beta"),
                get("delta"),
                get("mu"),
            )?)),
            ModelKind::Cgmy => ModelParams::Levy(LevyModel::Cgmy(CgmyParams::new(get("c"), get("g"), get("m"), get("y"))?)),
        };
        self.check(&params)?;
        Ok(Flagged { value: params, flags })
    }

    /// Parameter vector ordered as [`Self::param_names`], if the parameters are representable.
    pub fn params_to_vec(&self, params: &ModelParams) -> Result<Vec<f64>> {
        self.check(params)?;
        let named = named_params(params)?;
        self.param_names()
            .iter()
            .map(|n| {
                named
                    .get(*n)
                    .copied()
                    .ok_or_else(|| Error::param("params", format!("missing `{n}` for {} model", self.kind)))
            })
            .collect()
    }

    /// Parses parameters from JSON.
    ///
    /// Accepts a flat `{name: value}` object, the tagged Lévy form
    /// `{"model": ..., "params": {...}}`, or a full non-iid specification.
    pub fn params_from_json(&self, value: &Value) -> Result<Flagged<ModelParams>> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::param("params", "expected a JSON object"))?;
        if let Some(tag) = obj.get("model").and_then(Value::as_str) {
            if tag.parse::<ModelKind>()? != self.kind {
                return Err(Error::param(
                    "model",
                    format!("parameter file is for `{tag}` but the {} model was requested", self.kind),
                ));
            }
            let inner = obj.get("params").ok_or_else(|| Error::param("params", "missing `params` object"))?;
            return self.params_from_json(inner);
        }
        if self.kind == ModelKind::Noniid && obj.contains_key("jumps") {
            let spec: NonIidSpec = serde_json::from_value(value.clone())?;
            spec.validate()?;
            return Ok(Flagged::clean(ModelParams::NonIid(spec)));
        }
        let mut names = self.param_names();
        // v0 is optional when spot variance comes from the quotes.
        if self.kind.is_heston() && self.vol_source == VolSource::ImpliedPerQuote {
            names.retain(|n| *n != "v0");
        }
        let x = names
            .iter()
            .map(|n| {
                obj.get(*n)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::param("params", format!("missing numeric `{n}` for {} model", self.kind)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = obj.keys().find(|k| !names.contains(&k.as_str()) && k.as_str() != "v0") {
            return Err(Error::param("params", format!("unknown parameter `{extra}` for {} model", self.kind)));
        }
        self.params_from_vec(&x)
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        let ok = match (self.kind, params) {
            (ModelKind::Bs, ModelParams::Bs { sigma }) => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
                }
                true
            }
            (ModelKind::Sv, ModelParams::Heston(p)) => {
                p.validate()?;
                p.lambda == 0.0
            }
            (ModelKind::Svj, ModelParams::Heston(p)) => {
                p.validate()?;
                true
            }
            (ModelKind::Noniid, ModelParams::NonIid(s)) => {
                s.validate()?;
                true
            }
            (ModelKind::Gh, ModelParams::Levy(m @ LevyModel::Gh(_)))
            | (ModelKind::Nig, ModelParams::Levy(m @ LevyModel::Nig(_)))
            | (ModelKind::Cgmy, ModelParams::Levy(m @ LevyModel::Cgmy(_))) => {
                m.validate()?;
                true
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("params", format!("parameters do not match the {} model", self.kind)))
        }
    }

    /// Prices every contract, in input order.
    pub fn price_all(&self, params: &ModelParams, contracts: &[Contract]) -> Result<Flagged<Vec<f64>>> {
        self.check(params)?;
        let mut groups: BTreeMap<[u64; 4], Vec<usize>> = BTreeMap::new();
        for (i, c) in contracts.iter().enumerate() {
            groups.entry(c.slice_key()).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = groups.into_values().collect();
        let priced: Vec<Vec<(usize, Flagged<f64>)>> = groups
            .par_iter()
            .map(|idx| self.price_group(params, contracts, idx))
            .collect::<Result<_>>()?;
        let mut prices = vec![0.0; contracts.len()];
        let mut flags = Vec::new();
        for group in priced {
            for (i, p) in group {
                prices[i] = p.value;
                flags.extend(p.flags);
            }
        }
        Ok(Flagged { value: prices, flags })
    }

    pub fn price(&self, params: &ModelParams, contract: &Contract) -> Result<Flagged<f64>> {
        let mut all = self.price_all(params, std::slice::from_ref(contract))?;
        Ok(Flagged {
            value: all.value.pop().expect("one price"),
            flags: all.flags,
        })
    }

    /// Prices contracts that share spot, maturity, rate and dividend yield.
    fn price_group(&self, params: &ModelParams, contracts: &[Contract], idx: &[usize]) -> Result<Vec<(usize, Flagged<f64>)>> {
        let first = contracts[idx[0]];
        match params {
            ModelParams::Bs { sigma } => idx
                .iter()
                .map(|&i| {
                    let c = &contracts[i];
                    let p = bs_call(&BsInputs::new(c.spot, c.strike, c.maturity, c.rate, c.dividend_yield, *sigma))?;
                    Ok((i, Flagged::clean(p)))
                })
                .collect(),
            ModelParams::Heston(p) => {
                let ctx = HestonContext {
                    spot: first.spot,
                    rate: first.rate,
                    dividend_yield: first.dividend_yield,
                    maturity: first.maturity,
                };
                let min_v0 = match self.vol_source {
                    VolSource::CalibratedConstant => p.v0,
                    VolSource::ImpliedPerQuote => idx
                        .iter()
                        .filter_map(|&i| contracts[i].implied_vol)
                        .map(|v| v * v)
                        .fold(f64::INFINITY, f64::min),
                };
                let min_v0 = if min_v0.is_finite() { min_v0 } else { 0.0 };
                let slice = HestonSlice::for_variance(p, &ctx, &self.heston, min_v0)?;
                idx.iter()
                    .map(|&i| {
                        let c = &contracts[i];
                        let v0 = match self.vol_source {
                            VolSource::CalibratedConstant => p.v0,
                            VolSource::ImpliedPerQuote => {
                                let iv = c.implied_vol.ok_or_else(|| {
                                    Error::param("implied_vol", "per-quote vol source requires every quote to carry an implied vol")
                                })?;
                                iv * iv
                            }
                        };
                        Ok((i, slice.call(c.strike, v0)?))
                    })
                    .collect()
            }
            ModelParams::NonIid(spec) => idx
                .iter()
                .map(|&i| {
                    let c = &contracts[i];
                    let p = noniid_call(spec, c.spot, c.strike, c.maturity, c.rate, c.dividend_yield, &self.series)?;
                    Ok((i, Flagged::clean(p)))
                })
                .collect(),
            ModelParams::Levy(model) => {
                let grid = fft_call_prices(model, first.spot, first.rate, first.dividend_yield, first.maturity, &self.fft)?;
                let (lo, hi) = idx.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &i| {
                    (lo.min(contracts[i].strike), hi.max(contracts[i].strike))
                });
                // Only report negative grid values near the strikes being priced.
                let margin = 1.05;
                let mut group_flags: Vec<Diagnostic> = grid
                    .flags
                    .iter()
                    .filter(|d| matches!(d, Diagnostic::NegativePrice { strike, .. } if *strike >= lo / margin && *strike <= hi * margin))
                    .cloned()
                    .collect();
                let mut out = Vec::with_capacity(idx.len());
                for &i in idx {
                    let p = grid.price(contracts[i].strike)?;
                    out.push((
                        i,
                        Flagged {
                            value: p,
                            flags: std::mem::take(&mut group_flags),
                        },
                    ));
                }
                Ok(out)
            }
        }
    }
}

/// Parameters as `name -> value`, for models with a flat parameterization.
pub fn named_params(params: &ModelParams) -> Result<BTreeMap<String, f64>> {
    let pairs: Vec<(&str, f64)> = match params {
        ModelParams::Bs { sigma } => vec![("sigma", *sigma)],
        ModelParams::Heston(p) => vec![
            ("kappa", p.kappa),
            ("theta", p.theta),
            ("sigma_v", p.sigma_v),
            ("rho", p.rho),
            ("v0", p.v0),
            ("lambda", p.lambda),
            ("mu_j", p.mu_j),
            ("sigma_j", p.sigma_j),
        ],
        ModelParams::NonIid(NonIidSpec {
            base_vol,
            lambda,
            jumps:
                JumpStructure::Autocorrelated {
                    mean,
                    variance,
                    autocorr: Autocorrelation::Constant(rho),
                },
        }) => vec![
            ("sigma", *base_vol),
            ("lambda", *lambda),
            ("jump_mean", *mean),
            ("jump_var", *variance),
            ("rho", *rho),
        ],
        ModelParams::NonIid(_) => {
            return Err(Error::Unsupported(
                "only constant-correlation non-iid specifications have a flat parameter vector".into(),
            ))
        }
        ModelParams::Levy(LevyModel::Gh(p)) => vec![("alpha", p.alpha), ("beta", p.beta), ("delta", p.delta), ("nu", p.nu)],
        ModelParams::Levy(LevyModel::Nig(p)) => vec![("alpha", p.alpha), ("beta", p.beta), ("delta", p.delta), ("mu", p.mu)],
        ModelParams::Levy(LevyModel::Cgmy(p)) => vec![("c", p.c), ("g", p.g), ("m", p.m), ("y", p.y)],
    };
    Ok(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::reference;
    use serde_json::json;

    fn contract(strike: f64, maturity: f64) -> Contract {
        Contract {
            spot: 100.0,
            strike,
            maturity,
            rate: 0.03,
            dividend_yield: 0.01,
            implied_vol: Some(0.2),
        }
    }

    #[test]
    fn names_follow_vol_source() {
        let b = PricerBinding::new(ModelKind::Sv);
        assert_eq!(b.param_names().last(), Some(&"v0"));
        let b = b.with_vol_source(VolSource::ImpliedPerQuote);
        assert!(!b.param_names().contains(&"v0"));
        assert_eq!(PricerBinding::new(ModelKind::Svj).param_names().len(), 8);
    }

    #[test]
    fn vector_round_trip() {
        let cases: [(ModelKind, Vec<f64>); 5] = [
            (ModelKind::Bs, vec![0.2]),
            (ModelKind::Svj, vec![2.0, 0.04, 0.3, -0.5, 0.5, -0.1, 0.1, 0.04]),
            (ModelKind::Noniid, vec![0.2, 0.5, -0.05, 0.01, 0.1]),
            (ModelKind::Nig, vec![6.1882, -3.8941, 0.1622, 0.0]),
            (ModelKind::Cgmy, vec![0.0244, 0.0765, 7.5515, 1.2945]),
        ];
        for (kind, x) in cases {
            let b = PricerBinding::new(kind);
            let p = b.params_from_vec(&x).unwrap().value;
            assert_eq!(b.params_to_vec(&p).unwrap(), x, "{kind}");
        }
    }

    #[test]
    fn json_forms() {
        let b = PricerBinding::new(ModelKind::Nig);
        let flat = b.params_from_json(&json!({"alpha": 6.1882, "beta": -3.8941, "delta": 0.1622, "mu": 0.0})).unwrap();
        let tagged = b
            .params_from_json(&json!({"model": "nig", "params": {"alpha": 6.1882, "beta": -3.8941, "delta": 0.1622, "mu": 0.0}}))
            .unwrap();
        assert_eq!(flat.value, tagged.value);
        assert_eq!(flat.value, ModelParams::Levy(LevyModel::Nig(reference::nig())));
        assert!(b.params_from_json(&json!({"model": "gh", "params": {}})).is_err());
        assert!(b.params_from_json(&json!({"alpha": 6.0, "beta": -3.0, "delta": 1.0})).is_err());
        assert!(b
            .params_from_json(&json!({"alpha": 6.0, "beta": -3.0, "delta": 1.0, "mu": 0.0, "gamma": 1.0}))
            .is_err());

        let n = PricerBinding::new(ModelKind::Noniid);
        let spec = json!({"base_vol": 0.2, "lambda": 0.3,
            "jumps": {"variant": "time_varying_means", "means": [-0.1, -0.05], "variance": 0.01}});
        assert!(matches!(n.params_from_json(&spec).unwrap().value, ModelParams::NonIid(_)));
    }

    #[test]
    fn relaxed_gh_binding_flags() {
        let mut b = PricerBinding::new(ModelKind::Gh);
        assert!(b.params_from_vec(&[-17.3, 1.0, 0.5, 1.0]).is_err());
        b.relaxed_gh = true;
        let p = b.params_from_vec(&[-17.3, 1.0, 0.5, 1.0]).unwrap();
        assert!(matches!(p.flags[0], Diagnostic::RelaxedGhAlpha { .. }));
    }

    #[test]
    fn batch_matches_single_contract_pricing() {
        let contracts: Vec<Contract> = [(90.0, 0.25), (100.0, 0.5), (110.0, 0.25), (105.0, 1.0)]
            .iter()
            .map(|&(k, t)| contract(k, t))
            .collect();
        for (kind, x) in [
            (ModelKind::Bs, vec![0.2]),
            (ModelKind::Sv, vec![2.0, 0.04, 0.3, -0.5, 0.04]),
            (ModelKind::Noniid, vec![0.2, 0.5, -0.05, 0.01, 0.0]),
            (ModelKind::Nig, vec![6.1882, -3.8941, 0.1622, 0.0]),
        ] {
            let b = PricerBinding::new(kind);
            let p = b.params_from_vec(&x).unwrap().value;
            let batch = b.price_all(&p, &contracts).unwrap().value;
            for (c, &v) in contracts.iter().zip(&batch) {
                assert_eq!(b.price(&p, c).unwrap().value.to_bits(), v.to_bits(), "{kind}");
            }
        }
    }

    #[test]
    fn sv_with_zero_vol_of_vol_is_black_scholes() {
        let b = PricerBinding::new(ModelKind::Sv);
        let p = b.params_from_vec(&[0.0, 0.04, 0.0, 0.0, 0.04]).unwrap().value;
        let c = contract(100.0, 0.5);
        let bs = bs_call(&BsInputs::new(100.0, 100.0, 0.5, 0.03, 0.01, 0.2)).unwrap();
        assert!((b.price(&p, &c).unwrap().value - bs).abs() < 1e-6);
    }

    #[test]
    fn per_quote_vol_source_uses_contract_vol() {
        let b = PricerBinding::new(ModelKind::Sv).with_vol_source(VolSource::ImpliedPerQuote);
        let p = b.params_from_vec(&[0.0, 0.04, 0.0, 0.0]).unwrap().value;
        let mut c = contract(100.0, 0.5);
        c.implied_vol = Some(0.3);
        let bs = bs_call(&BsInputs::new(100.0, 100.0, 0.5, 0.03, 0.01, 0.3)).unwrap();
        assert!((b.price(&p, &c).unwrap().value - bs).abs() < 1e-6);
        c.implied_vol = None;
        assert!(b.price(&p, &c).is_err());
    }

    #[test]
    fn mismatched_params_rejected() {
        let b = PricerBinding::new(ModelKind::Bs);
        let p = ModelParams::Levy(LevyModel::Nig(reference::nig()));
        assert!(b.price(&p, &contract(100.0, 0.5)).is_err());
    }

    #[test]
    fn kind_parsing() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("vg".parse::<ModelKind>().is_err());
    }
}
