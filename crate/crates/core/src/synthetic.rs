//! Synthetic quote sets priced by a model, for round-trip tests and demos.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blackscholes::implied_vol;
use crate::diagnostics::Flagged;
use crate::error::{Error, Result};
use crate::model::{Contract, ModelParams, PricerBinding};
use crate::quotes::OptionQuote;

/// A rectangular strike-by-maturity grid against one market state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuoteGrid {
    pub trade_date: NaiveDate,
    pub spot: f64,
    pub rate: f64,
    pub dividend_yield: f64,
    pub maturity_days: Vec<u32>,
    /// Strikes per maturity, evenly spaced in `K / S` over `moneyness_range`.
    pub strikes: usize,
    pub moneyness_range: (f64, f64),
    /// Relative bid-ask spread around the mid.
    pub spread: f64,
    /// Standard deviation of the multiplicative noise applied to each mid.
    pub noise: f64,
}

impl Default for QuoteGrid {
    fn default() -> Self {
        Self {
            trade_date: NaiveDate::from_ymd_opt(2013, 1, 2).expect("valid date"),
            spot: 100.0,
            rate: 0.02,
            dividend_yield: 0.01,
            maturity_days: vec![21, 42, 63, 126, 252],
            strikes: 40,
            moneyness_range: (0.85, 1.15),
            spread: 0.0,
            noise: 0.0,
        }
    }
}

impl QuoteGrid {
    /// `maturities` maturities from 2 weeks to 2 years with `strikes` strikes each.
    pub fn sized(maturities: usize, strikes: usize) -> Self {
        let (lo, hi) = (10.0f64, 504.0f64);
        let maturity_days = (0..maturities)
            .map(|i| {
                let f = if maturities > 1 { i as f64 / (maturities - 1) as f64 } else { 0.0 };
                (lo * (hi / lo).powf(f)).round() as u32
            })
            .collect();
        Self {
            maturity_days,
            strikes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(Error::param("spot", "must be positive"));
        }
        if self.maturity_days.is_empty() || self.maturity_days.contains(&0) {
            return Err(Error::param("maturity_days", "need at least one positive maturity"));
        }
        let (lo, hi) = self.moneyness_range;
        if !(lo > 0.0 && hi >= lo) || self.strikes == 0 || (self.strikes > 1 && hi == lo) {
            return Err(Error::param("moneyness_range", format!("invalid range ({lo}, {hi}) for {} strikes", self.strikes)));
        }
        if !(0.0..2.0).contains(&self.spread) {
            return Err(Error::param("spread", "must lie in [0, 2)"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise", "must be nonnegative"));
        }
        Ok(())
    }

    fn strike_levels(&self) -> Vec<f64> {
        let (lo, hi) = self.moneyness_range;
        (0..self.strikes)
            .map(|i| {
                let f = if self.strikes > 1 { i as f64 / (self.strikes - 1) as f64 } else { 0.5 };
                self.spot * (lo + (hi - lo) * f)
            })
            .collect()
    }
}

/// Prices `grid` under `params`, perturbs each mid by `1 + noise * z` and
/// records the implied vol of the resulting mid. Quotes whose mid cannot be
/// inverted are kept with a blank implied vol.
pub fn synthesize(
    binding: &PricerBinding,
    params: &ModelParams,
    grid: &QuoteGrid,
    seed: u64,
) -> Result<Flagged<Vec<OptionQuote>>> {
    grid.validate()?;
    let strikes = grid.strike_levels();
    let mut skeleton = Vec::with_capacity(grid.maturity_days.len() * strikes.len());
    for &days in &grid.maturity_days {
        for &k in &strikes {
            skeleton.push(OptionQuote::new(
                grid.trade_date,
                grid.spot,
                k,
                days,
                0.0,
                0.0,
                grid.rate,
                grid.dividend_yield,
                None,
            ));
        }
    }
    let contracts: Vec<Contract> = skeleton.iter().map(Contract::from).collect();
    let priced = binding.price_all(params, &contracts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quotes = skeleton
        .into_iter()
        .zip(priced.value)
        .map(|(mut q, price)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mid = if grid.noise > 0.0 { price * (1.0 + grid.noise * z).max(0.0) } else { price };
            q.bid = mid * (1.0 - 0.5 * grid.spread);
            q.ask = mid * (1.0 + 0.5 * grid.spread);
            q.implied_vol = implied_vol(q.mid(), &q.bs_inputs(0.0)).ok();
            q
        })
        .collect();
    Ok(Flagged {
        value: quotes,
        flags: priced.flags,
    })
}
