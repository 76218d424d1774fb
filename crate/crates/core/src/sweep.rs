//! One-parameter sensitivity sweeps with a monotonicity classification.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::Diagnostic;
use crate::error::{Error, Result};
use crate::levy::{reference, LevyModel};
use crate::model::{Contract, ModelKind, ModelParams, PricerBinding};

const MIN_POINTS: usize = 5;
pub const DEFAULT_POINTS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub binding: PricerBinding,
    pub params: ModelParams,
    pub contract: Contract,
    /// `S`, `K`, `T`, `r`, `q`, or a model parameter name.
    pub target: String,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
    NonMonotone,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Increasing => "increasing",
            Direction::Decreasing => "decreasing",
            Direction::NonMonotone => "non_monotone",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub target: String,
    pub curve: Vec<(f64, f64)>,
    /// Grid values that gave no price, with the reason.
    pub gaps: Vec<(f64, String)>,
    pub direction: Direction,
    pub flags: Vec<Diagnostic>,
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Classifies a curve by the signs of its adjacent differences, treating steps
/// within `1e-9 * max |price|` as flat. A direction needs at least one step.
pub fn classify(curve: &[(f64, f64)]) -> Direction {
    let scale = curve.iter().fold(0.0f64, |m, (_, p)| m.max(p.abs()));
    let tol = 1e-9 * scale;
    let diffs: Vec<f64> = curve.windows(2).map(|w| w[1].1 - w[0].1).collect();
    // Steps within `tol` count as flat, so tails priced at zero do not break monotonicity.
    let rises = diffs.iter().any(|d| *d > tol);
    let falls = diffs.iter().any(|d| *d < -tol);
    if rises && !falls {
        Direction::Increasing
    } else if falls && !rises {
        Direction::Decreasing
    } else {
        Direction::NonMonotone
    }
}

enum Target {
    Contract(fn(&mut Contract, f64)),
    Param(usize),
}

fn resolve_target(spec: &SweepSpec) -> Result<Target> {
    let setter: Option<fn(&mut Contract, f64)> = match spec.target.as_str() {
        "S" | "spot" => Some(|c, v| c.spot = v),
        "K" | "strike" => Some(|c, v| c.strike = v),
        "T" | "maturity" => Some(|c, v| c.maturity = v),
        "r" | "rate" => Some(|c, v| c.rate = v),
        "q" | "dividend_yield" => Some(|c, v| c.dividend_yield = v),
        _ => None,
    };
    if let Some(f) = setter {
        return Ok(Target::Contract(f));
    }
    spec.binding
        .param_names()
        .iter()
        .position(|n| *n == spec.target)
        .map(Target::Param)
        .ok_or_else(|| {
            Error::param(
                "target",
                format!("`{}` is neither S, K, T, r, q nor a {} parameter", spec.target, spec.binding.kind),
            )
        })
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    if spec.grid.len() < MIN_POINTS {
        return Err(Error::param("grid", format!("needs at least {MIN_POINTS} points, got {}", spec.grid.len())));
    }
    if spec.grid.iter().any(|v| !v.is_finite()) || spec.grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("grid", "must be finite and strictly increasing"));
    }
    let target = resolve_target(spec)?;
    let base_vec = match target {
        Target::Param(_) => Some(spec.binding.params_to_vec(&spec.params)?),
        Target::Contract(_) => None,
    };
    let points: Vec<std::result::Result<(f64, f64, Vec<Diagnostic>), (f64, String)>> = spec
        .grid
        .par_iter()
        .map(|&v| {
            let priced = match &target {
                Target::Contract(set) => {
                    let mut c = spec.contract;
                    set(&mut c, v);
                    spec.binding.price(&spec.params, &c)
                }
                Target::Param(i) => {
                    let mut x = base_vec.clone().expect("parameter vector");
                    x[*i] = v;
                    spec.binding.params_from_vec(&x).and_then(|p| {
                        let mut priced = spec.binding.price(&p.value, &spec.contract)?;
                        priced.flags.extend(p.flags);
                        Ok(priced)
                    })
                }
            };
            priced.map(|p| (v, p.value, p.flags)).map_err(|e| (v, e.to_string()))
        })
        .collect();
    let mut curve = Vec::new();
    let mut gaps = Vec::new();
    let mut flags = Vec::new();
    for p in points {
        match p {
            Ok((v, price, f)) => {
                curve.push((v, price));
                flags.extend(f);
            }
            Err(gap) => gaps.push(gap),
        }
    }
    if curve.len() < MIN_POINTS {
        return Err(Error::TooFewSweepPoints { valid: curve.len() });
    }
    Ok(SweepReport {
        target: spec.target.clone(),
        direction: classify(&curve),
        curve,
        gaps,
        flags,
    })
}

/// Writes `param_value,price` rows, gap comments and a trailing `# direction=` line.
pub fn write_csv<W: Write>(report: &SweepReport, comments: &[String], mut out: W) -> Result<()> {
    let io = |e| Error::Io {
        path: "<sweep output>".into(),
        source: e,
    };
    for c in comments {
        writeln!(out, "# {c}").map_err(io)?;
    }
    writeln!(out, "param_value,price").map_err(io)?;
    for (v, p) in &report.curve {
        writeln!(out, "{v},{p}").map_err(io)?;
    }
    for (v, reason) in &report.gaps {
        writeln!(out, "# gap {v}: {reason}").map_err(io)?;
    }
    writeln!(out, "# direction={}", report.direction).map_err(io)?;
    Ok(())
}

/// What a reference sweep is expected to show.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Exactly(Direction),
    IncreasingOrNonMonotone,
    /// No direction is asserted.
    Any,
}

impl Expectation {
    pub fn admits(self, d: Direction) -> bool {
        match self {
            Expectation::Exactly(e) => e == d,
            Expectation::IncreasingOrNonMonotone => d != Direction::Decreasing,
            Expectation::Any => true,
        }
    }
}

/// A sweep range around one of the reference base points.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSweep {
    pub kind: ModelKind,
    pub target: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub expected: Expectation,
}

impl ReferenceSweep {
    pub fn spec(&self, points: usize) -> SweepSpec {
        let model = match self.kind {
            ModelKind::Gh => LevyModel::Gh(reference::gh()),
            ModelKind::Nig => LevyModel::Nig(reference::nig()),
            _ => LevyModel::Cgmy(reference::cgmy()),
        };
        SweepSpec {
            binding: PricerBinding::new(self.kind),
            params: ModelParams::Levy(model),
            contract: reference_contract(),
            target: self.target.to_string(),
            grid: uniform_grid(self.lo, self.hi, points),
        }
    }
}

/// Base contract of the reference sweeps: S=10, K=12, T=2, r=0.05, q=0.
pub fn reference_contract() -> Contract {
    Contract {
        spot: 10.0,
        strike: 12.0,
        maturity: 2.0,
        rate: 0.05,
        dividend_yield: 0.0,
        implied_vol: None,
    }
}

/// Sweep ranges and expected directions for the GH, NIG and CGMY reference parameter sets.
pub fn reference_sweeps(kind: ModelKind) -> Vec<ReferenceSweep> {
    use Direction::*;
    use Expectation::*;
    let common = |q_hi: f64| {
        vec![
            ("S", 9.0, 12.0, Exactly(Increasing)),
            ("K", 9.0, 12.0, Exactly(Decreasing)),
            ("T", 1.0, 3.0, Exactly(Increasing)),
            ("r", 0.01, 0.11, Exactly(Increasing)),
            ("q", 0.0, q_hi, Exactly(Decreasing)),
        ]
    };
    let rows: Vec<(&'static str, f64, f64, Expectation)> = match kind {
        ModelKind::Gh => {
            let mut v = common(0.1);
            v.extend([
                ("alpha", 0.8288, 5.8288, Any),
                ("beta", -3.8286, 3.8286, Any),
                ("delta", 0.0375, 2.0375, Exactly(Increasing)),
                ("nu", -2.7555, 1.2445, IncreasingOrNonMonotone),
            ]);
            v
        }
        ModelKind::Nig => {
            let mut v = common(0.2);
            v.extend([
                ("alpha", 4.1882, 8.1882, Exactly(Decreasing)),
                ("beta", -6.0, 6.0, Any),
                ("delta", 0.0375, 2.0375, Exactly(Increasing)),
                ("mu", -1.0, 1.0, Exactly(Increasing)),
            ]);
            v
        }
        ModelKind::Cgmy => {
            let mut v = common(0.2);
            v.extend([
                ("c", 0.0044, 3.0044, Exactly(Increasing)),
                ("g", 0.0065, 3.0065, Exactly(Decreasing)),
                ("m", 0.5515, 10.5515, Any),
                ("y", -1.7055, 1.9945, Any),
            ]);
            v
        }
        _ => Vec::new(),
    };
    rows.into_iter()
        .map(|(target, lo, hi, expected)| ReferenceSweep {
            kind,
            target,
            lo,
            hi,
            expected,
        })
        .collect()
}
