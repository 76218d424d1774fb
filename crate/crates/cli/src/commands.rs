use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Args, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use levyspx::calibration::{
    calibrate, evaluate_metrics, CalibrationMode, CalibrationResult, ErrorMetrics, OptimizerConfig, ParamSpace, QuoteSet,
};
use levyspx::heston::VolSource;
use levyspx::model::{Contract, ModelKind, ModelParams, PricerBinding};
use levyspx::quotes::{apply_filters, load_quotes, summarize, write_quotes, write_rejects, write_summary, FilterConfig, OptionQuote, TRADING_DAYS};
use levyspx::sweep::{reference_contract, run_sweep, uniform_grid, write_csv, SweepSpec, DEFAULT_POINTS};
use levyspx::synthetic::{synthesize, QuoteGrid};

use crate::config::FileConfig;
use crate::manifest::{csv_manifest, RunManifest};
use crate::{DataError, UsageError};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Shared {
    /// bs, sv, svj, noniid, gh, nig or cgmy.
    #[arg(long)]
    model: Option<String>,
    /// Parameters as inline JSON or a path to a JSON file.
    #[arg(long)]
    params: Option<String>,
    /// Quote CSV.
    #[arg(long)]
    quotes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// pooled or per-day.
    #[arg(long)]
    mode: Option<String>,
    /// JSON config file; flags take precedence over its entries.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop quotes failing the no-arbitrage, minimum-days and minimum-price rules.
    Filter(FilterArgs),
    /// Per moneyness/maturity bucket statistics.
    Summarize(SummarizeArgs),
    /// Generate a synthetic quote grid priced by a model.
    Synth(SynthArgs),
    /// Price one contract, or every quote in a file.
    Price(PriceArgs),
    /// Fit model parameters to quotes.
    Calibrate(CalibrateArgs),
    /// Error metrics of calibrated parameters on a quote file.
    Evaluate(EvaluateArgs),
    /// Price along a grid of one contract term or model parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    shared: Shared,
    /// Where rejected rows go; defaults to `<out stem>.rejects.csv`.
    #[arg(long)]
    rejects: Option<PathBuf>,
    #[arg(long)]
    min_days: Option<u32>,
    #[arg(long)]
    min_price: Option<f64>,
    /// Keep quotes that violate the no-arbitrage lower bound.
    #[arg(long)]
    skip_no_arbitrage: bool,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    shared: Shared,
}

/// Contract terms for `price` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct ContractArgs {
    #[arg(long)]
    spot: Option<f64>,
    #[arg(long)]
    strike: Option<f64>,
    /// Years.
    #[arg(long)]
    maturity: Option<f64>,
    /// Trading days, converted at 252 per year; overrides `--maturity`.
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    dividend_yield: Option<f64>,
    #[arg(long)]
    implied_vol: Option<f64>,
}

/// Spot-variance source and pricer numerics.
#[derive(Debug, Clone, Args)]
pub struct BindingArgs {
    /// Heston spot variance: `constant` (calibrated v0) or `per-quote` (implied vol squared).
    #[arg(long)]
    vol_source: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    binding: BindingArgs,
    #[arg(long)]
    trade_date: Option<NaiveDate>,
    #[arg(long)]
    spot: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    dividend_yield: Option<f64>,
    /// Comma-separated maturities in trading days.
    #[arg(long, value_delimiter = ',')]
    maturities: Option<Vec<u32>>,
    /// Strikes per maturity.
    #[arg(long)]
    strikes: Option<usize>,
    /// `lo,hi` range of K / S.
    #[arg(long, value_delimiter = ',')]
    moneyness: Option<Vec<f64>>,
    /// Relative bid-ask spread.
    #[arg(long)]
    spread: Option<f64>,
    /// Standard deviation of multiplicative noise on each mid.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    binding: BindingArgs,
    #[command(flatten)]
    contract: ContractArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    binding: BindingArgs,
    /// Maximum objective evaluations per calibration.
    #[arg(long)]
    budget: Option<usize>,
    /// Random restarts after the run from the initial point.
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    shared: Shared,
    /// Output of `calibrate`.
    #[arg(long)]
    result: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    binding: BindingArgs,
    #[command(flatten)]
    contract: ContractArgs,
    /// S, K, T, r, q or a model parameter name.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    from: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    to: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Filter(a) => filter(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Price(a) => price(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn data(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

struct Run {
    cfg: FileConfig,
    shared: Shared,
}

impl Run {
    fn new(shared: Shared) -> anyhow::Result<Self> {
        Ok(Self {
            cfg: FileConfig::load(shared.config.as_deref())?,
            shared,
        })
    }

    fn quotes_path(&self) -> anyhow::Result<PathBuf> {
        self.cfg
            .pick(self.shared.quotes.clone(), "quotes")?
            .ok_or_else(|| usage("--quotes is required"))
    }

    fn out_path(&self) -> anyhow::Result<Option<PathBuf>> {
        self.cfg.pick(self.shared.out.clone(), "out")
    }

    fn required_out(&self) -> anyhow::Result<PathBuf> {
        self.out_path()?.ok_or_else(|| usage("--out is required"))
    }

    fn model(&self) -> anyhow::Result<Option<ModelKind>> {
        self.cfg
            .pick(self.shared.model.clone(), "model")?
            .map(|m: String| m.parse::<ModelKind>().map_err(|e| usage(e.to_string())))
            .transpose()
    }

    fn required_model(&self) -> anyhow::Result<ModelKind> {
        self.model()?.ok_or_else(|| usage("--model is required"))
    }

    fn seed(&self) -> anyhow::Result<u64> {
        self.cfg.or(self.shared.seed, "seed", 0)
    }

    fn mode(&self) -> anyhow::Result<CalibrationMode> {
        match self.cfg.pick(self.shared.mode.clone(), "mode")?.as_deref() {
            None | Some("pooled") => Ok(CalibrationMode::Pooled),
            Some("per-day") => Ok(CalibrationMode::PerDay),
            Some(other) => Err(usage(format!("--mode must be pooled or per-day, got `{other}`"))),
        }
    }

    /// Pricer for `kind`, with numerics and vol source from flags and config.
    fn binding(&self, kind: ModelKind, args: &BindingArgs) -> anyhow::Result<PricerBinding> {
        let mut b = PricerBinding::new(kind);
        let source = match self.cfg.pick(args.vol_source.clone(), "vol_source")?.as_deref() {
            None | Some("constant") => VolSource::CalibratedConstant,
            Some("per-quote") => VolSource::ImpliedPerQuote,
            Some(other) => return Err(usage(format!("--vol-source must be constant or per-quote, got `{other}`"))),
        };
        b = b.with_vol_source(source);
        if let Some(h) = self.cfg.get("heston")? {
            b.heston = h;
        }
        if let Some(f) = self.cfg.get("fft")? {
            b.fft = f;
        }
        if let Some(s) = self.cfg.get("series")? {
            b.series = s;
        }
        if let Some(r) = self.cfg.get("relaxed_gh")? {
            b.relaxed_gh = r;
        }
        Ok(b)
    }

    /// Raw `--params` JSON, read from a file unless it is inline.
    fn params_json(&self) -> anyhow::Result<(Value, Option<PathBuf>)> {
        let raw: Option<Value> = match &self.shared.params {
            Some(p) => Some(Value::String(p.clone())),
            None => self.cfg.raw("params").cloned(),
        };
        match raw {
            None => Err(usage("--params is required")),
            Some(Value::String(s)) if s.trim_start().starts_with('{') => {
                Ok((serde_json::from_str(&s).map_err(|e| data(format!("--params: {e}")))?, None))
            }
            Some(Value::String(path)) => {
                let path = PathBuf::from(path);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let v = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
                Ok((v, Some(path)))
            }
            Some(v) => Ok((v, None)),
        }
    }

    fn params(&self, binding: &PricerBinding) -> anyhow::Result<(ModelParams, Vec<String>, Option<PathBuf>)> {
        let (value, path) = self.params_json()?;
        // A `calibrate` output: use its first result.
        let value = match value.get("results").and_then(Value::as_array) {
            Some(results) => results.first().cloned().ok_or_else(|| data("calibration output has no results"))?,
            None => value,
        };
        let parsed = binding.params_from_json(&value)?;
        Ok((parsed.value, parsed.flags.iter().map(ToString::to_string).collect(), path))
    }
}

fn load(path: &Path) -> anyhow::Result<Vec<OptionQuote>> {
    Ok(load_quotes(path)?)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn out_list(out: &Option<PathBuf>) -> Vec<&Path> {
    out.as_deref().into_iter().collect()
}

fn finish(manifest: &RunManifest, out: Option<&Path>) -> anyhow::Result<()> {
    if let Some(p) = out {
        manifest.write_beside(p)?;
    }
    Ok(())
}

fn filter(a: FilterArgs) -> anyhow::Result<()> {
    let ctx = Run::new(a.shared)?;
    let input = ctx.quotes_path()?;
    let out = ctx.required_out()?;
    let rejects = match ctx.cfg.pick(a.rejects, "rejects")? {
        Some(p) => p,
        None => {
            let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.with_file_name(format!("{stem}.rejects.csv"))
        }
    };
    let defaults = FilterConfig::default();
    let enforce: bool = if a.skip_no_arbitrage {
        false
    } else {
        ctx.cfg.or(None, "enforce_no_arbitrage", true)?
    };
    let fc = FilterConfig {
        min_days: ctx.cfg.or(a.min_days, "min_days", defaults.min_days)?,
        min_price: ctx.cfg.or(a.min_price, "min_price", defaults.min_price)?,
        enforce_no_arbitrage: enforce,
    };
    fc.validate()?;
    let quotes = load(&input)?;
    let outcome = apply_filters(&quotes, &fc);
    let manifest = RunManifest::new("filter", &[&input], &json!({ "filter": fc }), &[&out, &rejects])?;
    let comments = [manifest.comment()];
    write_quotes(&outcome.kept, &comments, create(&out)?)?;
    write_rejects(&outcome.rejected, &comments, create(&rejects)?)?;
    finish(&manifest, Some(&out))?;
    eprintln!("kept {} of {} quotes", outcome.kept.len(), quotes.len());
    Ok(())
}

fn summarize_cmd(a: SummarizeArgs) -> anyhow::Result<()> {
    let ctx = Run::new(a.shared)?;
    let input = ctx.quotes_path()?;
    let out = ctx.out_path()?;
    let quotes = load(&input)?;
    let summary = summarize(&quotes);
    let manifest = RunManifest::new("summarize", &[&input], &json!({}), &out_list(&out))?;
    let mut buf = Vec::new();
    writeln!(buf, "# {}", manifest.comment())?;
    write_summary(&summary, &mut buf)?;
    match &out {
        Some(p) => std::fs::write(p, &buf).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    finish(&manifest, out.as_deref())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let ctx = Run::new(a.shared)?;
    let kind = ctx.required_model()?;
    let binding = ctx.binding(kind, &a.binding)?;
    let (params, _, params_path) = ctx.params(&binding)?;
    let out = ctx.required_out()?;
    let seed = ctx.seed()?;
    let base: QuoteGrid = ctx.cfg.get("grid")?.unwrap_or_default();
    let moneyness = match ctx.cfg.pick(a.moneyness, "moneyness")? {
        Some(v) => match v.as_slice() {
            &[lo, hi] => (lo, hi),
            _ => return Err(usage("--moneyness takes two values: lo,hi")),
        },
        None => base.moneyness_range,
    };
    let grid = QuoteGrid {
        trade_date: ctx.cfg.or(a.trade_date, "trade_date", base.trade_date)?,
        spot: ctx.cfg.or(a.spot, "spot", base.spot)?,
        rate: ctx.cfg.or(a.rate, "rate", base.rate)?,
        dividend_yield: ctx.cfg.or(a.dividend_yield, "dividend_yield", base.dividend_yield)?,
        maturity_days: ctx.cfg.or(a.maturities, "maturities", base.maturity_days.clone())?,
        strikes: ctx.cfg.or(a.strikes, "strikes", base.strikes)?,
        moneyness_range: moneyness,
        spread: ctx.cfg.or(a.spread, "spread", base.spread)?,
        noise: ctx.cfg.or(a.noise, "noise", base.noise)?,
    };
    let quotes = synthesize(&binding, &params, &grid, seed)?;
    let inputs: Vec<&Path> = params_path.as_deref().into_iter().collect();
    let settings = json!({ "binding": binding, "params": params, "grid": grid, "seed": seed });
    let manifest = RunManifest::new("synth", &inputs, &settings, &[&out])?;
    let mut comments = vec![manifest.comment(), format!("model={kind}")];
    comments.extend(quotes.flags.iter().map(|f| format!("flag {f}")));
    write_quotes(&quotes.value, &comments, create(&out)?)?;
    finish(&manifest, Some(&out))
}

fn contract_from(ctx: &Run, a: &ContractArgs, base: Contract) -> anyhow::Result<Contract> {
    let maturity = match ctx.cfg.pick(a.days, "days")? {
        Some(d) => d as f64 / TRADING_DAYS,
        None => ctx.cfg.or(a.maturity, "maturity", base.maturity)?,
    };
    let c = Contract {
        spot: ctx.cfg.or(a.spot, "spot", base.spot)?,
        strike: ctx.cfg.or(a.strike, "strike", base.strike)?,
        maturity,
        rate: ctx.cfg.or(a.rate, "rate", base.rate)?,
        dividend_yield: ctx.cfg.or(a.dividend_yield, "dividend_yield", base.dividend_yield)?,
        implied_vol: ctx.cfg.pick(a.implied_vol, "implied_vol")?.or(base.implied_vol),
    };
    if !(c.spot > 0.0 && c.strike > 0.0 && c.maturity > 0.0) {
        return Err(data("spot, strike and maturity must be positive"));
    }
    Ok(c)
}

fn price(a: PriceArgs) -> anyhow::Result<()> {
    let ctx = Run::new(a.shared)?;
    let kind = ctx.required_model()?;
    let binding = ctx.binding(kind, &a.binding)?;
    let (params, param_flags, params_path) = ctx.params(&binding)?;
    let out = ctx.out_path()?;
    let quotes_path = ctx.cfg.pick(ctx.shared.quotes.clone(), "quotes")?;
    let mut inputs: Vec<&Path> = params_path.as_deref().into_iter().collect();
    if let Some(q) = &quotes_path {
        inputs.push(q);
        let quotes = load(q)?;
        let contracts: Vec<Contract> = quotes.iter().map(Contract::from).collect();
        let priced = binding.price_all(&params, &contracts)?;
        let settings = json!({ "binding": binding, "params": params });
        let manifest = RunManifest::new("price", &inputs, &settings, &out_list(&out))?;
        let mut buf = Vec::new();
        writeln!(buf, "# {}", manifest.comment())?;
        for f in param_flags.iter().chain(priced.flags.iter().map(ToString::to_string).collect::<Vec<_>>().iter()) {
            writeln!(buf, "# flag {f}")?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["trade_date", "spot", "strike", "maturity_days", "mid", "model_price"])?;
            for (q, p) in quotes.iter().zip(&priced.value) {
                w.write_record([
                    q.trade_date.to_string(),
                    q.spot.to_string(),
                    q.strike.to_string(),
                    q.maturity_days.to_string(),
                    q.mid().to_string(),
                    p.to_string(),
                ])?;
            }
            w.flush()?;
        }
        match &out {
            Some(p) => std::fs::write(p, &buf).with_context(|| format!("writing {}", p.display()))?,
            None => std::io::stdout().write_all(&buf)?,
        }
        return finish(&manifest, out.as_deref());
    }
    let base = Contract {
        implied_vol: None,
        ..reference_contract()
    };
    let contract = contract_from(&ctx, &a.contract, base)?;
    if ctx.cfg.pick(a.contract.strike, "strike")?.is_none() || ctx.cfg.pick(a.contract.spot, "spot")?.is_none() {
        return Err(usage("price needs --quotes, or --spot and --strike"));
    }
    let priced = binding.price(&params, &contract)?;
    let settings = json!({ "binding": binding, "params": params, "contract": contract });
    let manifest = RunManifest::new("price", &inputs, &settings, &out_list(&out))?;
    let mut flags = param_flags;
    flags.extend(priced.flags.iter().map(ToString::to_string));
    let report = json!({
        "manifest": manifest.hash,
        "model": kind,
        "params": levyspx::model::named_params(&params)?,
        "contract": contract,
        "price": priced.value,
        "flags": flags,
    });
    write_json(&report, out.as_deref())?;
    finish(&manifest, out.as_deref())
}

fn param_space(ctx: &Run, binding: &PricerBinding) -> anyhow::Result<ParamSpace> {
    let mut space = ParamSpace::defaults(binding);
    for (key, target) in [("initial", 0), ("lower", 1), ("upper", 2)] {
        let Some(map) = ctx.cfg.get::<BTreeMap<String, f64>>(key)? else {
            continue;
        };
        for (name, v) in map {
            let i = space
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| data(format!("config `{key}` names unknown parameter `{name}`")))?;
            match target {
                0 => space.initial[i] = v,
                1 => space.lower[i] = v,
                _ => space.upper[i] = v,
            }
        }
    }
    space.validate()?;
    Ok(space)
}

#[derive(Serialize)]
struct CalibrationOutput {
    manifest: String,
    results: Vec<CalibrationResult>,
}

fn calibrate_cmd(a: CalibrateArgs) -> anyhow::Result<()> {
    let ctx = Run::new(a.shared)?;
    let kind = ctx.required_model()?;
    let binding = ctx.binding(kind, &a.binding)?;
    let input = ctx.quotes_path()?;
    let out = ctx.required_out()?;
    let mode = ctx.mode()?;
    let defaults = OptimizerConfig::default();
    let opt = OptimizerConfig {
        budget: ctx.cfg.or(a.budget, "budget", defaults.budget)?,
        restarts: ctx.cfg.or(a.restarts, "restarts", defaults.restarts)?,
        seed: ctx.seed()?,
    };
    let space = param_space(&ctx, &binding)?;
    let quotes = load(&input)?;
    let results = calibrate(&binding, &space, &quotes, mode, &opt)?;
    let settings = json!({ "binding": binding, "mode": mode, "optimizer": opt, "space": {
        "names": space.names, "initial": space.initial, "lower": space.lower, "upper": space.upper,
    }});
    let manifest = RunManifest::new("calibrate", &[&input], &settings, &[&out])?;
    write_json(
        &CalibrationOutput {
            manifest: manifest.hash.clone(),
            results,
        },
        Some(&out),
    )?;
    finish(&manifest, Some(&out))
}

#[derive(Serialize)]
struct GroupMetrics {
    /// Trade date of the parameters used; absent for pooled parameters.
    params_date: Option<String>,
    metrics: ErrorMetrics,
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let ctx = Run::new(a.shared)?;
    let result_path = ctx.cfg.pick(a.result, "result")?.ok_or_else(|| usage("--result is required"))?;
    let text = std::fs::read_to_string(&result_path).with_context(|| format!("reading {}", result_path.display()))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", result_path.display())))?;
    let calibration_manifest = doc.get("manifest").and_then(Value::as_str).map(str::to_string);
    let results: Vec<CalibrationResult> = match doc.get("results") {
        Some(r) => serde_json::from_value(r.clone()),
        None => serde_json::from_value(doc.clone()).map(|r| vec![r]),
    }
    .map_err(|e| data(format!("{}: not a calibration result: {e}", result_path.display())))?;
    let first = results.first().ok_or_else(|| data("calibration output has no results"))?;
    let kind = match ctx.model()? {
        Some(k) if k != first.model => {
            return Err(data(format!("--model {k} does not match the calibrated model {}", first.model)));
        }
        Some(k) => k,
        None => first.model,
    };
    let mut binding = ctx.binding(kind, &BindingArgs { vol_source: None })?;
    if let Some(vs) = first.vol_source {
        binding = binding.with_vol_source(vs);
    }
    let input = ctx.quotes_path()?;
    let out = ctx.out_path()?;
    let quotes = load(&input)?;
    if quotes.is_empty() {
        return Err(data("quote file is empty"));
    }

    // Each quote uses the latest parameters dated on or before its trade date,
    // else the earliest; pooled parameters apply to every quote.
    let dated: Vec<(Option<NaiveDate>, &CalibrationResult)> = results
        .iter()
        .map(|r| {
            let d = r
                .trade_date
                .as_deref()
                .map(|s| s.parse::<NaiveDate>().map_err(|e| data(format!("bad trade_date `{s}`: {e}"))))
                .transpose()?;
            Ok((d, r))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut groups: BTreeMap<usize, Vec<OptionQuote>> = BTreeMap::new();
    for q in quotes {
        let pick = dated
            .iter()
            .enumerate()
            .filter(|(_, (d, _))| d.is_none_or(|d| d <= q.trade_date))
            .max_by_key(|(_, (d, _))| *d)
            .map(|(i, _)| i)
            .unwrap_or(0);
        groups.entry(pick).or_default().push(q);
    }
    let mut per_group = Vec::new();
    let mut flags = Vec::new();
    let (mut sse, mut n, mut ae_sum, mut are_sum) = (0.0, 0usize, 0.0, 0.0);
    for (i, qs) in groups {
        let r = dated[i].1;
        let params = r.model_params(&binding)?;
        let set = QuoteSet::new(&qs);
        let m = evaluate_metrics(&binding, &params.value, &set)?;
        for f in set.flags.iter().chain(&m.flags).map(ToString::to_string) {
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
        sse += m.value.sse;
        n += m.value.n_quotes;
        ae_sum += m.value.ae * m.value.n_quotes as f64;
        are_sum += m.value.are * m.value.n_quotes as f64;
        per_group.push(GroupMetrics {
            params_date: r.trade_date.clone(),
            metrics: m.value,
        });
    }
    let total = ErrorMetrics {
        sse,
        sse_per_quote: sse / n as f64,
        ae: ae_sum / n as f64,
        are: are_sum / n as f64,
        n_quotes: n,
    };
    let settings = json!({ "binding": binding });
    let manifest = RunManifest::new("evaluate", &[&result_path, &input], &settings, &out_list(&out))?;
    let report = json!({
        "manifest": manifest.hash,
        "calibration_manifest": calibration_manifest,
        "quotes_manifest": csv_manifest(&input)?,
        "model": kind,
        "metrics": total,
        "groups": per_group,
        "flags": flags,
    });
    write_json(&report, out.as_deref())?;
    finish(&manifest, out.as_deref())
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let ctx = Run::new(a.shared)?;
    let kind = ctx.required_model()?;
    let binding = ctx.binding(kind, &a.binding)?;
    let (params, _, params_path) = ctx.params(&binding)?;
    let contract = contract_from(&ctx, &a.contract, reference_contract())?;
    let target: String = ctx.cfg.pick(a.target, "target")?.ok_or_else(|| usage("--target is required"))?;
    let lo: f64 = ctx.cfg.pick(a.from, "from")?.ok_or_else(|| usage("--from is required"))?;
    let hi: f64 = ctx.cfg.pick(a.to, "to")?.ok_or_else(|| usage("--to is required"))?;
    let points = ctx.cfg.or(a.points, "points", DEFAULT_POINTS)?;
    let out = ctx.out_path()?;
    let spec = SweepSpec {
        binding,
        params: params.clone(),
        contract,
        target: target.clone(),
        grid: uniform_grid(lo, hi, points),
    };
    let report = run_sweep(&spec)?;
    let inputs: Vec<&Path> = params_path.as_deref().into_iter().collect();
    let settings = json!({
        "binding": binding, "params": params, "contract": contract,
        "target": target, "from": lo, "to": hi, "points": points,
    });
    let manifest = RunManifest::new("sweep", &inputs, &settings, &out_list(&out))?;
    let comments = vec![manifest.comment(), format!("model={kind}"), format!("target={target}")];
    let mut buf = Vec::new();
    write_csv(&report, &comments, &mut buf)?;
    match &out {
        Some(p) => std::fs::write(p, &buf).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    finish(&manifest, out.as_deref())
}
