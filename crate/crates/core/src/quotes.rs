//! Option quote ingestion, exclusion filters and moneyness/maturity buckets.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::blackscholes::{implied_vol, BsInputs};
use crate::error::{Error, Result};

/// Trading days per year.
pub const TRADING_DAYS: f64 = 252.0;

pub const QUOTE_HEADER: [&str; 9] = [
    "trade_date",
    "spot",
    "strike",
    "maturity_days",
    "bid",
    "ask",
    "rate",
    "dividend_yield",
    "implied_vol",
];

pub const SUMMARY_HEADER: [&str; 6] = [
    "moneyness_bucket",
    "maturity_bucket",
    "mean_mid",
    "mean_eff_spread",
    "mean_implied_vol",
    "count",
];

/// One market observation of a European call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub trade_date: NaiveDate,
    pub spot: f64,
    pub strike: f64,
    pub maturity_years: f64,
    pub maturity_days: u32,
    pub bid: f64,
    pub ask: f64,
    pub rate: f64,
    pub dividend_yield: f64,
    pub implied_vol: Option<f64>,
}

impl OptionQuote {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        trade_date: NaiveDate,
        spot: f64,
        strike: f64,
        maturity_days: u32,
        bid: f64,
        ask: f64,
        rate: f64,
        dividend_yield: f64,
        implied_vol: Option<f64>,
    ) -> Self {
        Self {
            trade_date,
            spot,
            strike,
            maturity_years: maturity_days as f64 / TRADING_DAYS,
            maturity_days,
            bid,
            ask,
            rate,
            dividend_yield,
            implied_vol,
        }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }

    pub fn moneyness(&self) -> f64 {
        self.spot / self.strike
    }

    pub fn bs_inputs(&self, vol: f64) -> BsInputs {
        BsInputs::new(self.spot, self.strike, self.maturity_years, self.rate, self.dividend_yield, vol)
    }

    /// Market implied vol if supplied, else backed out of the mid price.
    pub fn implied_vol_or_solve(&self) -> Result<f64> {
        match self.implied_vol {
            Some(v) => Ok(v),
            None => implied_vol(self.mid(), &self.bs_inputs(0.0)),
        }
    }
}

/// Lower bound of the no-arbitrage test: the mid must dominate
/// `max(0, S - K, S e^{-q tau} - K e^{-r tau})`.
pub fn passes_no_arbitrage(q: &OptionQuote) -> bool {
    let tau = q.maturity_years;
    let discounted = q.spot * (-q.dividend_yield * tau).exp() - q.strike * (-q.rate * tau).exp();
    let bound = 0f64.max(q.spot - q.strike).max(discounted);
    q.mid() >= bound
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_days: u32,
    pub min_price: f64,
    pub enforce_no_arbitrage: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_days: 6,
            min_price: 0.375,
            enforce_no_arbitrage: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_days < 1 {
            return Err(Error::param("min_days", "must be at least 1"));
        }
        if !(self.min_price >= 0.0) {
            return Err(Error::param("min_price", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoArbitrage,
    MinDays,
    MinPrice,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::NoArbitrage => "no_arbitrage",
            RejectReason::MinDays => "min_days",
            RejectReason::MinPrice => "min_price",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<OptionQuote>,
    pub rejected: Vec<(OptionQuote, RejectReason)>,
}

/// Applies the exclusion rules in the order no-arbitrage, min days, min price;
/// each rejection carries the first rule that failed.
pub fn apply_filters(quotes: &[OptionQuote], cfg: &FilterConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for q in quotes {
        let reason = if cfg.enforce_no_arbitrage && !passes_no_arbitrage(q) {
            Some(RejectReason::NoArbitrage)
        } else if q.maturity_days < cfg.min_days {
            Some(RejectReason::MinDays)
        } else if q.mid() < cfg.min_price {
            Some(RejectReason::MinPrice)
        } else {
            None
        };
        match reason {
            Some(r) => out.rejected.push((q.clone(), r)),
            None => out.kept.push(q.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MoneynessBucket {
    Dotm,
    Otm,
    AtmLow,
    AtmHigh,
    Itm,
    Ditm,
}

impl MoneynessBucket {
    pub const ALL: [MoneynessBucket; 6] = [
        MoneynessBucket::Dotm,
        MoneynessBucket::Otm,
        MoneynessBucket::AtmLow,
        MoneynessBucket::AtmHigh,
        MoneynessBucket::Itm,
        MoneynessBucket::Ditm,
    ];

    pub fn classify(moneyness: f64) -> Self {
        match moneyness {
            m if m < 0.94 => MoneynessBucket::Dotm,
            m if m < 0.97 => MoneynessBucket::Otm,
            m if m < 1.00 => MoneynessBucket::AtmLow,
            m if m < 1.03 => MoneynessBucket::AtmHigh,
            m if m < 1.06 => MoneynessBucket::Itm,
            _ => MoneynessBucket::Ditm,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MoneynessBucket::Dotm => "DOTM",
            MoneynessBucket::Otm => "OTM",
            MoneynessBucket::AtmLow => "ATM_LOW",
            MoneynessBucket::AtmHigh => "ATM_HIGH",
            MoneynessBucket::Itm => "ITM",
            MoneynessBucket::Ditm => "DITM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaturityBucket {
    Short,
    Medium,
    Long,
}

impl MaturityBucket {
    pub const ALL: [MaturityBucket; 3] = [MaturityBucket::Short, MaturityBucket::Medium, MaturityBucket::Long];

    pub fn classify(days: u32) -> Self {
        match days {
            d if d < 40 => MaturityBucket::Short,
            d if d < 120 => MaturityBucket::Medium,
            _ => MaturityBucket::Long,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MaturityBucket::Short => "SHORT",
            MaturityBucket::Medium => "MEDIUM",
            MaturityBucket::Long => "LONG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BucketKey {
    pub moneyness_bucket: MoneynessBucket,
    pub maturity_bucket: MaturityBucket,
}

impl BucketKey {
    pub fn of(q: &OptionQuote) -> Self {
        Self {
            moneyness_bucket: MoneynessBucket::classify(q.moneyness()),
            maturity_bucket: MaturityBucket::classify(q.maturity_days),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BucketSummary {
    pub mean_mid: f64,
    pub mean_eff_spread: f64,
    pub mean_implied_vol: f64,
    pub count: usize,
}

/// Per-bucket statistics over all 18 buckets; empty buckets report zeros.
///
/// Quotes without a supplied implied vol have it backed out of the mid; a quote
/// whose mid cannot be inverted is counted but left out of the implied-vol mean.
pub fn summarize(quotes: &[OptionQuote]) -> BTreeMap<BucketKey, BucketSummary> {
    #[derive(Default)]
    struct Acc {
        mid: f64,
        spread: f64,
        iv: f64,
        iv_count: usize,
        count: usize,
    }
    let mut acc: BTreeMap<BucketKey, Acc> = BTreeMap::new();
    for m in MoneynessBucket::ALL {
        for t in MaturityBucket::ALL {
            acc.insert(
                BucketKey {
                    moneyness_bucket: m,
                    maturity_bucket: t,
                },
                Acc::default(),
            );
        }
    }
    for q in quotes {
        let a = acc.get_mut(&BucketKey::of(q)).expect("all buckets pre-populated");
        a.count += 1;
        a.mid += q.mid();
        a.spread += 0.5 * (q.ask - q.bid);
        if let Ok(iv) = q.implied_vol_or_solve() {
            a.iv += iv;
            a.iv_count += 1;
        }
    }
    acc.into_iter()
        .map(|(k, a)| {
            let n = a.count as f64;
            let summary = if a.count == 0 {
                BucketSummary::default()
            } else {
                BucketSummary {
                    mean_mid: a.mid / n,
                    mean_eff_spread: a.spread / n,
                    mean_implied_vol: if a.iv_count > 0 { a.iv / a.iv_count as f64 } else { 0.0 },
                    count: a.count,
                }
            };
            (k, summary)
        })
        .collect()
}

pub fn write_summary<W: Write>(summary: &BTreeMap<BucketKey, BucketSummary>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for (k, s) in summary {
        w.write_record([
            k.moneyness_bucket.label().to_string(),
            k.maturity_bucket.label().to_string(),
            format!("{}", s.mean_mid),
            format!("{}", s.mean_eff_spread),
            format!("{}", s.mean_implied_vol),
            s.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<summary>".into(),
        source: e,
    })?;
    Ok(())
}

/// Reads quotes from a CSV file with the `QUOTE_HEADER` schema.
pub fn load_quotes(path: impl AsRef<Path>) -> Result<Vec<OptionQuote>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    read_quotes(file)
}

/// Reads quotes from any reader. Lines starting with `#` are comments.
pub fn read_quotes<R: Read>(reader: R) -> Result<Vec<OptionQuote>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != QUOTE_HEADER {
        return Err(Error::Schema {
            expected: QUOTE_HEADER.join(","),
            found: found.join(","),
        });
    }
    let mut quotes = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Row numbers are 1-based over data rows.
        let row = i + 1;
        let record = record?;
        quotes.push(parse_row(row, &record)?);
    }
    Ok(quotes)
}

fn parse_row(row: usize, rec: &csv::StringRecord) -> Result<OptionQuote> {
    let field = |idx: usize| rec.get(idx).unwrap_or("");
    let bad = |col: usize, message: String| Error::MalformedRow {
        row,
        column: QUOTE_HEADER[col].to_string(),
        message,
    };
    let num = |col: usize| -> Result<f64> {
        let raw = field(col);
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(col, format!("expected a finite number, found `{raw}`")))
    };

    let trade_date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
        .map_err(|e| bad(0, format!("expected an ISO-8601 date, found `{}` ({e})", field(0))))?;
    let spot = num(1)?;
    if spot <= 0.0 {
        return Err(bad(1, format!("spot must be positive, found {spot}")));
    }
    let strike = num(2)?;
    if strike <= 0.0 {
        return Err(bad(2, format!("strike must be positive, found {strike}")));
    }
    let days_raw = field(3);
    let maturity_days: u32 = days_raw
        .parse()
        .ok()
        .filter(|&d: &u32| d > 0)
        .ok_or_else(|| bad(3, format!("expected a positive integer, found `{days_raw}`")))?;
    let bid = num(4)?;
    let ask = num(5)?;
    if bid < 0.0 {
        return Err(bad(4, format!("bid must be nonnegative, found {bid}")));
    }
    if ask < bid {
        return Err(bad(5, format!("ask {ask} is below bid {bid}")));
    }
    let rate = num(6)?;
    let dividend_yield = num(7)?;
    if dividend_yield < 0.0 {
        return Err(bad(7, format!("dividend yield must be nonnegative, found {dividend_yield}")));
    }
    let implied_vol = if field(8).is_empty() {
        None
    } else {
        let v = num(8)?;
        if v <= 0.0 {
            return Err(bad(8, format!("implied vol must be positive, found {v}")));
        }
        Some(v)
    };
    Ok(OptionQuote::new(
        trade_date,
        spot,
        strike,
        maturity_days,
        bid,
        ask,
        rate,
        dividend_yield,
        implied_vol,
    ))
}

/// Writes quotes in the `QUOTE_HEADER` schema, optionally preceded by comment lines.
pub fn write_quotes<W: Write>(quotes: &[OptionQuote], comments: &[String], mut out: W) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}").map_err(|e| Error::Io {
            path: "<quotes>".into(),
            source: e,
        })?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(QUOTE_HEADER)?;
    for q in quotes {
        w.write_record(quote_record(q))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<quotes>".into(),
        source: e,
    })?;
    Ok(())
}

fn quote_record(q: &OptionQuote) -> [String; 9] {
    [
        q.trade_date.format("%Y-%m-%d").to_string(),
        q.spot.to_string(),
        q.strike.to_string(),
        q.maturity_days.to_string(),
        q.bid.to_string(),
        q.ask.to_string(),
        q.rate.to_string(),
        q.dividend_yield.to_string(),
        q.implied_vol.map(|v| v.to_string()).unwrap_or_default(),
    ]
}

/// Writes rejected quotes with a trailing `reason` column.
pub fn write_rejects<W: Write>(rejects: &[(OptionQuote, RejectReason)], comments: &[String], mut out: W) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}").map_err(|e| Error::Io {
            path: "<rejects>".into(),
            source: e,
        })?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = QUOTE_HEADER.to_vec();
    header.push("reason");
    w.write_record(&header)?;
    for (q, r) in rejects {
        let mut rec = quote_record(q).to_vec();
        rec.push(r.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<rejects>".into(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 9, 4).unwrap()
    }

    fn quote(spot: f64, strike: f64, days: u32, mid: f64) -> OptionQuote {
        OptionQuote::new(date(), spot, strike, days, mid - 0.05, mid + 0.05, 0.0, 0.0, Some(0.15))
    }

    const HEADER: &str = "trade_date,spot,strike,maturity_days,bid,ask,rate,dividend_yield,implied_vol\n";

    #[test]
    fn maturity_uses_trading_day_year() {
        let q = quote(100.0, 100.0, 63, 3.0);
        assert!((q.maturity_years - 0.25).abs() < 1e-12);
    }

    #[test]
    fn reads_well_formed_file() {
        let csv = format!(
            "{HEADER}2012-09-04,1404.94,1400,12,15.1,15.9,0.001,0.02,0.14\n\
             2012-09-04,1404.94,1450,30,3.0,3.4,0.001,0.02,\n\
             2012-09-05,1408.0,1300,100,110.2,112.0,0.001,0.02,0.2\n"
        );
        let quotes = read_quotes(csv.as_bytes()).unwrap();
        assert_eq!(quotes.len(), 3);
        assert_eq!(quotes[1].implied_vol, None);
        assert_eq!(quotes[2].maturity_days, 100);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read_quotes(HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn ask_below_bid_names_the_row() {
        let csv = format!("{HEADER}2012-09-04,100,100,12,1.0,1.2,0,0,\n2012-09-04,100,100,12,2.0,1.5,0,0,\n");
        match read_quotes(csv.as_bytes()) {
            Err(Error::MalformedRow { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "ask");
            }
            other => panic!("expected malformed row, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_negative_fields_rejected() {
        let csv = format!("{HEADER}2012-09-04,abc,100,12,1.0,1.2,0,0,\n");
        assert!(matches!(read_quotes(csv.as_bytes()), Err(Error::MalformedRow { row: 1, .. })));
        let csv = format!("{HEADER}2012-09-04,100,-5,12,1.0,1.2,0,0,\n");
        assert!(matches!(read_quotes(csv.as_bytes()), Err(Error::MalformedRow { .. })));
    }

    #[test]
    fn wrong_header_is_schema_error() {
        let csv = "date,spot\n2012-09-04,1\n";
        assert!(matches!(read_quotes(csv.as_bytes()), Err(Error::Schema { .. })));
    }

    #[test]
    fn no_arbitrage_examples() {
        let base = |mid: f64| OptionQuote::new(date(), 100.0, 90.0, 126, mid, mid, 0.0, 0.0, None);
        assert!(passes_no_arbitrage(&base(15.0)));
        assert!(!passes_no_arbitrage(&base(5.0)));
        let otm = OptionQuote::new(date(), 100.0, 200.0, 126, 0.5, 0.5, 0.03, 0.01, None);
        assert!(passes_no_arbitrage(&otm));
    }

    #[test]
    fn filters_tag_first_failing_rule() {
        let cfg = FilterConfig::default();
        let short = quote(100.0, 100.0, 5, 3.0);
        let cheap = quote(100.0, 130.0, 30, 0.25);
        let good = quote(100.0, 100.0, 30, 3.0);
        // Violates both no-arbitrage and min days; no-arbitrage is reported.
        let both = quote(100.0, 80.0, 3, 5.0);
        let out = apply_filters(&[short, cheap, good.clone(), both], &cfg);
        assert_eq!(out.kept, vec![good]);
        let reasons: Vec<_> = out.rejected.iter().map(|r| r.1).collect();
        assert_eq!(
            reasons,
            vec![RejectReason::MinDays, RejectReason::MinPrice, RejectReason::NoArbitrage]
        );
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(MoneynessBucket::classify(0.9399), MoneynessBucket::Dotm);
        assert_eq!(MoneynessBucket::classify(0.94), MoneynessBucket::Otm);
        assert_eq!(MoneynessBucket::classify(0.97), MoneynessBucket::AtmLow);
        assert_eq!(MoneynessBucket::classify(1.0), MoneynessBucket::AtmHigh);
        assert_eq!(MoneynessBucket::classify(1.03), MoneynessBucket::Itm);
        assert_eq!(MoneynessBucket::classify(1.06), MoneynessBucket::Ditm);
        assert_eq!(MaturityBucket::classify(39), MaturityBucket::Short);
        assert_eq!(MaturityBucket::classify(40), MaturityBucket::Medium);
        assert_eq!(MaturityBucket::classify(119), MaturityBucket::Medium);
        assert_eq!(MaturityBucket::classify(120), MaturityBucket::Long);
    }

    #[test]
    fn singleton_summary() {
        let q = quote(95.0, 100.0, 50, 2.0);
        let s = summarize(std::slice::from_ref(&q));
        assert_eq!(s.len(), 18);
        let key = BucketKey {
            moneyness_bucket: MoneynessBucket::Otm,
            maturity_bucket: MaturityBucket::Medium,
        };
        let b = s[&key];
        assert_eq!(b.count, 1);
        assert!((b.mean_mid - 2.0).abs() < 1e-15);
        assert!((b.mean_eff_spread - 0.05).abs() < 1e-12);
        assert_eq!(b.mean_implied_vol, 0.15);
        let others: usize = s.iter().filter(|(k, _)| **k != key).map(|(_, v)| v.count).sum();
        assert_eq!(others, 0);
    }

    #[test]
    fn mean_of_two() {
        let s = summarize(&[quote(100.0, 100.0, 10, 2.0), quote(100.0, 100.0, 12, 4.0)]);
        let b = s
            .values()
            .find(|b| b.count == 2)
            .expect("both quotes in one bucket");
        assert!((b.mean_mid - 3.0).abs() < 1e-15);
    }

    #[test]
    fn summary_csv_shape() {
        let mut buf = Vec::new();
        write_summary(&summarize(&[]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 19);
        assert!(text.starts_with("moneyness_bucket,maturity_bucket,mean_mid"));
    }

    #[test]
    fn write_then_read_preserves_quotes() {
        let quotes = vec![quote(1400.5, 1390.0, 33, 25.125), quote(1400.5, 1500.0, 200, 1.5)];
        let mut buf = Vec::new();
        write_quotes(&quotes, &["manifest=abc".into()], &mut buf).unwrap();
        assert_eq!(read_quotes(buf.as_slice()).unwrap(), quotes);
    }

    fn arb_quote() -> impl Strategy<Value = OptionQuote> {
        (50.0..150.0f64, 50.0..200.0f64, 1u32..400, 0.0..40.0f64, 0.0..2.0f64, -0.01..0.06f64, 0.0..0.04f64)
            .prop_map(|(s, k, d, bid, spr, r, q)| OptionQuote::new(date(), s, k, d, bid, bid + spr, r, q, Some(0.2)))
    }

    proptest! {
        #[test]
        fn buckets_partition_quotes(quotes in prop::collection::vec(arb_quote(), 0..300)) {
            let total: usize = summarize(&quotes).values().map(|b| b.count).sum();
            prop_assert_eq!(total, quotes.len());
        }

        #[test]
        fn filters_are_monotone(quotes in prop::collection::vec(arb_quote(), 0..100),
                                d1 in 1u32..50, dd in 0u32..50, p1 in 0.0..2.0f64, dp in 0.0..2.0f64) {
            let loose = FilterConfig { min_days: d1, min_price: p1, enforce_no_arbitrage: true };
            let tight = FilterConfig { min_days: d1 + dd, min_price: p1 + dp, enforce_no_arbitrage: true };
            let a = apply_filters(&quotes, &loose);
            let b = apply_filters(&quotes, &tight);
            prop_assert!(b.kept.len() <= a.kept.len());
            prop_assert_eq!(a.kept.len() + a.rejected.len(), quotes.len());
        }

        #[test]
        fn no_arbitrage_matches_direct_bound(q in arb_quote()) {
            let t = q.maturity_days as f64 / 252.0;
            let lower = [0.0, q.spot - q.strike,
                         q.spot * (-q.dividend_yield * t).exp() - q.strike * (-q.rate * t).exp()]
                .into_iter().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(passes_no_arbitrage(&q), (q.bid + q.ask) / 2.0 >= lower);
        }
    }
}
