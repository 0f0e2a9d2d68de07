//! Flat monthly forward curves bootstrapped from overlapping swap quotes.
//!
//! Each calendar month carries one value `a_i`; a quoted product constrains
//! the day-weighted average of the months in its delivery window. Products
//! are processed from the finest window to the coarsest: months already fixed
//! by finer quotes keep their value, and the remaining months of a coarser
//! window share one common value chosen so the product reprices exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::marketdata::{days_in_month, month_end, month_index, month_start, QuotedSwap};

/// Relative tolerance used to decide whether duplicate quotes agree.
const DUPLICATE_TOL: f64 = 1e-12;

/// One calendar month of a stepwise curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveBucket {
    pub start: NaiveDate,
    /// Inclusive last day of the month.
    pub end: NaiveDate,
    pub value: f64,
    /// Delivery weight: calendar days in the month.
    pub weight: f64,
}

impl CurveBucket {
    pub fn month(&self) -> i32 {
        month_index(self.start)
    }
}

/// Flat-per-month forward curve for one market and trading date.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepwiseCurve {
    pub market: String,
    pub as_of: NaiveDate,
    /// Buckets in increasing month order; months without a quote are absent.
    pub buckets: Vec<CurveBucket>,
}

impl StepwiseCurve {
    /// Builds a curve from `(month_index, value)` pairs with day-count weights.
    pub fn from_months(
        market: impl Into<String>,
        as_of: NaiveDate,
        months: impl IntoIterator<Item = (i32, f64)>,
    ) -> Result<Self> {
        let mut buckets: Vec<CurveBucket> = months
            .into_iter()
            .map(|(m, value)| CurveBucket {
                start: month_start(m),
                end: month_end(m),
                value,
                weight: days_in_month(m) as f64,
            })
            .collect();
        buckets.sort_by_key(|b| b.start);
        if buckets.windows(2).any(|w| w[0].start == w[1].start) {
            return Err(Error::InvalidInput("duplicate curve month".into()));
        }
        if let Some(b) = buckets.iter().find(|b| !(b.value > 0.0 && b.value.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "curve value {} for {} must be > 0",
                b.value, b.start
            )));
        }
        Ok(Self {
            market: market.into(),
            as_of,
            buckets,
        })
    }

    /// `n_months` buckets at `value`, starting with the month of `as_of`.
    pub fn flat(market: impl Into<String>, as_of: NaiveDate, n_months: usize, value: f64) -> Result<Self> {
        let m0 = month_index(as_of);
        Self::from_months(market, as_of, (0..n_months as i32).map(|h| (m0 + h, value)))
    }

    pub fn bucket(&self, month: i32) -> Option<&CurveBucket> {
        self.buckets
            .binary_search_by_key(&month, CurveBucket::month)
            .ok()
            .map(|i| &self.buckets[i])
    }

    /// Curve value on a calendar day.
    pub fn value_at(&self, date: NaiveDate) -> Option<f64> {
        self.bucket(month_index(date)).map(|b| b.value)
    }

    /// Day-weighted average over the inclusive month range, `None` if any
    /// month is missing.
    pub fn average_over_months(&self, lo: i32, hi: i32) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for m in lo..=hi {
            let b = self.bucket(m)?;
            num += b.weight * b.value;
            den += b.weight;
        }
        (den > 0.0).then(|| num / den)
    }

    fn average_over_window(&self, q: &QuotedSwap) -> Option<f64> {
        let (lo, hi) = q.months();
        self.average_over_months(lo, hi)
    }
}

/// Months of one coarse product that were given a common value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillGroup {
    pub product: String,
    pub months: Vec<NaiveDate>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductResidual {
    pub product: String,
    /// `|average - price| / price`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub curve: StepwiseCurve,
    /// Coarse products whose window is fully covered by finer quotes.
    pub removed_products: Vec<QuotedSwap>,
    pub residuals: Vec<ProductResidual>,
    pub fill_groups: Vec<FillGroup>,
}

impl BootstrapReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.residual).fold(0.0, f64::max)
    }
}

/// Fits a flat monthly curve to the quotes of one market and trading date.
///
/// The returned curve keeps the months from the trading month up to
/// `horizon_months` ahead; truncation happens after fitting, so a longer
/// horizon never changes the values of months already present.
pub fn bootstrap_monthly_curve(quotes: &[QuotedSwap], horizon_months: usize) -> Result<BootstrapReport> {
    let first = quotes
        .first()
        .ok_or_else(|| Error::InvalidInput("no quotes to bootstrap".into()))?;
    if let Some(q) = quotes
        .iter()
        .find(|q| q.market != first.market || q.trading_date != first.trading_date)
    {
        return Err(Error::InvalidInput(format!(
            "bootstrap quotes must share market and trading date: {} on {} vs {} on {}",
            first.market, first.trading_date, q.market, q.trading_date
        )));
    }

    // distinct windows, finest first
    let mut windows: BTreeMap<(i32, i32, i32), Vec<&QuotedSwap>> = BTreeMap::new();
    for q in quotes {
        let (lo, hi) = q.months();
        windows.entry((hi - lo, lo, hi)).or_default().push(q);
    }

    let keys: Vec<(i32, i32)> = windows.keys().map(|&(_, lo, hi)| (lo, hi)).collect();
    for (i, &(a_lo, a_hi)) in keys.iter().enumerate() {
        for &(b_lo, b_hi) in &keys[i + 1..] {
            let disjoint = a_hi < b_lo || b_hi < a_lo;
            let nested = (a_lo >= b_lo && a_hi <= b_hi) || (b_lo >= a_lo && b_hi <= a_hi);
            if !disjoint && !nested {
                let products = quotes
                    .iter()
                    .filter(|q| {
                        let w = q.months();
                        w == (a_lo, a_hi) || w == (b_lo, b_hi)
                    })
                    .map(QuotedSwap::label)
                    .collect();
                return Err(Error::Infeasible {
                    message: "partially overlapping delivery windows".into(),
                    products,
                });
            }
        }
    }

    let mut values: BTreeMap<i32, f64> = BTreeMap::new();
    let mut removed_products = Vec::new();
    let mut fill_groups = Vec::new();
    let mut retained: Vec<&QuotedSwap> = Vec::new();

    for (&(_, lo, hi), group) in &windows {
        let price = group[0].price;
        if group
            .iter()
            .any(|q| (q.price - price).abs() > DUPLICATE_TOL * price)
        {
            return Err(Error::Infeasible {
                message: "conflicting quotes for the same delivery window".into(),
                products: group
                    .iter()
                    .map(|q| format!("{} @ {}", q.label(), q.price))
                    .collect(),
            });
        }

        let mut pinned_sum = 0.0;
        let mut total_w = 0.0;
        let mut free = Vec::new();
        for m in lo..=hi {
            let w = days_in_month(m) as f64;
            total_w += w;
            match values.get(&m) {
                Some(a) => pinned_sum += w * a,
                None => free.push(m),
            }
        }
        if free.is_empty() {
            removed_products.extend(group.iter().map(|q| (*q).clone()));
            continue;
        }
        let free_w: f64 = free.iter().map(|&m| days_in_month(m) as f64).sum();
        let x = if free.len() as i32 == hi - lo + 1 {
            price
        } else {
            (price * total_w - pinned_sum) / free_w
        };
        if !(x > 0.0) {
            return Err(Error::Arbitrage {
                bucket: group[0].label(),
                value: x,
            });
        }
        for &m in &free {
            values.insert(m, x);
        }
        if hi > lo {
            fill_groups.push(FillGroup {
                product: group[0].label(),
                months: free.iter().map(|&m| month_start(m)).collect(),
                value: x,
            });
        }
        retained.extend(group.iter().copied());
    }

    let full = StepwiseCurve::from_months(first.market.clone(), first.trading_date, values)?;
    let residuals = retained
        .iter()
        .map(|q| ProductResidual {
            product: q.label(),
            residual: (full.average_over_window(q).expect("window was fitted") - q.price).abs() / q.price,
        })
        .collect();

    let m0 = month_index(first.trading_date);
    let m_end = m0 + horizon_months as i32;
    let curve = StepwiseCurve {
        buckets: full
            .buckets
            .into_iter()
            .filter(|b| (m0..m_end).contains(&b.month()))
            .collect(),
        ..full
    };

    Ok(BootstrapReport {
        curve,
        removed_products,
        residuals,
        fill_groups,
    })
}

/// Fits one curve per (market, trading date). Dates that fail are returned
/// alongside the error instead of aborting the whole batch.
pub fn bootstrap_by_date(
    quotes: &[QuotedSwap],
    horizon_months: usize,
) -> (Vec<BootstrapReport>, Vec<(String, NaiveDate, Error)>) {
    let mut groups: BTreeMap<(String, NaiveDate), Vec<QuotedSwap>> = BTreeMap::new();
    for q in quotes {
        groups
            .entry((q.market.clone(), q.trading_date))
            .or_default()
            .push(q.clone());
    }
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for ((market, date), group) in groups {
        match bootstrap_monthly_curve(&group, horizon_months) {
            Ok(r) => reports.push(r),
            Err(e) => failures.push((market, date, e)),
        }
    }
    (reports, failures)
}

/// Value of the month `h` months after the trading month, `F_{M_h}(t, T)`.
pub fn extract_fixed_delivery(curve: &StepwiseCurve, h: usize) -> Result<f64> {
    curve
        .bucket(month_index(curve.as_of) + h as i32)
        .map(|b| b.value)
        .ok_or(Error::OutOfHorizon { offset: h })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArbitrageCheck {
    /// Largest `|average - price| / price` over checkable quotes.
    pub max_residual: f64,
    /// Quotes whose window is not fully covered by the curve.
    pub uncheckable: Vec<QuotedSwap>,
}

/// Reprices every quote from the curve and reports the worst relative error.
pub fn verify_no_arbitrage(curve: &StepwiseCurve, quotes: &[QuotedSwap]) -> Result<ArbitrageCheck> {
    let mut max_residual: f64 = 0.0;
    let mut uncheckable = Vec::new();
    for q in quotes {
        if q.market != curve.market || q.trading_date != curve.as_of {
            return Err(Error::InvalidInput(format!(
                "quote {} on {} does not belong to curve {} on {}",
                q.label(),
                q.trading_date,
                curve.market,
                curve.as_of
            )));
        }
        match curve.average_over_window(q) {
            Some(avg) => max_residual = max_residual.max((avg - q.price).abs() / q.price),
            None => uncheckable.push(q.clone()),
        }
    }
    Ok(ArbitrageCheck {
        max_residual,
        uncheckable,
    })
}

/// Writes `as_of,market,bucket_start,bucket_end,value,weight`.
pub fn write_curves_csv<W: Write>(curves: &[StepwiseCurve], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["as_of", "market", "bucket_start", "bucket_end", "value", "weight"])?;
    for c in curves {
        for b in &c.buckets {
            w.write_record([
                c.as_of.to_string(),
                c.market.clone(),
                b.start.to_string(),
                b.end.to_string(),
                b.value.to_string(),
                b.weight.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads curves written by [`write_curves_csv`], grouped by (as_of, market).
pub fn read_curves_csv<R: Read>(source: R) -> Result<Vec<StepwiseCurve>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut groups: BTreeMap<(String, NaiveDate), Vec<(i32, f64)>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let parse_err = |message: String| Error::Parse { row, message };
        if record.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", record.len())));
        }
        let as_of = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| parse_err(e.to_string()))?;
        let start = NaiveDate::parse_from_str(&record[2], "%Y-%m-%d")
            .map_err(|e| parse_err(e.to_string()))?;
        let value: f64 = record[4]
            .parse()
            .map_err(|_| parse_err(format!("`{}` is not a number", &record[4])))?;
        groups
            .entry((record[1].to_string(), as_of))
            .or_default()
            .push((month_index(start), value));
    }
    groups
        .into_iter()
        .map(|((market, as_of), months)| StepwiseCurve::from_months(market, as_of, months))
        .collect()
}
