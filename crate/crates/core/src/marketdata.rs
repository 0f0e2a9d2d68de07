//! Futures quotations, rolling relative panels and log-return preparation.
//!
//! Quotes arrive as `trading_date,market,delivery_start,delivery_end,price`
//! rows. For each trading date a flat monthly curve is bootstrapped (see
//! [`crate::curve`]) and re-indexed by relative delivery (M0, M1, .., Q1, ..,
//! Y1, ..). A relative column keeps its label while the physical contract
//! behind it changes on roll dates, so returns straddling a roll are masked.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::curve::StepwiseCurve;
use crate::error::{Error, Result};

const QUOTE_HEADER: [&str; 5] = [
    "trading_date",
    "market",
    "delivery_start",
    "delivery_end",
    "price",
];

/// Months since year 0 (`year * 12 + month0`).
pub fn month_index(date: NaiveDate) -> i32 {
    date.year() * 12 + date.month0() as i32
}

/// First day of the month with the given [`month_index`].
pub fn month_start(index: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(index.div_euclid(12), index.rem_euclid(12) as u32 + 1, 1)
        .expect("month index within chrono range")
}

/// Last day of the month with the given [`month_index`].
pub fn month_end(index: i32) -> NaiveDate {
    month_start(index + 1).pred_opt().expect("date within chrono range")
}

/// Calendar days in the month; base-load delivery weight.
pub fn days_in_month(index: i32) -> u32 {
    (month_start(index + 1) - month_start(index)).num_days() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Month,
    Quarter,
    Year,
}

/// One market quotation `F(t, start, end)` of a base-load swap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotedSwap {
    pub market: String,
    pub trading_date: NaiveDate,
    pub delivery_start: NaiveDate,
    /// Inclusive last delivery day.
    pub delivery_end: NaiveDate,
    pub price: f64,
    pub granularity: Granularity,
}

impl QuotedSwap {
    /// Validates the record and infers its granularity from the delivery window.
    pub fn new(
        market: impl Into<String>,
        trading_date: NaiveDate,
        delivery_start: NaiveDate,
        delivery_end: NaiveDate,
        price: f64,
    ) -> Result<Self> {
        let market = market.into();
        if market.is_empty() {
            return Err(Error::InvalidInput("empty market identifier".into()));
        }
        if delivery_end < delivery_start {
            return Err(Error::InvalidInput(format!(
                "delivery_end {delivery_end} precedes delivery_start {delivery_start}"
            )));
        }
        if trading_date > delivery_end {
            return Err(Error::InvalidInput(format!(
                "trading date {trading_date} is after the end of delivery {delivery_end}"
            )));
        }
        if !price.is_finite() || price <= 0.0 {
            return Err(Error::InvalidInput(format!("price {price} must be > 0")));
        }
        let granularity = infer_granularity(delivery_start, delivery_end)?;
        Ok(Self {
            market,
            trading_date,
            delivery_start,
            delivery_end,
            price,
            granularity,
        })
    }

    /// Inclusive range of month indices covered by the delivery window.
    pub fn months(&self) -> (i32, i32) {
        (
            month_index(self.delivery_start),
            month_index(self.delivery_end),
        )
    }

    /// Human-readable product name, e.g. `DE Feb-20`, `DE Q2-20`, `DE Cal-21`.
    pub fn label(&self) -> String {
        let yy = self.delivery_start.year() % 100;
        let name = match self.granularity {
            Granularity::Month => format!("{}-{yy:02}", self.delivery_start.format("%b")),
            Granularity::Quarter => format!("Q{}-{yy:02}", self.delivery_start.month0() / 3 + 1),
            Granularity::Year => format!("Cal-{yy:02}"),
        };
        format!("{} {name}", self.market)
    }
}

fn infer_granularity(start: NaiveDate, end: NaiveDate) -> Result<Granularity> {
    let (m0, m1) = (month_index(start), month_index(end));
    if start != month_start(m0) || end != month_end(m1) {
        return Err(Error::InvalidInput(format!(
            "delivery window {start}..{end} is not aligned to whole months"
        )));
    }
    match m1 - m0 + 1 {
        1 => Ok(Granularity::Month),
        3 if m0.rem_euclid(3) == 0 => Ok(Granularity::Quarter),
        12 if m0.rem_euclid(12) == 0 => Ok(Granularity::Year),
        n => Err(Error::InvalidInput(format!(
            "delivery window {start}..{end} ({n} months) is not a calendar month, quarter or year"
        ))),
    }
}

/// A data row that was rejected during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based index of the data row (the header is not counted).
    pub row: usize,
    pub reason: String,
}

/// Result of [`parse_quotes`]: valid records plus a row-level error report.
#[derive(Debug, Clone, Default)]
pub struct QuoteBatch {
    pub quotes: Vec<QuotedSwap>,
    pub rejected: Vec<RejectedRow>,
}

/// Reads a quotes CSV. Bad rows are collected in [`QuoteBatch::rejected`];
/// a missing/incorrect header or a file without data rows is an error.
pub fn parse_quotes<R: Read>(source: R) -> Result<QuoteBatch> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != QUOTE_HEADER {
        return Err(Error::InvalidInput(format!(
            "quotes header must be `{}`, found `{}`",
            QUOTE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut batch = QuoteBatch::default();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        rows += 1;
        let parsed = record
            .map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })
            .and_then(|r| parse_quote_row(row, &r));
        match parsed {
            Ok(q) => batch.quotes.push(q),
            Err(e) => batch.rejected.push(RejectedRow {
                row,
                reason: e.to_string(),
            }),
        }
    }
    if rows == 0 {
        return Err(Error::InvalidInput("quotes file has no data rows".into()));
    }
    Ok(batch)
}

fn parse_quote_row(row: usize, record: &csv::StringRecord) -> Result<QuotedSwap> {
    if record.len() != QUOTE_HEADER.len() {
        return Err(Error::Parse {
            row,
            message: format!("expected 5 fields, found {}", record.len()),
        });
    }
    let date = |idx: usize| -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&record[idx], "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            message: format!("{} `{}`: {e}", QUOTE_HEADER[idx], &record[idx]),
        })
    };
    let trading_date = date(0)?;
    let delivery_start = date(2)?;
    let delivery_end = date(3)?;
    let price: f64 = record[4].parse().map_err(|_| Error::Parse {
        row,
        message: format!("price `{}` is not a number", &record[4]),
    })?;
    QuotedSwap::new(&record[1], trading_date, delivery_start, delivery_end, price).map_err(|e| {
        Error::Validation {
            row,
            message: match e {
                Error::InvalidInput(m) => m,
                other => other.to_string(),
            },
        }
    })
}

/// Relative delivery of a rolling product: `h` months, quarters or years
/// after the period containing the trading date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tenor {
    Month(u32),
    Quarter(u32),
    Year(u32),
}

impl Tenor {
    fn period_index(&self, date: NaiveDate) -> i32 {
        match self {
            Tenor::Month(_) => month_index(date),
            Tenor::Quarter(_) => month_index(date).div_euclid(3),
            Tenor::Year(_) => date.year(),
        }
    }

    /// True if the contract behind this column changes between the two dates.
    pub fn rolls_between(&self, earlier: NaiveDate, later: NaiveDate) -> bool {
        self.period_index(earlier) != self.period_index(later)
    }

    /// Inclusive month-index range delivered by this tenor as seen from `date`.
    pub fn delivery_months(&self, date: NaiveDate) -> (i32, i32) {
        match *self {
            Tenor::Month(h) => {
                let m = month_index(date) + h as i32;
                (m, m)
            }
            Tenor::Quarter(h) => {
                let q = month_index(date).div_euclid(3) + h as i32;
                (3 * q, 3 * q + 2)
            }
            Tenor::Year(h) => {
                let y = date.year() + h as i32;
                (12 * y, 12 * y + 11)
            }
        }
    }
}

impl fmt::Display for Tenor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tenor::Month(h) => write!(f, "M{h}"),
            Tenor::Quarter(h) => write!(f, "Q{h}"),
            Tenor::Year(h) => write!(f, "Y{h}"),
        }
    }
}

impl FromStr for Tenor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unknown tenor label `{s}`"));
        let (kind, num) = s.split_at_checked(1).ok_or_else(bad)?;
        let h: u32 = num.parse().map_err(|_| bad())?;
        match kind {
            "M" => Ok(Tenor::Month(h)),
            "Q" => Ok(Tenor::Quarter(h)),
            "Y" => Ok(Tenor::Year(h)),
            _ => Err(bad()),
        }
    }
}

/// Columns of a relative panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelLayout {
    pub months: u32,
    pub quarters: u32,
    pub years: u32,
}

impl Default for PanelLayout {
    /// M0..M23, Q1..Q7, Y1..Y2.
    fn default() -> Self {
        Self {
            months: 24,
            quarters: 7,
            years: 2,
        }
    }
}

impl PanelLayout {
    pub fn tenors(&self) -> Vec<Tenor> {
        (0..self.months)
            .map(Tenor::Month)
            .chain((1..=self.quarters).map(Tenor::Quarter))
            .chain((1..=self.years).map(Tenor::Year))
            .collect()
    }
}

/// Rolling fixed-delivery prices for one market: rows are trading dates,
/// columns relative tenors, `None` marks a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePanel {
    pub market: String,
    pub tenor_labels: Vec<Tenor>,
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<Vec<Option<f64>>>,
}

impl RelativePanel {
    pub fn column(&self, tenor: Tenor) -> Option<Vec<Option<f64>>> {
        let j = self.tenor_labels.iter().position(|&t| t == tenor)?;
        Some(self.prices.iter().map(|row| row[j]).collect())
    }

    pub fn row(&self, date: NaiveDate) -> Option<&[Option<f64>]> {
        let i = self.dates.iter().position(|&d| d == date)?;
        Some(&self.prices[i])
    }
}

/// Re-indexes the bootstrapped monthly curves of one market by relative delivery.
///
/// Trading dates come from `quotes`; a date without a curve yields a gap row,
/// as does any tenor whose months are not all covered by the curve.
pub fn build_relative_panel(
    quotes: &[QuotedSwap],
    monthly_curves: &[StepwiseCurve],
    layout: &PanelLayout,
) -> Result<RelativePanel> {
    let market = quotes
        .first()
        .map(|q| q.market.clone())
        .ok_or_else(|| Error::InvalidInput("no quotes to build a panel from".into()))?;
    if let Some(q) = quotes.iter().find(|q| q.market != market) {
        return Err(Error::InvalidInput(format!(
            "panel quotes mix markets `{market}` and `{}`",
            q.market
        )));
    }
    let dates: Vec<NaiveDate> = quotes
        .iter()
        .map(|q| q.trading_date)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let curves: HashMap<NaiveDate, &StepwiseCurve> = monthly_curves
        .iter()
        .filter(|c| c.market == market)
        .map(|c| (c.as_of, c))
        .collect();

    let tenors = layout.tenors();
    let prices = dates
        .iter()
        .map(|date| match curves.get(date) {
            Some(curve) => tenors
                .iter()
                .map(|t| {
                    let (lo, hi) = t.delivery_months(*date);
                    curve.average_over_months(lo, hi)
                })
                .collect(),
            None => vec![None; tenors.len()],
        })
        .collect();

    Ok(RelativePanel {
        market,
        tenor_labels: tenors,
        dates,
        prices,
    })
}

/// Writes `trading_date,M0,..` with empty cells for gaps.
pub fn write_panel_csv<W: Write>(panel: &RelativePanel, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["trading_date".to_string()];
    header.extend(panel.tenor_labels.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for (date, row) in panel.dates.iter().zip(&panel.prices) {
        let mut rec = vec![date.to_string()];
        rec.extend(row.iter().map(|p| p.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_panel_csv<R: Read>(market: &str, source: R) -> Result<RelativePanel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.get(0) != Some("trading_date") {
        return Err(Error::InvalidInput(
            "panel header must start with trading_date".into(),
        ));
    }
    let tenor_labels = header
        .iter()
        .skip(1)
        .map(Tenor::from_str)
        .collect::<Result<Vec<_>>>()?;
    let mut dates = Vec::new();
    let mut prices = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let values = record
            .iter()
            .skip(1)
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                        row,
                        message: format!("`{cell}` is not a number"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        dates.push(date);
        prices.push(values);
    }
    Ok(RelativePanel {
        market: market.to_string(),
        tenor_labels,
        dates,
        prices,
    })
}

/// Identifies one column of a return matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnKey {
    pub market: String,
    pub tenor: String,
}

impl ColumnKey {
    pub fn new(market: impl Into<String>, tenor: impl Into<String>) -> Self {
        Self {
            market: market.into(),
            tenor: tenor.into(),
        }
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.market, self.tenor)
    }
}

/// `(n_obs - 1) x N` matrix of log-returns with missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReturnMatrix {
    /// Date of the later observation of each return, when known.
    pub dates: Option<Vec<NaiveDate>>,
    pub column_keys: Vec<ColumnKey>,
    pub dt: f64,
    n_rows: usize,
    // row-major; NaN marks a missing entry
    values: Vec<f64>,
}

impl LogReturnMatrix {
    /// Builds a matrix from rows of optional entries.
    pub fn new(
        column_keys: Vec<ColumnKey>,
        dt: f64,
        dates: Option<Vec<NaiveDate>>,
        rows: &[Vec<Option<f64>>],
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt {dt} must be > 0")));
        }
        if let Some(d) = &dates {
            if d.len() != rows.len() {
                return Err(Error::InvalidInput("dates and rows differ in length".into()));
            }
        }
        let n_cols = column_keys.len();
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::InvalidInput(format!(
                    "row has {} entries, expected {n_cols}",
                    row.len()
                )));
            }
            values.extend(row.iter().map(|v| v.unwrap_or(f64::NAN)));
        }
        Ok(Self {
            dates,
            column_keys,
            dt,
            n_rows: rows.len(),
            values,
        })
    }

    /// Builds a gap-free matrix.
    pub fn from_complete_rows(
        column_keys: Vec<ColumnKey>,
        dt: f64,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let rows: Vec<Vec<Option<f64>>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| Some(v)).collect())
            .collect();
        Self::new(column_keys, dt, None, &rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.column_keys.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.n_cols() + col];
        (!v.is_nan()).then_some(v)
    }

    fn set_missing(&mut self, row: usize, col: usize) {
        let n = self.n_cols();
        self.values[row * n + col] = f64::NAN;
    }

    pub fn column(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.n_rows).map(|i| self.get(i, col)).collect()
    }

    /// Present entries of a column, in row order.
    pub fn present(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).filter_map(|i| self.get(i, col)).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn column_index(&self, key: &ColumnKey) -> Option<usize> {
        self.column_keys.iter().position(|k| k == key)
    }

    /// Column indices belonging to `market`, in matrix order.
    pub fn market_columns(&self, market: &str) -> Vec<usize> {
        self.column_keys
            .iter()
            .enumerate()
            .filter(|(_, k)| k.market == market)
            .map(|(j, _)| j)
            .collect()
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select(&self, cols: &[usize]) -> LogReturnMatrix {
        let rows: Vec<Vec<Option<f64>>> = (0..self.n_rows)
            .map(|i| cols.iter().map(|&j| self.get(i, j)).collect())
            .collect();
        LogReturnMatrix {
            dates: self.dates.clone(),
            column_keys: cols.iter().map(|&j| self.column_keys[j].clone()).collect(),
            dt: self.dt,
            n_rows: self.n_rows,
            values: rows
                .iter()
                .flat_map(|r| r.iter().map(|v| v.unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Rows with no missing entry in `cols`.
    pub fn complete_rows(&self, cols: &[usize]) -> Vec<Vec<f64>> {
        (0..self.n_rows)
            .filter_map(|i| cols.iter().map(|&j| self.get(i, j)).collect())
            .collect()
    }

    /// Side-by-side concatenation of dated matrices aligned on dates; a date
    /// absent from one input yields missing entries for its columns.
    pub fn join(parts: &[LogReturnMatrix]) -> Result<LogReturnMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to join".into()))?;
        let mut all_dates = BTreeSet::new();
        for p in parts {
            if (p.dt - first.dt).abs() > 1e-15 {
                return Err(Error::InvalidInput("joined matrices differ in dt".into()));
            }
            let dates = p
                .dates
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("join requires dated matrices".into()))?;
            all_dates.extend(dates.iter().copied());
        }
        let dates: Vec<NaiveDate> = all_dates.into_iter().collect();
        let mut keys = Vec::new();
        let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
        for p in parts {
            let index: HashMap<NaiveDate, usize> = p
                .dates
                .as_ref()
                .expect("checked above")
                .iter()
                .enumerate()
                .map(|(i, &d)| (d, i))
                .collect();
            for j in 0..p.n_cols() {
                keys.push(p.column_keys[j].clone());
                columns.push(
                    dates
                        .iter()
                        .map(|d| index.get(d).and_then(|&i| p.get(i, j)))
                        .collect(),
                );
            }
        }
        let rows: Vec<Vec<Option<f64>>> = (0..dates.len())
            .map(|i| columns.iter().map(|c| c[i]).collect())
            .collect();
        LogReturnMatrix::new(keys, first.dt, Some(dates), &rows)
    }
}

/// Log-returns of every panel column, masking returns that straddle a roll.
///
/// Columns without a single valid return are dropped with a warning.
pub fn log_returns(panel: &RelativePanel, dt: f64) -> Result<LogReturnMatrix> {
    if panel.dates.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: panel.dates.len(),
        });
    }
    let n_ret = panel.dates.len() - 1;
    let mut keys = Vec::new();
    let mut columns = Vec::new();
    for (j, tenor) in panel.tenor_labels.iter().enumerate() {
        let col: Vec<Option<f64>> = (0..n_ret)
            .map(|i| {
                if tenor.rolls_between(panel.dates[i], panel.dates[i + 1]) {
                    return None;
                }
                match (panel.prices[i][j], panel.prices[i + 1][j]) {
                    (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((b / a).ln()),
                    _ => None,
                }
            })
            .collect();
        if col.iter().all(Option::is_none) {
            log::warn!(
                "{} {tenor}: fewer than two consecutive valid prices, column dropped",
                panel.market
            );
            continue;
        }
        keys.push(ColumnKey::new(panel.market.clone(), tenor.to_string()));
        columns.push(col);
    }
    let rows: Vec<Vec<Option<f64>>> = (0..n_ret)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    LogReturnMatrix::new(keys, dt, Some(panel.dates[1..].to_vec()), &rows)
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Iterative k-sigma outlier removal, column by column.
///
/// Each pass recomputes the sample mean and standard deviation of the present
/// entries and marks every entry farther than `k` standard deviations as
/// missing; stops when a pass removes nothing. Returns the filtered matrix and
/// the number of removed entries per column.
pub fn filter_outliers(x: &LogReturnMatrix, k: f64) -> Result<(LogReturnMatrix, Vec<usize>)> {
    if !(k >= 1.0 && k.is_finite()) {
        return Err(Error::InvalidInput(format!("outlier threshold k={k} must be >= 1")));
    }
    let mut out = x.clone();
    let mut removed = vec![0; x.n_cols()];
    for (j, count) in removed.iter_mut().enumerate() {
        loop {
            let present: Vec<(usize, f64)> = (0..out.n_rows())
                .filter_map(|i| out.get(i, j).map(|v| (i, v)))
                .collect();
            if present.len() < 2 {
                break;
            }
            let vals: Vec<f64> = present.iter().map(|&(_, v)| v).collect();
            let (mean, std) = mean_and_std(&vals);
            if std == 0.0 {
                break;
            }
            let flagged: Vec<usize> = present
                .iter()
                .filter(|&&(_, v)| (v - mean).abs() > k * std)
                .map(|&(i, _)| i)
                .collect();
            if flagged.is_empty() {
                break;
            }
            for i in flagged {
                out.set_missing(i, j);
                *count += 1;
            }
        }
    }
    Ok((out, removed))
}

/// Sample autocorrelation for lags `1..=max_lag`:
/// `ACF(k) = sum_{i<n-k} (x_i - m)(x_{i+k} - m) / ((n - k) v)` with `m`, `v`
/// the full-sample mean and (1/n) variance.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag == 0 || n <= max_lag {
        return Err(Error::InsufficientData {
            required: max_lag + 1,
            actual: n,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if var <= f64::MIN_POSITIVE || var <= 1e-28 * mean * mean {
        return Err(Error::ConstantSeries);
    }
    Ok((1..=max_lag)
        .map(|k| {
            let s: f64 = (0..n - k)
                .map(|i| (series[i] - mean) * (series[i + k] - mean))
                .sum();
            s / ((n - k) as f64 * var)
        })
        .collect())
}

/// Sample moments used to report departures from normality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    /// Unbiased (n-1) standard deviation.
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn normality_diagnostics(column: &[f64]) -> Result<Moments> {
    let n = column.len();
    if n < 4 {
        return Err(Error::InsufficientData {
            required: 4,
            actual: n,
        });
    }
    let nf = n as f64;
    let mean = column.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in column {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    if m2 <= 1e-28 * mean * mean || m2 <= f64::MIN_POSITIVE {
        return Err(Error::ConstantSeries);
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    Ok(Moments {
        mean,
        std,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    const TABLE1: &str = "trading_date,market,delivery_start,delivery_end,price
2020-01-02,DE,2020-01-01,2020-01-31,36.05
2020-01-02,DE,2020-02-01,2020-02-29,39.76
2020-01-02,DE,2020-03-01,2020-03-31,37.15
2020-01-02,DE,2020-04-01,2020-06-30,35.50
2020-01-02,DE,2020-07-01,2020-09-30,39.05
2020-01-02,DE,2020-10-01,2020-12-31,45.30
2020-01-02,DE,2021-01-01,2021-12-31,43.85
2020-01-02,DE,2022-01-01,2022-12-31,46.55
";

    #[test]
    fn parses_single_row() {
        let src = "trading_date,market,delivery_start,delivery_end,price\n2020-01-02,DE,2020-02-01,2020-02-29,39.76\n";
        let batch = parse_quotes(src.as_bytes()).unwrap();
        assert!(batch.rejected.is_empty());
        let q = &batch.quotes[0];
        assert_eq!(q.market, "DE");
        assert_eq!(q.granularity, Granularity::Month);
        assert_eq!(q.price, 39.76);
        assert_eq!(q.label(), "DE Feb-20");
    }

    #[test]
    fn parses_table_one() {
        let batch = parse_quotes(TABLE1.as_bytes()).unwrap();
        assert_eq!(batch.quotes.len(), 8);
        let prices: Vec<f64> = batch.quotes.iter().map(|q| q.price).collect();
        assert_eq!(
            prices,
            vec![36.05, 39.76, 37.15, 35.50, 39.05, 45.30, 43.85, 46.55]
        );
        assert_eq!(batch.quotes[3].granularity, Granularity::Quarter);
        assert_eq!(batch.quotes[7].granularity, Granularity::Year);
    }

    #[test]
    fn rejects_bad_rows_with_row_index() {
        let src = "trading_date,market,delivery_start,delivery_end,price
2020-01-02,DE,2020-02-01,2020-01-31,39.76
2020-01-02,DE,2020-02-01,2020-02-29,-1
2020-13-02,DE,2020-02-01,2020-02-29,10
2020-01-02,DE,2020-02-01,2020-02-29,abc
2020-01-02,DE,2020-02-01,2020-03-31,10
2020-01-02,DE,2020-02-01,2020-02-29,39.76
";
        let batch = parse_quotes(src.as_bytes()).unwrap();
        assert_eq!(batch.quotes.len(), 1);
        let rows: Vec<usize> = batch.rejected.iter().map(|r| r.row).collect();
        assert_eq!(rows, vec![1, 2, 3, 4, 5]);
        assert!(batch.rejected[0].reason.contains("precedes"));
        assert!(batch.rejected[1].reason.contains("must be > 0"));
    }

    #[test]
    fn empty_or_headerless_input_is_an_error() {
        assert!(parse_quotes("trading_date,market,delivery_start,delivery_end,price\n".as_bytes()).is_err());
        assert!(parse_quotes("a,b,c\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn tenor_labels_round_trip_and_roll() {
        for label in ["M0", "M23", "Q1", "Q7", "Y2"] {
            assert_eq!(label.parse::<Tenor>().unwrap().to_string(), label);
        }
        assert!("X1".parse::<Tenor>().is_err());
        let m1 = Tenor::Month(1);
        assert!(m1.rolls_between(d("2020-03-31"), d("2020-04-01")));
        assert!(!m1.rolls_between(d("2020-03-30"), d("2020-03-31")));
        assert_eq!(m1.delivery_months(d("2020-03-31")).0, month_index(d("2020-04-01")));
        assert_eq!(m1.delivery_months(d("2020-04-01")).0, month_index(d("2020-05-01")));
        assert!(Tenor::Quarter(1).rolls_between(d("2020-03-31"), d("2020-04-01")));
        assert!(!Tenor::Quarter(1).rolls_between(d("2020-04-01"), d("2020-05-04")));
        assert!(Tenor::Year(1).rolls_between(d("2020-12-31"), d("2021-01-04")));
    }

    fn panel_from(prices: &[f64], dates: &[&str]) -> RelativePanel {
        RelativePanel {
            market: "DE".into(),
            tenor_labels: vec![Tenor::Month(1)],
            dates: dates.iter().map(|s| d(s)).collect(),
            prices: prices.iter().map(|&p| vec![Some(p)]).collect(),
        }
    }

    #[test]
    fn log_return_of_table_two_prices() {
        let p = panel_from(&[36.05, 38.06], &["2020-01-02", "2020-01-03"]);
        let x = log_returns(&p, 1.0 / 252.0).unwrap();
        let r = x.get(0, 0).unwrap();
        assert_eq!(r, (38.06f64 / 36.05).ln());
        assert!((r - 0.05426).abs() < 5e-6);
    }

    #[test]
    fn constant_column_has_zero_returns_and_rolls_are_masked() {
        let p = panel_from(
            &[50.0, 50.0, 50.0, 50.0],
            &["2020-03-27", "2020-03-30", "2020-03-31", "2020-04-01"],
        );
        let x = log_returns(&p, 1.0 / 252.0).unwrap();
        assert_eq!(x.column(0), vec![Some(0.0), Some(0.0), None]);
    }

    #[test]
    fn column_without_valid_returns_is_dropped() {
        let mut p = panel_from(&[50.0, 51.0], &["2020-03-31", "2020-04-01"]);
        p.tenor_labels = vec![Tenor::Month(1)];
        let x = log_returns(&p, 1.0 / 252.0).unwrap();
        assert_eq!(x.n_cols(), 0);
    }

    #[test]
    fn log_returns_need_two_dates() {
        let p = panel_from(&[50.0], &["2020-03-31"]);
        assert!(matches!(
            log_returns(&p, 1.0 / 252.0),
            Err(Error::InsufficientData { .. })
        ));
    }

    fn single_column(values: &[f64]) -> LogReturnMatrix {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        LogReturnMatrix::from_complete_rows(vec![ColumnKey::new("X", "M1")], 1.0, &rows).unwrap()
    }

    #[test]
    fn four_point_column_keeps_its_spike_at_three_sigma() {
        // With n = 4 no point can lie more than 1.5 sample deviations from the
        // mean, so a 3-sigma rule cannot remove the spike.
        let x = single_column(&[0.01, -0.02, 0.015, 5.0]);
        let (f, removed) = filter_outliers(&x, 3.0).unwrap();
        assert_eq!(removed, vec![0]);
        assert_eq!(f, x);
        let (f, removed) = filter_outliers(&x, 1.4).unwrap();
        assert_eq!(removed, vec![1]);
        assert_eq!(f.present(0), vec![0.01, -0.02, 0.015]);
    }

    #[test]
    fn spike_in_longer_column_is_removed() {
        let mut vals: Vec<f64> = (0..20).map(|i| 0.01 * ((i % 5) as f64 - 2.0)).collect();
        vals.push(5.0);
        let x = single_column(&vals);
        let (f, removed) = filter_outliers(&x, 3.0).unwrap();
        assert_eq!(removed, vec![1]);
        assert_eq!(f.get(20, 0), None);
        assert_eq!(f.present(0), vals[..20].to_vec());
    }

    #[test]
    fn filter_leaves_tame_and_constant_columns() {
        let x = single_column(&[0.1, -0.1, 0.05, -0.05, 0.0]);
        assert_eq!(filter_outliers(&x, 3.0).unwrap().0, x);
        let z = single_column(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(filter_outliers(&z, 3.0).unwrap().0, z);
        assert!(filter_outliers(&z, 0.5).is_err());
    }

    /// Direct evaluation of the ACF definition.
    fn acf_oracle(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n;
        let mut s = 0.0;
        for i in 0..x.len() - k {
            s += (x[i] - m) * (x[i + k] - m);
        }
        s / ((x.len() - k) as f64 * v)
    }

    #[test]
    fn acf_of_alternating_series_is_minus_one() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
        let a = acf(&x, 2).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-12);
        assert!((a[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn acf_of_iid_normals_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = acf(&x, 20).unwrap();
        for (k, v) in a.iter().enumerate() {
            assert!(v.abs() < 0.05, "lag {}: {v}", k + 1);
            assert!((v - acf_oracle(&x, k + 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn acf_matches_definition_on_spike_series() {
        let mut x = vec![2.0; 50];
        x[17] = 9.0;
        let a = acf(&x, 5).unwrap();
        for k in 1..=5 {
            assert!((a[k - 1] - acf_oracle(&x, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn acf_rejects_constant_series() {
        assert!(matches!(acf(&[1.0, 1.0, 1.0], 1), Err(Error::ConstantSeries)));
    }

    #[test]
    fn moments() {
        let m = normality_diagnostics(&[-2.0, 2.0, -2.0, 2.0]).unwrap();
        assert_eq!(m.skewness, 0.0);
        assert_eq!(m.mean, 0.0);
        let m = normality_diagnostics(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(m.mean, 0.25);
        assert!(normality_diagnostics(&[0.0, 0.0, 1.0]).is_err());
        assert!(normality_diagnostics(&[1.0; 6]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = normality_diagnostics(&x).unwrap();
        assert!(m.skewness.abs() < 0.03, "{m:?}");
        assert!(m.excess_kurtosis.abs() < 0.06, "{m:?}");
    }

    #[test]
    fn sample_mean_of_three_points() {
        // mean of {0, 0, 1}; the moment helper itself needs four points
        let (mean, _) = mean_and_std(&[0.0, 0.0, 1.0]);
        assert!((mean - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn join_aligns_on_dates() {
        let a = LogReturnMatrix::new(
            vec![ColumnKey::new("A", "M1")],
            0.1,
            Some(vec![d("2020-01-02"), d("2020-01-03")]),
            &[vec![Some(1.0)], vec![Some(2.0)]],
        )
        .unwrap();
        let b = LogReturnMatrix::new(
            vec![ColumnKey::new("B", "M1")],
            0.1,
            Some(vec![d("2020-01-03"), d("2020-01-06")]),
            &[vec![Some(3.0)], vec![Some(4.0)]],
        )
        .unwrap();
        let j = LogReturnMatrix::join(&[a, b]).unwrap();
        assert_eq!(j.n_rows(), 3);
        assert_eq!(j.column(0), vec![Some(1.0), Some(2.0), None]);
        assert_eq!(j.column(1), vec![None, Some(3.0), Some(4.0)]);
        assert_eq!(j.complete_rows(&[0, 1]), vec![vec![2.0, 3.0]]);
    }

    proptest::proptest! {
        #[test]
        fn filter_is_idempotent(vals in proptest::collection::vec(-1.0f64..1.0, 2..60), spike in 1.0f64..50.0, k in 1.0f64..4.0) {
            let mut v = vals.clone();
            v.push(spike);
            let x = single_column(&v);
            let (once, _) = filter_outliers(&x, k).unwrap();
            let (twice, removed) = filter_outliers(&once, k).unwrap();
            proptest::prop_assert_eq!(removed, vec![0]);
            proptest::prop_assert_eq!(once.column(0), twice.column(0));
        }

        #[test]
        fn cumulative_returns_rebuild_prices(rets in proptest::collection::vec(-0.2f64..0.2, 1..40), p0 in 1.0f64..200.0) {
            let mut prices = vec![p0];
            for r in &rets {
                let last = *prices.last().unwrap();
                prices.push(last * r.exp());
            }
            let start = d("2021-01-01");
            let dates: Vec<NaiveDate> = (0..prices.len()).map(|i| start + chrono::Days::new(i as u64 % 28)).collect();
            let panel = RelativePanel {
                market: "X".into(),
                tenor_labels: vec![Tenor::Year(1)],
                dates,
                prices: prices.iter().map(|&p| vec![Some(p)]).collect(),
            };
            let x = log_returns(&panel, 1.0 / 252.0).unwrap();
            let mut rebuilt = p0;
            for (i, p) in prices.iter().enumerate().skip(1) {
                rebuilt *= x.get(i - 1, 0).unwrap().exp();
                proptest::prop_assert!((rebuilt - p).abs() <= 1e-9 * p);
            }
        }
    }
}
