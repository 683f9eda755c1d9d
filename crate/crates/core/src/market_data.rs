//! Price ingestion, return computation and synthetic fixtures.
//!
//! Prices come from CSV files in either wide form (`date,T1,T2,...`) or long
//! form (`date,ticker,adj_close`). Rows with a missing price for any requested
//! ticker are dropped, never filled. Returns are simple periodic returns.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok()
}

/// Aligned adjusted-close prices, one series per ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    /// `prices[i][t]` is the price of ticker `i` on `dates[t]`.
    prices: Vec<Vec<f64>>,
}

impl PriceTable {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if prices.len() != tickers.len() {
            return Err(Error::DimensionMismatch {
                expected: tickers.len(),
                actual: prices.len(),
            });
        }
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Data {
                    row: 0,
                    message: format!("dates not strictly increasing at {}", pair[1]),
                });
            }
        }
        for (ticker, series) in tickers.iter().zip(&prices) {
            if series.len() != dates.len() {
                return Err(Error::DimensionMismatch {
                    expected: dates.len(),
                    actual: series.len(),
                });
            }
            if let Some(t) = series.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::Data {
                    row: t,
                    message: format!("non-positive price {} for {ticker}", series[t]),
                });
            }
        }
        Ok(Self {
            tickers,
            dates,
            prices,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn series(&self, ticker: &str) -> Option<&[f64]> {
        self.ticker_index(ticker).map(|i| self.prices[i].as_slice())
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Column layout of a price CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvLayout {
    #[default]
    Wide,
    Long,
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub layout: CsvLayout,
    pub date_column: String,
    /// Long form only.
    pub ticker_column: String,
    /// Long form only.
    pub price_column: String,
    /// Tickers to keep; `None` keeps every ticker in the file.
    pub tickers: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            layout: CsvLayout::Wide,
            date_column: "date".into(),
            ticker_column: "ticker".into(),
            price_column: "adj_close".into(),
            tickers: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedPrices {
    pub table: PriceTable,
    /// Rows discarded because a requested ticker had no price.
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "n/a" | "nan" | "null" | "none"
    )
}

fn parse_price(cell: &str, row: usize) -> Result<Option<f64>> {
    if is_missing(cell) {
        return Ok(None);
    }
    let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("invalid price `{cell}`"),
    })?;
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Data {
            row,
            message: format!("non-positive price {value}"),
        });
    }
    Ok(Some(value))
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing column `{name}`"),
        })
}

/// Reads a price CSV. Row numbers in errors are file lines, with the header
/// on row 1.
pub fn load_prices<R: Read>(source: R, schema: &CsvSchema) -> Result<LoadedPrices> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    match schema.layout {
        CsvLayout::Wide => load_wide(reader, &headers, schema),
        CsvLayout::Long => load_long(reader, &headers, schema),
    }
}

pub fn load_prices_file(path: &Path, schema: &CsvSchema) -> Result<LoadedPrices> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    load_prices(std::io::BufReader::new(file), schema)
}

fn record_row(record: &csv::StringRecord, fallback: usize) -> usize {
    record
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

fn csv_error(e: csv::Error, fallback: usize) -> Error {
    let row = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback);
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

fn requested_tickers(schema: &CsvSchema, available: &[String]) -> Result<Vec<String>> {
    match &schema.tickers {
        None => Ok(available.to_vec()),
        Some(list) => {
            for t in list {
                if !available.contains(t) {
                    return Err(Error::Config(format!("unknown ticker `{t}` in price data")));
                }
            }
            Ok(list.clone())
        }
    }
}

fn load_wide<R: Read>(
    mut reader: csv::Reader<R>,
    headers: &csv::StringRecord,
    schema: &CsvSchema,
) -> Result<LoadedPrices> {
    let date_idx = header_index(headers, &schema.date_column)?;
    let available: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != date_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let tickers = requested_tickers(schema, &available)?;
    let columns: Vec<usize> = tickers
        .iter()
        .map(|t| header_index(headers, t))
        .collect::<Result<_>>()?;

    let mut dates = Vec::new();
    let mut prices: Vec<Vec<f64>> = vec![Vec::new(); tickers.len()];
    let mut dropped = 0;
    let mut last_date: Option<NaiveDate> = None;
    for (i, record) in reader.records().enumerate() {
        let fallback = i + 2;
        let record = record.map_err(|e| csv_error(e, fallback))?;
        let row = record_row(&record, fallback);
        let raw_date = record.get(date_idx).unwrap_or("");
        let date = parse_date(raw_date).ok_or_else(|| Error::Parse {
            row,
            message: format!("invalid date `{raw_date}` (expected YYYY-MM-DD)"),
        })?;
        if let Some(prev) = last_date {
            if date <= prev {
                return Err(Error::Data {
                    row,
                    message: format!("dates not strictly increasing ({date} after {prev})"),
                });
            }
        }
        last_date = Some(date);

        let mut values = Vec::with_capacity(columns.len());
        for &c in &columns {
            values.push(parse_price(record.get(c).unwrap_or(""), row)?);
        }
        if values.iter().any(Option::is_none) {
            dropped += 1;
            continue;
        }
        dates.push(date);
        for (series, v) in prices.iter_mut().zip(values) {
            series.push(v.expect("checked above"));
        }
    }
    Ok(LoadedPrices {
        table: PriceTable::new(tickers, dates, prices)?,
        dropped_rows: dropped,
    })
}


fn load_long<R: Read>(
    mut reader: csv::Reader<R>,
    headers: &csv::StringRecord,
    schema: &CsvSchema,
) -> Result<LoadedPrices> {
    let date_idx = header_index(headers, &schema.date_column)?;
    let ticker_idx = header_index(headers, &schema.ticker_column)?;
    let price_idx = header_index(headers, &schema.price_column)?;

    struct LongRow {
        row: usize,
        date: NaiveDate,
        ticker: String,
        price: String,
    }

    let mut order: Vec<String> = Vec::new();
    let mut last_per_ticker: HashMap<String, NaiveDate> = HashMap::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let fallback = i + 2;
        let record = record.map_err(|e| csv_error(e, fallback))?;
        let row = record_row(&record, fallback);
        let raw_date = record.get(date_idx).unwrap_or("");
        let date = parse_date(raw_date).ok_or_else(|| Error::Parse {
            row,
            message: format!("invalid date `{raw_date}` (expected YYYY-MM-DD)"),
        })?;
        let ticker = record.get(ticker_idx).unwrap_or("").trim().to_string();
        if ticker.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty ticker".into(),
            });
        }
        if let Some(prev) = last_per_ticker.get(&ticker) {
            if date <= *prev {
                return Err(Error::Data {
                    row,
                    message: format!("dates for {ticker} not strictly increasing ({date} after {prev})"),
                });
            }
        }
        last_per_ticker.insert(ticker.clone(), date);
        if !order.contains(&ticker) {
            order.push(ticker.clone());
        }
        rows.push(LongRow {
            row,
            date,
            ticker,
            price: record.get(price_idx).unwrap_or("").to_string(),
        });
    }

    let tickers = requested_tickers(schema, &order)?;
    let slot: HashMap<&str, usize> = tickers
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut by_date: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for r in &rows {
        let Some(&i) = slot.get(r.ticker.as_str()) else {
            continue;
        };
        let value = parse_price(&r.price, r.row)?;
        by_date.entry(r.date).or_insert_with(|| vec![None; tickers.len()])[i] = value;
    }

    let mut dates = Vec::new();
    let mut prices: Vec<Vec<f64>> = vec![Vec::new(); tickers.len()];
    let mut dropped = 0;
    for (date, values) in by_date {
        if values.iter().any(Option::is_none) {
            dropped += 1;
            continue;
        }
        dates.push(date);
        for (series, v) in prices.iter_mut().zip(values) {
            series.push(v.expect("checked above"));
        }
    }
    Ok(LoadedPrices {
        table: PriceTable::new(tickers, dates, prices)?,
        dropped_rows: dropped,
    })
}

/// Writes a wide-form price CSV with six decimals.
pub fn write_prices_csv<W: Write>(table: &PriceTable, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(table.tickers.iter().cloned());
    out.write_record(&header).map_err(csv_write_error)?;
    for (t, date) in table.dates.iter().enumerate() {
        let mut record = vec![date.format(DATE_FORMAT).to_string()];
        record.extend(table.prices.iter().map(|s| format!("{:.6}", s[t])));
        out.write_record(&record).map_err(csv_write_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_write_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// T×n matrix of simple returns; row `t` covers the period ending on `dates[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsMatrix {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    /// Row-major, `periods × assets`.
    data: Vec<f64>,
}

impl ReturnsMatrix {
    /// Builds a matrix from row-major data.
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, data: Vec<f64>) -> Result<Self> {
        let n = tickers.len();
        if data.len() != n * dates.len() {
            return Err(Error::DimensionMismatch {
                expected: n * dates.len(),
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|r| !(r.is_finite() && *r > -1.0)) {
            return Err(Error::InvalidReturn {
                period: pos / n.max(1),
                value: data[pos],
            });
        }
        Ok(Self {
            tickers,
            dates,
            data,
        })
    }

    /// Builds a matrix from per-period rows, using placeholder tickers and
    /// consecutive business-day dates. Mostly useful for fixtures.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        let tickers = placeholder_tickers(n);
        let dates = business_days(fixture_start(), rows.len());
        Self::new(tickers, dates, rows.concat())
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn periods(&self) -> usize {
        self.dates.len()
    }

    pub fn assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.assets();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.assets().max(1))
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.data[t * self.assets() + i]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows().map(|r| r[i]).collect()
    }

    /// Raw row-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sample mean of each asset.
    pub fn means(&self) -> DVector<f64> {
        let n = self.assets();
        let mut mu = DVector::zeros(n);
        for row in self.rows() {
            for (m, r) in mu.iter_mut().zip(row) {
                *m += r;
            }
        }
        mu / self.periods() as f64
    }

    /// Sample covariance with the `T - 1` denominator.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.assets();
        let t = self.periods();
        let mu = self.means();
        let mut cov = DMatrix::zeros(n, n);
        for row in self.rows() {
            for i in 0..n {
                let di = row[i] - mu[i];
                for j in i..n {
                    cov[(i, j)] += di * (row[j] - mu[j]);
                }
            }
        }
        let denom = (t as f64 - 1.0).max(1.0);
        for i in 0..n {
            for j in i..n {
                let v = cov[(i, j)] / denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        cov
    }

    /// Restricts the matrix to the assets at `indices`, in that order.
    pub fn select_assets(&self, indices: &[usize]) -> ReturnsMatrix {
        let tickers = indices.iter().map(|&i| self.tickers[i].clone()).collect();
        let mut data = Vec::with_capacity(indices.len() * self.periods());
        for row in self.rows() {
            data.extend(indices.iter().map(|&i| row[i]));
        }
        ReturnsMatrix {
            tickers,
            dates: self.dates.clone(),
            data,
        }
    }

    /// Applies `f` to every return. Fails if a result leaves the valid range.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ReturnsMatrix> {
        ReturnsMatrix::new(
            self.tickers.clone(),
            self.dates.clone(),
            self.data.iter().map(|&r| f(r)).collect(),
        )
    }
}

fn placeholder_tickers(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("A{i}")).collect()
}

fn fixture_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date")
}

/// `count` consecutive weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut day = start;
    while out.len() < count {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day);
        }
        day = day.succ_opt().expect("date in range");
    }
    out
}

/// Simple returns over the price dates inside `[start, end]`, for `tickers`
/// in the order given.
pub fn compute_returns<S: AsRef<str>>(
    prices: &PriceTable,
    start: NaiveDate,
    end: NaiveDate,
    tickers: &[S],
) -> Result<ReturnsMatrix> {
    let columns: Vec<&[f64]> = tickers
        .iter()
        .map(|t| {
            prices
                .series(t.as_ref())
                .ok_or_else(|| Error::Config(format!("unknown ticker `{}`", t.as_ref())))
        })
        .collect::<Result<_>>()?;
    let first = prices.dates.partition_point(|d| *d < start);
    let last = prices.dates.partition_point(|d| *d <= end);
    if last < first + 3 {
        return Err(Error::InsufficientData(format!(
            "{} price date(s) in {start}..={end}, need at least 3",
            last.saturating_sub(first)
        )));
    }
    let n = columns.len();
    let periods = last - first - 1;
    let mut data = Vec::with_capacity(periods * n);
    for t in first + 1..last {
        for series in &columns {
            data.push(series[t] / series[t - 1] - 1.0);
        }
    }
    ReturnsMatrix::new(
        tickers.iter().map(|t| t.as_ref().to_string()).collect(),
        prices.dates[first + 1..last].to_vec(),
        data,
    )
}

/// Compounds a return path into prices starting at `initial`. The first price
/// date is the business day before the first return date.
pub fn prices_from_returns(returns: &ReturnsMatrix, initial: f64) -> Result<PriceTable> {
    let first = returns
        .dates
        .first()
        .ok_or_else(|| Error::InsufficientData("empty return path".into()))?;
    let mut prev = first.pred_opt().expect("date in range");
    while matches!(prev.weekday(), Weekday::Sat | Weekday::Sun) {
        prev = prev.pred_opt().expect("date in range");
    }
    let mut dates = vec![prev];
    dates.extend_from_slice(&returns.dates);
    let prices = (0..returns.assets())
        .map(|i| {
            let mut level = initial;
            let mut series = vec![level];
            for row in returns.rows() {
                level *= 1.0 + row[i];
                series.push(level);
            }
            series
        })
        .collect();
    PriceTable::new(returns.tickers.clone(), dates, prices)
}

/// Draws `periods` i.i.d. Gaussian return vectors with the given mean and
/// covariance. Draws at or below -1 are redrawn.
pub fn synth_returns(
    assets: usize,
    periods: usize,
    seed: u64,
    mean: &[f64],
    covariance: &DMatrix<f64>,
) -> Result<ReturnsMatrix> {
    if mean.len() != assets {
        return Err(Error::DimensionMismatch {
            expected: assets,
            actual: mean.len(),
        });
    }
    if covariance.nrows() != assets || covariance.ncols() != assets {
        return Err(Error::DimensionMismatch {
            expected: assets,
            actual: covariance.nrows(),
        });
    }
    let factor = psd_factor(covariance)?;
    let mut rng = seed::rng(seed);
    let mut data = Vec::with_capacity(assets * periods);
    let mut z = vec![0.0; assets];
    for _ in 0..periods {
        let mut tries = 0;
        loop {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let row: Vec<f64> = (0..assets)
                .map(|i| mean[i] + (0..assets).map(|j| factor[(i, j)] * z[j]).sum::<f64>())
                .collect();
            if row.iter().all(|&r| r > -1.0) {
                data.extend(row);
                break;
            }
            tries += 1;
            if tries >= 1000 {
                return Err(Error::Parameter(
                    "return distribution puts almost all mass at or below -100%".into(),
                ));
            }
        }
    }
    ReturnsMatrix::new(
        placeholder_tickers(assets),
        business_days(fixture_start(), periods),
        data,
    )
}

/// `L` with `L Lᵀ = cov` for a symmetric positive semidefinite matrix.
fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Parameter("covariance is not symmetric".into()));
            }
        }
    }
    if cov.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 * scale {
        return Err(Error::Parameter(format!(
            "covariance is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * roots)
}

/// The default synthetic market: twelve ETF-like assets generated from a
/// three-factor model (equity, rates, commodities) plus idiosyncratic noise.
pub mod synthetic {
    use super::*;

    /// (ticker, annual mean, equity, rates, commodity, idiosyncratic vol)
    const ASSETS: [(&str, f64, f64, f64, f64, f64); 12] = [
        ("BND", 0.030, -0.005, 0.045, 0.000, 0.020),
        ("EEM", 0.055, 0.150, 0.000, 0.060, 0.120),
        ("EFA", 0.060, 0.140, 0.000, 0.030, 0.080),
        ("GLD", 0.050, 0.010, 0.040, 0.060, 0.120),
        ("GSG", 0.030, 0.070, 0.000, 0.210, 0.060),
        ("IEF", 0.030, -0.010, 0.065, 0.000, 0.020),
        ("LQD", 0.040, 0.030, 0.070, 0.000, 0.030),
        ("QQQ", 0.140, 0.200, 0.000, 0.000, 0.100),
        ("SPY", 0.100, 0.170, 0.000, 0.000, 0.025),
        ("TLT", 0.035, -0.020, 0.130, 0.000, 0.040),
        ("VNQ", 0.070, 0.150, 0.050, 0.000, 0.140),
        ("VTI", 0.100, 0.175, 0.000, 0.020, 0.030),
    ];

    const TRADING_DAYS: f64 = 252.0;

    pub fn tickers() -> Vec<String> {
        ASSETS.iter().map(|a| a.0.to_string()).collect()
    }

    /// Daily mean vector and covariance of the factor model.
    pub fn daily_moments() -> (Vec<f64>, DMatrix<f64>) {
        let n = ASSETS.len();
        let mean = ASSETS.iter().map(|a| a.1 / TRADING_DAYS).collect();
        let loadings = DMatrix::from_fn(n, 3, |i, k| match k {
            0 => ASSETS[i].2,
            1 => ASSETS[i].3,
            _ => ASSETS[i].4,
        });
        let idio = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            ASSETS.iter().map(|a| a.5 * a.5),
        ));
        let cov = (&loadings * loadings.transpose() + idio) / TRADING_DAYS;
        (mean, cov)
    }

    /// Business-day prices from 2015-01-01 through 2024-12-31, starting at 100.
    pub fn price_table(seed: u64) -> Result<PriceTable> {
        let start = NaiveDate::from_ymd_opt(2015, 1, 2).expect("valid date");
        let end = NaiveDate::from_ymd_opt(2024, 12, 31).expect("valid date");
        let days: Vec<NaiveDate> = business_days(start, 4000)
            .into_iter()
            .take_while(|d| *d <= end)
            .collect();
        let (mean, cov) = daily_moments();
        let draws = synth_returns(ASSETS.len(), days.len() - 1, seed, &mean, &cov)?;
        let returns = ReturnsMatrix::new(tickers(), days[1..].to_vec(), draws.data)?;
        prices_from_returns(&returns, 100.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn wide(csv: &str) -> Result<LoadedPrices> {
        load_prices(csv.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn parses_small_wide_file() {
        let loaded = wide("date,AAA,BBB\n2024-01-02,10,20\n2024-01-03,11,19\n2024-01-04,12,18\n").unwrap();
        assert_eq!(loaded.table.len(), 3);
        assert_eq!(loaded.table.tickers(), ["AAA", "BBB"]);
        assert_eq!(loaded.dropped_rows, 0);
        assert_eq!(loaded.table.series("BBB").unwrap(), [20.0, 19.0, 18.0]);
    }

    #[test]
    fn zero_price_names_its_row() {
        let csv = "date,AAA\n2024-01-01,1\n2024-01-02,1\n2024-01-03,1\n2024-01-04,0\n2024-01-05,1\n";
        match wide(csv) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 5),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn one_missing_cell_drops_one_row() {
        let mut csv = String::from("date,AAA,BBB\n");
        for day in 1..=10 {
            let b = if day == 6 { String::new() } else { format!("{}", 50 + day) };
            csv.push_str(&format!("2024-01-{day:02},{},{b}\n", 100 + day));
        }
        let loaded = wide(&csv).unwrap();
        assert_eq!(loaded.table.len(), 9);
        assert_eq!(loaded.dropped_rows, 1);
        assert!(!loaded.table.dates().contains(&d("2024-01-06")));
    }

    #[test]
    fn missing_cell_in_unrequested_ticker_is_ignored() {
        let csv = "date,AAA,BBB\n2024-01-02,10,\n2024-01-03,11,19\n2024-01-04,12,18\n";
        let schema = CsvSchema {
            tickers: Some(vec!["AAA".into()]),
            ..CsvSchema::default()
        };
        let loaded = load_prices(csv.as_bytes(), &schema).unwrap();
        assert_eq!(loaded.table.len(), 3);
        assert_eq!(loaded.dropped_rows, 0);
    }

    #[test]
    fn unsorted_dates_rejected() {
        let csv = "date,AAA\n2024-01-03,1\n2024-01-02,1\n";
        assert!(matches!(wide(csv), Err(Error::Data { row: 3, .. })));
    }

    #[test]
    fn malformed_rows_report_position() {
        assert!(matches!(
            wide("date,AAA\n2024-01-02,1\n2024-01-03,abc\n"),
            Err(Error::Parse { row: 3, .. })
        ));
        assert!(matches!(
            wide("date,AAA\n2024/01/02,1\n"),
            Err(Error::Parse { row: 2, .. })
        ));
        assert!(matches!(
            wide("date,AAA\n2024-01-02,1,7\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn unknown_requested_ticker_is_named() {
        let schema = CsvSchema {
            tickers: Some(vec!["ZZZ".into()]),
            ..CsvSchema::default()
        };
        let err = load_prices("date,AAA\n2024-01-02,1\n".as_bytes(), &schema).unwrap_err();
        assert!(err.to_string().contains("ZZZ"));
    }

    #[test]
    fn long_form_pivots_and_drops_incomplete_dates() {
        let csv = "date,ticker,adj_close\n\
                   2024-01-02,AAA,10\n2024-01-03,AAA,11\n2024-01-04,AAA,12\n\
                   2024-01-02,BBB,20\n2024-01-04,BBB,18\n";
        let schema = CsvSchema {
            layout: CsvLayout::Long,
            ..CsvSchema::default()
        };
        let loaded = load_prices(csv.as_bytes(), &schema).unwrap();
        assert_eq!(loaded.table.tickers(), ["AAA", "BBB"]);
        assert_eq!(loaded.table.dates(), [d("2024-01-02"), d("2024-01-04")]);
        assert_eq!(loaded.dropped_rows, 1);
        assert_eq!(loaded.table.series("AAA").unwrap(), [10.0, 12.0]);
    }

    fn table(rows: &[(&str, &[f64])], tickers: &[&str]) -> PriceTable {
        let dates = rows.iter().map(|r| d(r.0)).collect();
        let prices = (0..tickers.len())
            .map(|i| rows.iter().map(|r| r.1[i]).collect())
            .collect();
        PriceTable::new(tickers.iter().map(|t| t.to_string()).collect(), dates, prices).unwrap()
    }

    #[test]
    fn returns_from_three_prices() {
        let p = table(
            &[("2024-01-02", &[100.0, 50.0]), ("2024-01-03", &[110.0, 50.0]), ("2024-01-04", &[99.0, 50.0])],
            &["X", "Y"],
        );
        let r = compute_returns(&p, d("2024-01-01"), d("2024-12-31"), &["X", "Y"]).unwrap();
        assert_eq!(r.periods(), 2);
        assert_abs_diff_eq!(r.get(0, 0), 0.10, epsilon = 1e-15);
        assert_abs_diff_eq!(r.get(1, 0), -0.10, epsilon = 1e-15);
        assert_eq!(r.column(1), [0.0, 0.0]);
        assert_eq!(r.dates(), [d("2024-01-03"), d("2024-01-04")]);
    }

    #[test]
    fn window_excludes_rows_outside() {
        // 5-row fixture; the window drops the first row.
        // Prices 100, 200, 220, 198, 198 -> in-window returns 0.1, -0.1, 0.0.
        let p = table(
            &[
                ("2024-01-01", &[100.0]),
                ("2024-01-02", &[200.0]),
                ("2024-01-03", &[220.0]),
                ("2024-01-04", &[198.0]),
                ("2024-01-05", &[198.0]),
            ],
            &["X"],
        );
        let r = compute_returns(&p, d("2024-01-02"), d("2024-01-05"), &["X"]).unwrap();
        let col = r.column(0);
        assert_eq!(col.len(), 3);
        assert_abs_diff_eq!(col[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(col[1], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(col[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn short_window_is_insufficient() {
        let p = table(
            &[("2024-01-02", &[1.0]), ("2024-01-03", &[1.0]), ("2024-01-04", &[1.0])],
            &["X"],
        );
        assert!(matches!(
            compute_returns(&p, d("2024-01-03"), d("2024-01-04"), &["X"]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            compute_returns(&p, d("2025-01-01"), d("2025-12-31"), &["X"]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn requested_ticker_order_is_preserved() {
        let p = table(
            &[("2024-01-02", &[1.0, 2.0]), ("2024-01-03", &[1.5, 2.0]), ("2024-01-04", &[1.5, 3.0])],
            &["X", "Y"],
        );
        let r = compute_returns(&p, d("2024-01-01"), d("2024-02-01"), &["Y", "X"]).unwrap();
        assert_eq!(r.tickers(), ["Y", "X"]);
        assert_abs_diff_eq!(r.get(1, 0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn synth_is_deterministic() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.02]);
        let a = synth_returns(2, 50, 7, &[0.01, 0.0], &cov).unwrap();
        let b = synth_returns(2, 50, 7, &[0.01, 0.0], &cov).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = synth_returns(2, 50, 8, &[0.01, 0.0], &cov).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn zero_covariance_repeats_the_mean() {
        let r = synth_returns(3, 20, 1, &[0.01, -0.02, 0.0], &DMatrix::zeros(3, 3)).unwrap();
        for row in r.rows() {
            assert_eq!(row, [0.01, -0.02, 0.0]);
        }
    }

    #[test]
    fn sample_variance_converges() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.04, 0.0, 0.0, 0.01]);
        let r = synth_returns(2, 10_000, 11, &[0.0, 0.0], &cov).unwrap();
        let s = r.covariance();
        assert!((s[(0, 0)] / 0.04 - 1.0).abs() < 0.05, "{}", s[(0, 0)]);
        assert!((s[(1, 1)] / 0.01 - 1.0).abs() < 0.05, "{}", s[(1, 1)]);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.01, 0.05, 0.05, 0.01]);
        assert!(matches!(
            synth_returns(2, 5, 1, &[0.0, 0.0], &cov),
            Err(Error::Parameter(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.005, 0.01]);
        assert!(synth_returns(2, 5, 1, &[0.0, 0.0], &asym).is_err());
    }

    #[test]
    fn synthetic_market_covers_default_pool() {
        let table = synthetic::price_table(1).unwrap();
        assert_eq!(table.tickers().len(), 12);
        assert_eq!(table.dates().first(), Some(&d("2015-01-02")));
        assert!(table.dates().last().unwrap() <= &d("2024-12-31"));
        assert!(table.len() > 2500);
    }

    #[test]
    fn csv_round_trip_of_written_prices() {
        let table = synthetic::price_table(3).unwrap();
        let mut buf = Vec::new();
        write_prices_csv(&table, &mut buf).unwrap();
        let loaded = load_prices(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(loaded.table.tickers(), table.tickers());
        assert_eq!(loaded.table.dates(), table.dates());
        let a = loaded.table.series("VTI").unwrap();
        let b = table.series("VTI").unwrap();
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6));
    }
}
