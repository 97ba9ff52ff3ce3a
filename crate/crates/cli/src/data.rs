//! Price files, log returns and design-matrix CSVs.

use crate::{CliError, Result};
use bsqr::Dataset;
use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

/// Dated log returns `r_t = ln(P_t / P_{t-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub dates: Vec<NaiveDate>,
    pub log_returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| CliError::io(path, e))
}

fn parse_date(s: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| CliError::Usage(format!("row {row}: cannot parse date '{s}' as YYYY-MM-DD ({e})")))
}

/// Reads `date,adj_close` prices and differences their logs.
///
/// Rows are sorted by date; a repeated date keeps its last price.
pub fn load_prices(path: &Path) -> Result<ReturnSeries> {
    parse_prices(open(path)?)
}

pub fn parse_prices<R: Read>(reader: R) -> Result<ReturnSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(di), Some(pi)) = (col("date"), col("adj_close")) else {
        return Err(CliError::Usage(format!(
            "price file needs columns 'date,adj_close', found '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    };
    let mut prices = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let date = parse_date(rec.get(di).unwrap_or(""), row)?;
        let raw = rec.get(pi).unwrap_or("");
        let p: f64 = raw
            .parse()
            .map_err(|_| CliError::Usage(format!("row {row}: price '{raw}' is not a number")))?;
        if !(p.is_finite() && p > 0.0) {
            return Err(CliError::Usage(format!("row {row}: price must be positive, got {p}")));
        }
        prices.insert(date, p);
    }
    if prices.len() < 2 {
        return Err(CliError::Usage(format!("need at least 2 price rows, got {}", prices.len())));
    }
    let pts: Vec<(NaiveDate, f64)> = prices.into_iter().collect();
    Ok(ReturnSeries {
        dates: pts[1..].iter().map(|(d, _)| *d).collect(),
        log_returns: pts.windows(2).map(|w| (w[1].1 / w[0].1).ln()).collect(),
    })
}

/// Asset returns regressed on market returns over their common dates.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub dates: Vec<NaiveDate>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub dropped_asset: usize,
    pub dropped_market: usize,
}

impl AlignedPair {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Rows `range` as a dataset with an intercept column, responses and
    /// regressor multiplied by `scale`.
    pub fn dataset(&self, range: std::ops::Range<usize>, scale: f64) -> bsqr::Result<Dataset> {
        let n = range.len();
        let y = DVector::from_iterator(n, self.y[range.clone()].iter().map(|v| v * scale));
        let cov = DMatrix::from_iterator(n, 1, self.x[range].iter().map(|v| v * scale));
        Dataset::with_intercept(y, &cov)
    }
}

/// Inner join on dates.
pub fn align_series(asset: &ReturnSeries, market: &ReturnSeries) -> Result<AlignedPair> {
    let m: BTreeMap<NaiveDate, f64> = market.dates.iter().copied().zip(market.log_returns.iter().copied()).collect();
    let mut out = AlignedPair { dates: vec![], y: vec![], x: vec![], dropped_asset: 0, dropped_market: 0 };
    for (d, r) in asset.dates.iter().zip(&asset.log_returns) {
        match m.get(d) {
            Some(&x) => {
                out.dates.push(*d);
                out.y.push(*r);
                out.x.push(x);
            }
            None => out.dropped_asset += 1,
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("asset and market series share no dates".into()));
    }
    out.dropped_market = market.len() - out.len();
    if out.dropped_asset + out.dropped_market > 0 {
        log::info!("alignment dropped {} asset and {} market dates", out.dropped_asset, out.dropped_market);
    }
    Ok(out)
}

/// Sample moments as usually tabulated for return series.
#[derive(Debug, Clone, Serialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` divisor).
    pub sd: f64,
    /// `m₃ / m₂^{3/2}` from central moments with divisor `n`.
    pub skewness: f64,
    /// `m₄ / m₂²`, not excess.
    pub kurtosis: f64,
}

pub fn describe(x: &[f64]) -> Descriptive {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    Descriptive {
        n: x.len(),
        mean,
        sd: (m2 * n / (n - 1.0)).sqrt(),
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    }
}

/// Reads a design CSV with header `y,x1,...,xd`; an intercept column is prepended.
pub fn load_design(path: &Path) -> Result<Dataset> {
    parse_design(open(path)?)
}

pub fn parse_design<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 1 || !headers.get(0).is_some_and(|h| h.eq_ignore_ascii_case("y")) {
        return Err(CliError::Usage("design file must start with a 'y' column".into()));
    }
    let d = headers.len() - 1;
    let mut y = Vec::new();
    let mut xs = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        if rec.len() != d + 1 {
            return Err(CliError::Usage(format!("row {row}: expected {} fields, got {}", d + 1, rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Usage(format!("row {row}, column {}: '{field}' is not a number", j + 1)))?;
            if j == 0 {
                y.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(CliError::Usage("design file has no data rows".into()));
    }
    let n = y.len();
    let cov = DMatrix::from_row_slice(n, d, &xs);
    Ok(Dataset::with_intercept(DVector::from_vec(y), &cov)?)
}
