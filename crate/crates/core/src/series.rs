//! Return series, ingestion, descriptive statistics and the ADF unit-root screen.

use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Percentage log returns with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    timestamps: Vec<NaiveDateTime>,
    returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(timestamps: Vec<NaiveDateTime>, returns: Vec<f64>) -> Result<Self> {
        if timestamps.len() != returns.len() {
            return Err(Error::InvalidInput(format!("{} timestamps for {} returns", timestamps.len(), returns.len())));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!("timestamps not strictly increasing at position {}", i + 1)));
        }
        if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite return at position {i}")));
        }
        Ok(Self { timestamps, returns })
    }

    /// Builds a series on an hourly grid starting at 2000-01-01 00:00.
    pub fn from_returns(returns: Vec<f64>) -> Result<Self> {
        let timestamps = hourly_grid(returns.len());
        Self::new(timestamps, returns)
    }

    pub fn from_prices(timestamps: Vec<NaiveDateTime>, prices: &[f64]) -> Result<Self> {
        if timestamps.len() != prices.len() {
            return Err(Error::InvalidInput("timestamp and price counts differ".into()));
        }
        let returns = log_returns(prices)?;
        Self::new(timestamps[1..].to_vec(), returns)
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    /// Contiguous sub-series `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> ReturnSeries {
        ReturnSeries { timestamps: self.timestamps[start..end].to_vec(), returns: self.returns[start..end].to_vec() }
    }
}

pub(crate) fn hourly_grid(n: usize) -> Vec<NaiveDateTime> {
    let origin = NaiveDate::from_ymd_opt(2000, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid origin");
    (0..n).map(|i| origin + Duration::hours(i as i64)).collect()
}

/// `100 * ln(p[i+1] / p[i])` for consecutive prices.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData("need at least two prices".into()));
    }
    if let Some(i) = prices.iter().position(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::InvalidInput(format!("price at position {i} is not positive")));
    }
    Ok(prices.windows(2).map(|w| 100.0 * (w[1] / w[0]).ln()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub skewness: f64,
    /// Raw fourth standardised moment (3 for a normal law).
    pub kurtosis: f64,
}

/// Linear-interpolation quantile of sorted data (`(n-1)p` positioning).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn describe(series: &ReturnSeries) -> Result<DescriptiveStats> {
    describe_values(series.returns())
}

pub fn describe_values(x: &[f64]) -> Result<DescriptiveStats> {
    let n = x.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!("describe needs 4 observations, got {n}")));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Err(Error::Degenerate("constant series has undefined skewness and kurtosis".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DescriptiveStats {
        count: n,
        mean,
        std: (m2 * nf / (nf - 1.0)).sqrt(),
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    /// Augmentation lags chosen by AIC.
    pub lags: usize,
}

struct Ols {
    beta: DVector<f64>,
    ssr: f64,
    cov_diag: DVector<f64>,
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<Ols> {
    let (n, k) = x.shape();
    if n <= k {
        return None;
    }
    let xtx = x.transpose() * x;
    let chol = xtx.clone().cholesky()?;
    let beta = chol.solve(&(x.transpose() * y));
    let resid = y - x * &beta;
    let ssr = resid.dot(&resid);
    let s2 = ssr / (n - k) as f64;
    let inv = chol.inverse();
    let cov_diag = DVector::from_iterator(k, (0..k).map(|i| inv[(i, i)] * s2));
    Some(Ols { beta, ssr, cov_diag })
}

/// Regression of `Δy_t` on a constant, `y_{t-1}` and `lags` lagged differences,
/// using observations from `start` onward (indices into the difference series).
fn adf_regression(y: &[f64], lags: usize, start: usize) -> Option<(Ols, usize)> {
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let rows = dy.len() - start;
    let k = 2 + lags;
    let mut x = DMatrix::zeros(rows, k);
    let mut target = DVector::zeros(rows);
    for (r, t) in (start..dy.len()).enumerate() {
        target[r] = dy[t];
        x[(r, 0)] = 1.0;
        x[(r, 1)] = y[t];
        for j in 1..=lags {
            x[(r, 1 + j)] = dy[t - j];
        }
    }
    ols(&x, &target).map(|o| (o, rows))
}

/// MacKinnon response-surface p-value for the constant-only ADF regression.
pub fn mackinnon_p_value(stat: f64) -> f64 {
    const TAU_MAX: f64 = 2.74;
    const TAU_MIN: f64 = -18.83;
    const TAU_STAR: f64 = -1.61;
    const SMALL_P: [f64; 3] = [2.1659, 1.4412, 0.038269];
    const LARGE_P: [f64; 4] = [1.7339, 0.93202, -0.12745, -0.010368];
    if stat > TAU_MAX {
        return 1.0;
    }
    if stat < TAU_MIN {
        return 0.0;
    }
    let coefs: &[f64] = if stat <= TAU_STAR { &SMALL_P } else { &LARGE_P };
    let z = coefs.iter().rev().fold(0.0, |acc, c| acc * stat + c);
    Normal::new(0.0, 1.0).expect("standard normal").cdf(z).clamp(0.0, 1.0)
}

/// Augmented Dickey–Fuller test with a constant; lag order chosen by AIC up to `max_lag`.
pub fn adf_test(series: &ReturnSeries, max_lag: usize) -> Result<AdfResult> {
    adf_test_values(series.returns(), max_lag)
}

pub fn adf_test_values(y: &[f64], max_lag: usize) -> Result<AdfResult> {
    if y.len() < max_lag + 10 {
        return Err(Error::InsufficientData(format!(
            "ADF with {max_lag} lags needs at least {} observations, got {}",
            max_lag + 10,
            y.len()
        )));
    }
    // common sample for information-criterion comparison
    let mut best: Option<(f64, usize)> = None;
    for lags in 0..=max_lag {
        if let Some((fit, rows)) = adf_regression(y, lags, max_lag) {
            let nobs = rows as f64;
            let k = (2 + lags) as f64;
            let aic = nobs * (fit.ssr / nobs).ln() + 2.0 * k;
            if best.is_none_or(|(b, _)| aic < b) {
                best = Some((aic, lags));
            }
        }
    }
    let (_, lags) = best.ok_or_else(|| Error::Degenerate("ADF regression is singular".into()))?;
    let (fit, _) =
        adf_regression(y, lags, lags).ok_or_else(|| Error::Degenerate("ADF regression is singular".into()))?;
    let se = fit.cov_diag[1].sqrt();
    if !(se > 0.0) {
        return Err(Error::Degenerate("zero standard error in ADF regression".into()));
    }
    let statistic = fit.beta[1] / se;
    let p_value = mackinnon_p_value(statistic);
    Ok(AdfResult { statistic, p_value, reject: p_value < 0.05, lags })
}

/// What the second CSV column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueColumn {
    Price,
    Return,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Reject irregular spacing (any step differing from the most common step).
    pub strict: bool,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads a `timestamp,price` or `timestamp,return` table.
pub fn read_series<R: Read>(reader: R, opts: IngestOptions) -> Result<(ReturnSeries, ValueColumn)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names.len() != 2 || names[0] != "timestamp" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header timestamp,price or timestamp,return; got {:?}", names),
        });
    }
    let column = match names[1].as_str() {
        "price" => ValueColumn::Price,
        "return" => ValueColumn::Return,
        other => return Err(Error::Parse { line: 1, message: format!("unknown value column {other:?}") }),
    };
    let mut ts = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let t = parse_timestamp(&rec[0])
            .ok_or_else(|| Error::Parse { line, message: format!("bad timestamp {:?}", &rec[0]) })?;
        let v: f64 = rec[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Parse { line, message: format!("non-numeric value {:?}", &rec[1]) })?;
        ts.push(t);
        values.push(v);
    }
    if opts.strict {
        check_regular_spacing(&ts)?;
    }
    let series = match column {
        ValueColumn::Price => ReturnSeries::from_prices(ts, &values)?,
        ValueColumn::Return => ReturnSeries::new(ts, values)?,
    };
    Ok((series, column))
}

pub fn read_series_file(path: &Path, opts: IngestOptions) -> Result<(ReturnSeries, ValueColumn)> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_series(f, opts)
}

fn check_regular_spacing(ts: &[NaiveDateTime]) -> Result<()> {
    let steps: Vec<i64> = ts.windows(2).map(|w| (w[1] - w[0]).num_seconds()).collect();
    if steps.is_empty() {
        return Ok(());
    }
    let mut counts = std::collections::HashMap::new();
    for s in &steps {
        *counts.entry(*s).or_insert(0usize) += 1;
    }
    let modal = counts.into_iter().max_by_key(|(s, c)| (*c, -*s)).map(|(s, _)| s).unwrap_or(0);
    if let Some(i) = steps.iter().position(|s| *s != modal) {
        return Err(Error::InvalidInput(format!("irregular spacing after row {}", i + 1)));
    }
    Ok(())
}

pub fn write_series<W: std::io::Write>(series: &ReturnSeries, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["timestamp", "return"])?;
    for (t, r) in series.timestamps().iter().zip(series.returns()) {
        wtr.write_record([t.format("%Y-%m-%dT%H:%M:%S").to_string(), format!("{r}")])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_return_examples() {
        assert_eq!(log_returns(&[100.0, 100.0]).unwrap(), vec![0.0]);
        let r = log_returns(&[100.0, 101.0]).unwrap();
        assert!((r[0] - 0.995_033_085_316_808_3).abs() < 1e-12);
        let r = log_returns(&[100.0, 50.0, 100.0]).unwrap();
        assert!((r[0] + 69.314_718_055_994_53).abs() < 1e-10);
        assert!((r[1] - 69.314_718_055_994_53).abs() < 1e-10);
    }

    #[test]
    fn log_return_errors() {
        assert!(matches!(log_returns(&[1.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(log_returns(&[1.0, 0.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(log_returns(&[1.0, -2.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn describe_constant_is_degenerate() {
        assert!(matches!(describe_values(&[1.0; 4]), Err(Error::Degenerate(_))));
        assert!(matches!(describe_values(&[1.0, 2.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn describe_symmetric() {
        let d = describe_values(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!(d.mean, 0.0);
        assert_eq!(d.skewness, 0.0);
        assert!(d.min <= d.q25 && d.q25 <= d.median && d.median <= d.q75 && d.q75 <= d.max);
    }

    #[test]
    fn quantiles_interpolate() {
        let d = describe_values(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((d.q25, d.median, d.q75), (2.0, 3.0, 4.0));
        let d = describe_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((d.q25, d.median, d.q75), (1.75, 2.5, 3.25));
    }

    #[test]
    fn mackinnon_known_critical_values() {
        // 1%, 5%, 10% asymptotic critical values for the constant case
        assert!((mackinnon_p_value(-3.43) - 0.01).abs() < 2e-3);
        assert!((mackinnon_p_value(-2.86) - 0.05).abs() < 2e-3);
        assert!((mackinnon_p_value(-2.57) - 0.10).abs() < 3e-3);
        assert_eq!(mackinnon_p_value(-30.0), 0.0);
        assert_eq!(mackinnon_p_value(3.0), 1.0);
    }

    #[test]
    fn adf_too_short() {
        assert!(matches!(adf_test_values(&[0.0; 12], 4), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn series_invariants_enforced() {
        let g = hourly_grid(3);
        assert!(ReturnSeries::new(g.clone(), vec![0.0, 1.0]).is_err());
        assert!(ReturnSeries::new(vec![g[1], g[0], g[2]], vec![0.0; 3]).is_err());
        assert!(ReturnSeries::new(g, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn csv_prices_and_returns() {
        let data = "timestamp,price\n2018-01-01T00:00:00,100\n2018-01-01T01:00:00,101\n2018-01-01T02:00:00,100\n";
        let (s, col) = read_series(data.as_bytes(), IngestOptions::default()).unwrap();
        assert_eq!(col, ValueColumn::Price);
        assert_eq!(s.len(), 2);
        assert!((s.returns()[0] - 0.995_033_085_316_808_3).abs() < 1e-12);

        let data = "timestamp,return\n2018-01-01,0.5\n2018-01-02,-0.25\n";
        let (s, col) = read_series(data.as_bytes(), IngestOptions::default()).unwrap();
        assert_eq!(col, ValueColumn::Return);
        assert_eq!(s.returns(), &[0.5, -0.25]);
    }

    #[test]
    fn csv_rejects_non_numeric() {
        let data = "timestamp,price\n2018-01-01T00:00:00,100\n2018-01-01T01:00:00,abc\n";
        match read_series(data.as_bytes(), IngestOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strict_ingest_rejects_gaps() {
        let data = "timestamp,return\n2018-01-01T00:00:00,1\n2018-01-01T01:00:00,1\n2018-01-01T02:00:00,1\n2018-01-01T05:00:00,1\n";
        assert!(read_series(data.as_bytes(), IngestOptions { strict: true }).is_err());
        assert!(read_series(data.as_bytes(), IngestOptions { strict: false }).is_ok());
    }
}
