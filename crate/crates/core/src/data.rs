//! Price ingestion and feature construction.
//!
//! Feature layout (64 entries) for a target day `d` whose information cutoff
//! is `c = start(d) - offset`:
//!
//! | range   | content                                                   |
//! |---------|-----------------------------------------------------------|
//! | 0..24   | the 24 hourly prices before `c`                            |
//! | 24..48  | the 24 hourly prices of day `d - 7`                        |
//! | 48..55  | weekday of `d`, one-hot, Monday first                     |
//! | 55..57  | sin and cos of the day-of-year angle of `d`               |
//! | 57..64  | mean price of each of the seven 24h windows before `c`, oldest first |
//!
//! With a zero offset the first block is day `d - 1` and the last block is the
//! daily means of `d - 7 ..= d - 1`. Price entries are standardized with the
//! statistics of the training window; calendar entries are not.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{day_start, PriceSeries};

pub const FEATURE_DIM: usize = 64;
pub const HOURS: usize = 24;
/// Days of lagged prices a feature vector needs before its target day.
pub const LAG_DAYS: i64 = 7;
pub const DEFAULT_WINDOW_DAYS: usize = 180;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub series: PriceSeries,
    pub gaps: Vec<DateTime<Utc>>,
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if s.len() != 20 {
        return None;
    }
    let t = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).ok()?;
    (t.minute() == 0 && t.second() == 0).then(|| t.and_utc())
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Reads a `timestamp,price` CSV into a validated series plus a gap report.
pub fn ingest_csv(path: impl AsRef<Path>, market_id: &str) -> Result<IngestReport> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                path: display.clone(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;

    let parse_err = |line: usize, message: String| Error::Parse {
        path: display.clone(),
        line,
        message,
    };

    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "price" {
        return Err(parse_err(1, format!("expected header `timestamp,price`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, got {}", row.len())));
        }
        let ts = parse_timestamp(&row[0])
            .ok_or_else(|| parse_err(line, format!("bad timestamp `{}`", &row[0])))?;
        let price: f64 = row[1]
            .parse()
            .ok()
            .filter(|p: &f64| p.is_finite() && !row[1].contains(','))
            .ok_or_else(|| parse_err(line, format!("bad price `{}`", &row[1])))?;
        if price < 0.0 {
            return Err(parse_err(line, format!("negative price {price}")));
        }
        records.push((ts, price));
    }

    let series = PriceSeries::new(market_id, records)?;
    let gaps = series.gaps();
    Ok(IngestReport { series, gaps })
}

pub fn write_csv(series: &PriceSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "price"])?;
    for &(t, p) in series.records() {
        w.write_record([format_timestamp(t), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard deviation used to standardize prices of one market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn identity() -> Self {
        Standardization { mean: 0.0, std: 1.0 }
    }

    /// Population statistics of `prices`; a degenerate spread falls back to 1.
    pub fn fit(prices: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = prices.into_iter().collect();
        if v.is_empty() {
            return Self::identity();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if std > 1e-9 * mean.abs().max(1.0) { std } else { 1.0 };
        Standardization { mean, std }
    }

    pub fn standardize(&self, p: f64) -> f64 {
        (p - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub market_id: String,
    pub target_day: NaiveDate,
    pub values: Vec<f64>,
}

/// Information cutoff for a target day: prices at or after it are unknown.
pub fn cutoff(target_day: NaiveDate, offset_hours: i64) -> DateTime<Utc> {
    day_start(target_day) - Duration::hours(offset_hours)
}

/// Unstandardized 64-entry feature vector.
pub fn raw_features(series: &PriceSeries, target_day: NaiveDate, offset_hours: i64) -> Result<[f64; FEATURE_DIM]> {
    try_raw_features(series, target_day, offset_hours).ok_or_else(|| Error::InsufficientHistory {
        market: series.market_id().to_string(),
        target_day,
        earliest: earliest_feasible(series, target_day, offset_hours),
    })
}

fn try_raw_features(series: &PriceSeries, d: NaiveDate, offset_hours: i64) -> Option<[f64; FEATURE_DIM]> {
    let c = cutoff(d, offset_hours);
    let mut out = [0.0; FEATURE_DIM];

    let recent_start = c - Duration::hours(HOURS as i64);
    for h in 0..HOURS {
        out[h] = series.price_at(recent_start + Duration::hours(h as i64))?;
    }
    let week_ago = day_start(d - Duration::days(LAG_DAYS));
    if week_ago + Duration::hours(HOURS as i64) > c {
        return None;
    }
    for h in 0..HOURS {
        out[HOURS + h] = series.price_at(week_ago + Duration::hours(h as i64))?;
    }

    out[48 + d.weekday().num_days_from_monday() as usize] = 1.0;
    let days_in_year = if NaiveDate::from_ymd_opt(d.year(), 12, 31)?.ordinal() == 366 { 366.0 } else { 365.0 };
    let angle = 2.0 * PI * (d.ordinal0() as f64) / days_in_year;
    out[55] = angle.sin();
    out[56] = angle.cos();

    for k in 0..LAG_DAYS {
        // oldest window first
        let start = c - Duration::hours(HOURS as i64 * (LAG_DAYS - k));
        let mut sum = 0.0;
        for h in 0..HOURS {
            sum += series.price_at(start + Duration::hours(h as i64))?;
        }
        out[57 + k as usize] = sum / HOURS as f64;
    }
    Some(out)
}

fn earliest_feasible(series: &PriceSeries, from: NaiveDate, offset_hours: i64) -> Option<NaiveDate> {
    let last = series.last()?.date_naive() + Duration::days(2);
    let mut d = from;
    while d <= last {
        if try_raw_features(series, d, offset_hours).is_some() {
            return Some(d);
        }
        d += Duration::days(1);
    }
    None
}

fn is_price_slot(i: usize) -> bool {
    i < 48 || i >= 57
}

pub fn standardize_features(raw: &[f64; FEATURE_DIM], stats: &Standardization) -> Vec<f64> {
    raw.iter()
        .enumerate()
        .map(|(i, &v)| if is_price_slot(i) { stats.standardize(v) } else { v })
        .collect()
}

/// Standardized feature vector for `target_day`, using only prices before its cutoff.
pub fn build_features(
    series: &PriceSeries,
    target_day: NaiveDate,
    stats: &Standardization,
    offset_hours: i64,
) -> Result<FeatureVector> {
    let raw = raw_features(series, target_day, offset_hours)?;
    Ok(FeatureVector {
        market_id: series.market_id().to_string(),
        target_day,
        values: standardize_features(&raw, stats),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: FeatureVector,
    /// Actual prices of the sample's target day, in currency units.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingWindow {
    pub market_id: String,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub stats: Standardization,
    pub samples: Vec<TrainingSample>,
    /// Days inside the span dropped because a lag or target hour is missing.
    pub skipped: Vec<NaiveDate>,
}

/// Last day whose 24 prices are all known at the cutoff of `forecast_day`.
pub fn last_observed_day(forecast_day: NaiveDate, offset_hours: i64) -> NaiveDate {
    (cutoff(forecast_day, offset_hours) - Duration::hours(HOURS as i64)).date_naive()
}

/// Walk-forward window of `window_days` samples ending at the last fully
/// observed day before `forecast_day`'s cutoff.
pub fn build_training_window(
    series: &PriceSeries,
    forecast_day: NaiveDate,
    window_days: usize,
    offset_hours: i64,
) -> Result<TrainingWindow> {
    if window_days == 0 {
        return Err(Error::arg("training window must span at least one day"));
    }
    let last_day = last_observed_day(forecast_day, offset_hours);
    let first_day = last_day - Duration::days(window_days as i64 - 1);

    let mut raw = Vec::with_capacity(window_days);
    let mut skipped = Vec::new();
    let mut day = first_day;
    while day <= last_day {
        match (try_raw_features(series, day, offset_hours), series.day_prices(day)) {
            (Some(f), Some(t)) => raw.push((day, f, t)),
            _ => skipped.push(day),
        }
        day += Duration::days(1);
    }
    if raw.is_empty() {
        return Err(Error::InsufficientHistory {
            market: series.market_id().to_string(),
            target_day: forecast_day,
            earliest: None,
        });
    }

    let stats = Standardization::fit(raw.iter().flat_map(|(_, _, t)| t.iter().copied()));
    let samples = raw
        .into_iter()
        .map(|(day, f, t)| TrainingSample {
            features: FeatureVector {
                market_id: series.market_id().to_string(),
                target_day: day,
                values: standardize_features(&f, &stats),
            },
            target: t.to_vec(),
        })
        .collect();

    Ok(TrainingWindow {
        market_id: series.market_id().to_string(),
        first_day,
        last_day,
        stats,
        samples,
        skipped,
    })
}

impl TrainingWindow {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
