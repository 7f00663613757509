//! Report files and cross-run comparison.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::BacktestReport;
use crate::data::format_timestamp;
use crate::error::{Error, Result};
use crate::strategies::{BiddingPlan, Scheme, Strategy};

pub const REPORT_JSON: &str = "report.json";
pub const BIDS_CSV: &str = "bids.csv";
pub const REVENUE_CSV: &str = "revenue.csv";
pub const CUMULATIVE_CSV: &str = "cumulative_revenue.csv";
pub const SELECTION_CSV: &str = "selection.csv";
pub const THRESHOLDS_CSV: &str = "thresholds.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes plans as `strategy,scheme,epoch,market,capacity,requested_fee,phase,accepted,paid_price,revenue`.
/// Outcome columns are empty for unsettled entries.
pub fn write_plan_csv<W: Write>(out: W, plans: &[BiddingPlan]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "scheme",
        "epoch",
        "market",
        "capacity",
        "requested_fee",
        "phase",
        "accepted",
        "paid_price",
        "revenue",
    ])?;
    for plan in plans {
        for e in &plan.entries {
            w.write_record([
                plan.strategy.number().to_string(),
                plan.strategy.scheme().map(|s| s.number().to_string()).unwrap_or_default(),
                e.epoch.to_string(),
                e.market_id.clone(),
                e.capacity.to_string(),
                e.requested_fee.to_string(),
                e.phase.as_str().to_string(),
                e.outcome.map(|o| o.accepted.to_string()).unwrap_or_default(),
                opt(e.outcome.map(|o| o.paid_price)),
                opt(e.outcome.map(|o| o.revenue)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Settled bids of every strategy, one row per bid.
pub fn write_bid_log<W: Write>(out: W, report: &BacktestReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "date",
        "strategy",
        "epoch",
        "timestamp",
        "market",
        "capacity",
        "requested_fee",
        "phase",
        "accepted",
        "paid_price",
        "revenue",
    ])?;
    for s in &report.strategies {
        for b in &s.bids {
            w.write_record([
                b.date.to_string(),
                b.strategy.clone(),
                b.epoch.to_string(),
                format_timestamp(b.timestamp),
                b.market.clone(),
                b.capacity.to_string(),
                b.requested_fee.to_string(),
                b.phase.clone(),
                b.accepted.to_string(),
                b.paid_price.to_string(),
                b.revenue.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Daily revenue, one column per strategy.
pub fn write_revenue_csv<W: Write>(out: W, report: &BacktestReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend(report.strategies.iter().map(|s| s.label.clone()));
    w.write_record(&header)?;
    for (i, d) in report.days.iter().enumerate() {
        let mut row = vec![d.to_string()];
        row.extend(report.strategies.iter().map(|s| s.daily_revenue[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Cumulative revenue of the four schemes per day.
pub type SchemeSeries = Vec<(NaiveDate, [Option<f64>; 4])>;

pub fn scheme_series(report: &BacktestReport) -> SchemeSeries {
    let cols: Vec<Option<&Vec<f64>>> = Scheme::all()
        .iter()
        .map(|&k| report.strategy(Strategy::Reschedule(k)).map(|s| &s.cumulative_revenue))
        .collect();
    report
        .days
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut row = [None; 4];
            for (k, c) in cols.iter().enumerate() {
                row[k] = c.map(|v| v[i]);
            }
            (*d, row)
        })
        .collect()
}

/// Writes `date,scheme1,scheme2,scheme3,scheme4`; schemes that were not run are empty.
pub fn write_scheme_series<W: Write>(out: W, series: &SchemeSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "scheme1", "scheme2", "scheme3", "scheme4"])?;
    for (d, row) in series {
        let mut rec = vec![d.to_string()];
        rec.extend(row.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Selection confusion counts as `strategy,selected,actual,count`.
pub fn write_selection_csv<W: Write>(out: W, report: &BacktestReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "selected", "actual", "count"])?;
    for s in &report.strategies {
        let c = &s.selection;
        for (i, sel) in c.markets.iter().enumerate() {
            for (j, act) in c.markets.iter().enumerate() {
                w.write_record([s.label.as_str(), sel, act, &c.matrix[i][j].to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(f))
}

/// Writes every report file into `dir` and returns their paths.
pub fn write_report_dir(dir: impl AsRef<Path>, report: &BacktestReport) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut json = create(dir, REPORT_JSON, &mut written)?;
    json.write_all(report.to_json()?.as_bytes())?;
    json.write_all(b"\n")?;
    json.flush()?;
    write_bid_log(create(dir, BIDS_CSV, &mut written)?, report)?;
    write_revenue_csv(create(dir, REVENUE_CSV, &mut written)?, report)?;
    write_scheme_series(create(dir, CUMULATIVE_CSV, &mut written)?, &scheme_series(report))?;
    write_selection_csv(create(dir, SELECTION_CSV, &mut written)?, report)?;
    report.thresholds.write_csv(create(dir, THRESHOLDS_CSV, &mut written)?)?;
    Ok(written)
}

pub fn read_report(dir: impl AsRef<Path>) -> Result<BacktestReport> {
    let path = dir.as_ref().join(REPORT_JSON);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            artifact: path.display().to_string(),
            stage: "backtest".into(),
        });
    }
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub run: String,
    pub strategy: String,
    pub accuracy: Option<f64>,
    /// Accuracy of the raw day-ahead argmax on the same run.
    pub baseline_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub strategy: String,
    pub with_uncertainty: Option<f64>,
    pub without_uncertainty: Option<f64>,
    pub perfect_foresight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub run: String,
    pub strategy: String,
    pub total_revenue: f64,
    /// Revenue minus the first run's revenue for the same strategy.
    pub difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub runs: Vec<String>,
    pub accuracy: Vec<AccuracyRow>,
    pub revenue: Vec<RevenueRow>,
    pub differences: Vec<DifferenceRow>,
    pub scheme_series: SchemeSeries,
}

/// Compares named reports over the same days and markets.
pub fn compare_strategies(reports: &[(String, BacktestReport)]) -> Result<Comparison> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::arg("nothing to compare"));
    };
    for (name, r) in reports {
        if r.days != first.days {
            return Err(Error::arg(format!("run {name} covers a different date range")));
        }
        if r.markets != first.markets {
            return Err(Error::arg(format!("run {name} uses different markets")));
        }
    }

    let mut accuracy = Vec::new();
    let mut differences = Vec::new();
    for (name, r) in reports {
        let baseline = r.strategy(Strategy::Baseline).and_then(|s| s.selection.accuracy());
        for s in &r.strategies {
            if s.strategy != Strategy::Baseline {
                accuracy.push(AccuracyRow {
                    run: name.clone(),
                    strategy: s.label.clone(),
                    accuracy: s.selection.accuracy(),
                    baseline_accuracy: baseline,
                });
            }
            differences.push(DifferenceRow {
                run: name.clone(),
                strategy: s.label.clone(),
                total_revenue: s.total_revenue,
                difference: first.strategy(s.strategy).map(|f| s.total_revenue - f.total_revenue),
            });
        }
    }

    let pick = |pf: bool, nu: bool| {
        reports
            .iter()
            .map(|(_, r)| r)
            .find(|r| r.perfect_foresight == pf && (pf || r.no_uncertainty == nu))
    };
    let with = pick(false, false);
    let without = pick(false, true);
    let perfect = pick(true, false);
    let mut labels: Vec<(Strategy, String)> = Vec::new();
    for (_, r) in reports {
        for s in &r.strategies {
            if !labels.iter().any(|(k, _)| *k == s.strategy) {
                labels.push((s.strategy, s.label.clone()));
            }
        }
    }
    labels.sort();
    let total = |r: Option<&BacktestReport>, k: Strategy| r.and_then(|r| r.strategy(k)).map(|s| s.total_revenue);
    let revenue = labels
        .into_iter()
        .map(|(k, label)| RevenueRow {
            strategy: label,
            with_uncertainty: total(with, k),
            without_uncertainty: total(without, k),
            perfect_foresight: total(perfect, k),
        })
        .collect();

    let series_source = with
        .filter(|r| r.strategy(Strategy::Reschedule(Scheme::Forecast)).is_some())
        .or_else(|| {
            reports
                .iter()
                .map(|(_, r)| r)
                .find(|r| r.strategies.iter().any(|s| s.strategy.scheme().is_some()))
        })
        .unwrap_or(first);

    Ok(Comparison {
        runs: reports.iter().map(|(n, _)| n.clone()).collect(),
        accuracy,
        revenue,
        differences,
        scheme_series: scheme_series(series_source),
    })
}

/// Writes `accuracy.csv`, `revenue.csv`, `differences.csv`,
/// `cumulative_revenue.csv` and `comparison.json` into `dir`.
pub fn write_comparison(dir: impl AsRef<Path>, cmp: &Comparison) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let mut w = csv::Writer::from_writer(create(dir, "accuracy.csv", &mut written)?);
    w.write_record(["run", "strategy", "accuracy", "baseline_accuracy"])?;
    for r in &cmp.accuracy {
        w.write_record([r.run.clone(), r.strategy.clone(), opt(r.accuracy), opt(r.baseline_accuracy)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(dir, "revenue.csv", &mut written)?);
    w.write_record(["strategy", "with_uncertainty", "without_uncertainty", "perfect_foresight"])?;
    for r in &cmp.revenue {
        w.write_record([
            r.strategy.clone(),
            opt(r.with_uncertainty),
            opt(r.without_uncertainty),
            opt(r.perfect_foresight),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(dir, "differences.csv", &mut written)?);
    w.write_record(["run", "strategy", "total_revenue", "difference"])?;
    for r in &cmp.differences {
        w.write_record([r.run.clone(), r.strategy.clone(), r.total_revenue.to_string(), opt(r.difference)])?;
    }
    w.flush()?;

    write_scheme_series(create(dir, CUMULATIVE_CSV, &mut written)?, &cmp.scheme_series)?;
    let mut json = create(dir, "comparison.json", &mut written)?;
    json.write_all(serde_json::to_string_pretty(cmp)?.as_bytes())?;
    json.write_all(b"\n")?;
    json.flush()?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::{run_experiment, ExperimentConfig};
    use crate::market::{PriceBook, PriceSeries};
    use chrono::{TimeZone, Utc};

    fn report(days: usize) -> BacktestReport {
        let start = Utc.with_ymd_and_hms(2018, 5, 10, 0, 0, 0).unwrap();
        let n = 10 * 24;
        let mut b = PriceBook::new();
        b.insert(PriceSeries::hourly("FCR-N", start, &(0..n).map(|h| 10.0 + (h % 3) as f64).collect::<Vec<_>>()).unwrap());
        b.insert(PriceSeries::hourly("FCR-D", start, &(0..n).map(|h| (h % 13) as f64).collect::<Vec<_>>()).unwrap());
        b.insert(PriceSeries::hourly("mFRR", start, &(0..n).map(|h| if h % 9 == 0 { 30.0 } else { 1.0 }).collect::<Vec<_>>()).unwrap());
        let cfg = ExperimentConfig {
            days,
            perfect_foresight: true,
            ..Default::default()
        };
        run_experiment(cfg, &b).unwrap()
    }

    #[test]
    fn identical_reports_have_zero_differences() {
        let r = report(3);
        let cmp = compare_strategies(&[("a".into(), r.clone()), ("b".into(), r)]).unwrap();
        assert!(cmp.differences.iter().all(|d| d.difference == Some(0.0)));
        assert_eq!(cmp.scheme_series.len(), 3);
        assert!(cmp.scheme_series.iter().all(|(_, row)| row.iter().all(|v| v.is_some())));
    }

    #[test]
    fn mismatched_ranges_are_rejected() {
        let err = compare_strategies(&[("a".into(), report(3)), ("b".into(), report(2))]).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn report_dir_round_trip() {
        let r = report(2);
        let dir = tempfile::tempdir().unwrap();
        let files = write_report_dir(dir.path(), &r).unwrap();
        assert_eq!(files.len(), 6);
        assert_eq!(read_report(dir.path()).unwrap(), r);
        let cum = fs::read_to_string(dir.path().join(CUMULATIVE_CSV)).unwrap();
        assert!(cum.starts_with("date,scheme1,scheme2,scheme3,scheme4\n2018-05-10,"));
    }

    #[test]
    fn missing_report_names_backtest() {
        let dir = tempfile::tempdir().unwrap();
        match read_report(dir.path()) {
            Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "backtest"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
