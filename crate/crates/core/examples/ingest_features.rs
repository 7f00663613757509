//! Ingests a price CSV, reports gaps and builds the standardized training
//! window and feature vector for one forecast day.
//!
//! cargo run --example ingest_features -- [prices.csv] [market]

use chrono::NaiveDate;
use reservebid::data::{build_features, build_training_window, cutoff, ingest_csv, write_csv};
use reservebid::synthetic::{generate, SyntheticConfig};

fn main() -> reservebid::Result<()> {
    let mut args = std::env::args().skip(1);
    let (path, market) = match args.next() {
        Some(p) => (p.into(), args.next().unwrap_or_else(|| "FCR-N".into())),
        None => {
            // no file given: write one from the synthetic generator
            let dir = tempfile_dir();
            let book = generate(&SyntheticConfig::default())?;
            let path = dir.join("FCR-N.csv");
            write_csv(book.require("FCR-N")?, &path)?;
            (path, "FCR-N".to_string())
        }
    };

    let report = ingest_csv(&path, &market)?;
    println!("{market}: {} hourly records, {} gaps", report.series.len(), report.gaps.len());

    let day = NaiveDate::from_ymd_opt(2018, 5, 10).unwrap();
    let offset = 7;
    let window = build_training_window(&report.series, day, 180, offset)?;
    println!(
        "training window {}..={} ({} samples, {} skipped), mean {:.3}, std {:.3}",
        window.first_day,
        window.last_day,
        window.len(),
        window.skipped.len(),
        window.stats.mean,
        window.stats.std
    );
    println!("information cutoff for {day}: {}", cutoff(day, offset));
    let x = build_features(&report.series, day, &window.stats, offset)?;
    println!("first lag prices {:.3?}", &x.values[..4]);
    println!("weekday one-hot  {:?}", &x.values[48..55]);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("reservebid-ingest-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
