//! Trains the forecasting network on a 180-day window and produces a
//! Monte-Carlo dropout forecast with per-hour uncertainty.

use chrono::NaiveDate;
use reservebid::data::{build_features, build_training_window};
use reservebid::forecaster::{predict_mc, train, TrainConfig};
use reservebid::synthetic::{generate, SyntheticConfig};

fn main() -> reservebid::Result<()> {
    let book = generate(&SyntheticConfig::default())?;
    let series = book.require("FCR-N")?;
    let day = NaiveDate::from_ymd_opt(2018, 5, 10).unwrap();
    let offset = 7;

    let window = build_training_window(series, day, 180, offset)?;
    let model = train(&window, &TrainConfig::default(), 1)?;
    println!("trained on {} days, final loss {:.4}", model.meta.samples, model.meta.final_loss);

    let x = build_features(series, day, &model.stats, offset)?;
    let fc = predict_mc(&model, &x, 500, 2)?;
    let actual = series.day_prices(day).expect("synthetic data is complete");
    println!("hour  forecast        u     nu  actual");
    for h in 0..24 {
        let r = &fc.result;
        println!("{h:>4}  {:>8.2} {:>8.3} {:>6.3} {:>7.2}", r.p_hat[h], r.u[h], r.nu[h], actual[h]);
    }
    println!("{} samples kept for inspection", fc.samples.len());
    Ok(())
}
