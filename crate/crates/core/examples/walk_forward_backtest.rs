//! Walk-forward backtest on synthetic data: daily retraining, calibrated
//! thresholds, every strategy and scheme, then a revenue summary.
//!
//! cargo run --release --example walk_forward_backtest -- [days] [mc_samples]

use reservebid::backtest::{run_experiment, ExperimentConfig};
use reservebid::synthetic::{generate, SyntheticConfig};

fn main() -> reservebid::Result<()> {
    let mut args = std::env::args().skip(1);
    let days = args.next().map(|s| s.parse().expect("days")).unwrap_or(5);
    let mc_samples = args.next().map(|s| s.parse().expect("mc_samples")).unwrap_or(100);

    let book = generate(&SyntheticConfig::default())?;
    let config = ExperimentConfig { days, mc_samples, ..Default::default() };
    let report = run_experiment(config, &book)?;

    if let Some(ua) = &report.ua {
        println!(
            "UA: calibration {:.3}, evaluation {:.3}",
            ua.calibration.unwrap_or(f64::NAN),
            ua.evaluation.ua
        );
    }
    for t in &report.thresholds.markets {
        println!("threshold {:6} {:.2}", t.market, t.u_th);
    }
    println!("{:<22} {:>12} {:>9}", "strategy", "revenue", "accuracy");
    for s in &report.strategies {
        let acc = s.selection.accuracy().map(|a| format!("{:.1}%", 100.0 * a)).unwrap_or_else(|| "-".into());
        println!("{:<22} {:>12.2} {:>9}", s.label, s.total_revenue, acc);
    }
    Ok(())
}
