//! Plans one day with the baseline and strategies 1 and 2, then settles the
//! plans against actual prices, including the epoch-ahead fallback round.

use chrono::NaiveDate;
use reservebid::calibration::ThresholdTable;
use reservebid::market::{day_start, MarketSet, PriceBook, PriceSeries};
use reservebid::strategies::{plan_interval, IntervalForecasts, PlanningContext, Strategy, StrategyConfig};

fn main() -> reservebid::Result<()> {
    let day = NaiveDate::from_ymd_opt(2018, 5, 10).unwrap();
    let start = day_start(day);
    let markets = MarketSet::finnish();

    // four epochs are enough to show the decisions
    let actual_n = [12.0, 14.0, 9.0, 15.0];
    let actual_d = [0.0, 8.0, 11.0, 6.0];
    let actual_m = [3.0, 2.5, 40.0, 3.0];
    let mut prices = PriceBook::new();
    prices.insert(PriceSeries::hourly("FCR-N", start, &actual_n)?);
    prices.insert(PriceSeries::hourly("FCR-D", start, &actual_d)?);
    prices.insert(PriceSeries::hourly("mFRR", start, &actual_m)?);

    let mut forecasts = IntervalForecasts::new();
    forecasts.insert("FCR-N", vec![11.0, 13.0, 10.0, 14.0], vec![0.05, 0.05, 0.4, 0.05])?;
    forecasts.insert("FCR-D", vec![7.0, 9.0, 12.0, 5.0], vec![0.1; 4])?;
    forecasts.insert("mFRR", vec![3.0, 3.0, 25.0, 3.0], vec![0.2, 0.2, 0.1, 0.2])?;
    let thresholds = ThresholdTable::fixed(&[("FCR-N".into(), 0.2), ("FCR-D".into(), 0.2), ("mFRR".into(), 0.3)])?;

    let config = StrategyConfig::default();
    let ctx = PlanningContext {
        markets: &markets,
        forecasts: &forecasts,
        thresholds: &thresholds,
        config: &config,
        interval_start: start,
        epochs: 4,
        epoch_hours: 1.0,
    };
    let capacity = vec![10.0; 4];
    for strategy in [Strategy::Baseline, Strategy::HighestForecast, Strategy::EpochAheadAware] {
        let mut plan = plan_interval(strategy, &ctx, &capacity, None, 0)?;
        plan.settle(&markets, &prices, config.mpp)?;
        println!("{}", strategy.label());
        for e in &plan.entries {
            let o = e.outcome.as_ref().expect("settled");
            println!(
                "  epoch {} {:<6} {:>4} MW {:<21} accepted {:<5} revenue {:.2}",
                e.epoch,
                e.market_id,
                e.capacity,
                e.phase.as_str(),
                o.accepted,
                o.revenue
            );
        }
        println!("  total {:.2}", plan.total_revenue());
    }
    Ok(())
}
