//! The EV charger case: 44 kWh to deliver at up to 22 kW within 8 hourly
//! epochs. Compares the four rescheduling schemes under perfect foresight.

use chrono::NaiveDate;
use reservebid::calibration::ThresholdTable;
use reservebid::market::{day_start, MarketSet, PriceBook, PriceSeries};
use reservebid::strategies::{
    n_min, strategy3, IntervalForecasts, PlanningContext, RescheduleConstraints, Scheme, StrategyConfig,
};

fn main() -> reservebid::Result<()> {
    let ev = RescheduleConstraints::ev_example();
    println!("N_min = {}", n_min(&ev)?);

    let start = day_start(NaiveDate::from_ymd_opt(2018, 5, 10).unwrap());
    let fcr_n = [3.0, 9.0, 1.0, 1.0, 8.0, 1.0, 1.0, 1.0];
    let fcr_d = [2.0, 4.0, 0.0, 5.0, 3.0, 0.0, 2.0, 0.5];
    let mfrr = [1.0, 1.0, 2.0, 1.0, 1.0, 12.0, 1.0, 1.0];
    let mut prices = PriceBook::new();
    let mut forecasts = IntervalForecasts::new();
    for (id, p) in [("FCR-N", fcr_n), ("FCR-D", fcr_d), ("mFRR", mfrr)] {
        prices.insert(PriceSeries::hourly(id, start, &p)?);
        forecasts.insert(id, p.to_vec(), vec![0.0; 8])?;
    }

    let markets = MarketSet::finnish();
    let ids = markets.ids();
    let thresholds = ThresholdTable::uniform(&ids, 1.0)?;
    let config = StrategyConfig::default();
    let ctx = PlanningContext {
        markets: &markets,
        forecasts: &forecasts,
        thresholds: &thresholds,
        config: &config,
        interval_start: start,
        epochs: 8,
        epoch_hours: 1.0,
    };

    for scheme in Scheme::all() {
        let mut plan = strategy3(&ctx, &ev, scheme, 11)?;
        plan.settle(&markets, &prices, 0.0)?;
        let bids: Vec<String> = plan
            .entries
            .iter()
            .map(|e| format!("{}@{}:{}", e.capacity, e.epoch, e.market_id))
            .collect();
        println!("scheme {}: C = {:?}", scheme.number(), plan.capacity);
        println!("          bids {}  revenue {:.1}", bids.join(" "), plan.total_revenue());
    }
    Ok(())
}
