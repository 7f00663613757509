//! Replays a uniform-price auction against recorded clearing prices.

use chrono::{Duration, NaiveDate};
use reservebid::market::{clear_auction, day_start, revenue, Bid, PriceSeries};

fn main() -> reservebid::Result<()> {
    let start = day_start(NaiveDate::from_ymd_opt(2018, 5, 10).unwrap());
    let history = PriceSeries::hourly("FCR-N", start, &[12.0, 0.0, 8.5, 30.0])?;

    let bids = vec![
        Bid::new("FCR-N", start, 10.0, 0.0)?,
        // a zero clearing price pays nothing, so the bid is rejected
        Bid::new("FCR-N", start + Duration::hours(1), 10.0, 0.0)?,
        Bid::new("FCR-N", start + Duration::hours(2), 10.0, 9.0)?,
        Bid::new("FCR-N", start + Duration::hours(3), 4.0, 25.0)?,
    ];
    let results = clear_auction(&bids, &history)?;
    for (b, r) in bids.iter().zip(&results) {
        println!(
            "{}  {:>4} MW at fee {:>5.2}: clearing {:>5.2} accepted {:<5} paid {:.2}",
            r.epoch.format("%H:%M"),
            b.capacity,
            b.requested_fee,
            r.clearing_price,
            r.accepted,
            r.paid_price()
        );
    }
    let rev = revenue(&results, &bids, 1.0)?;
    println!("total revenue {:.2}", rev.total);
    Ok(())
}
