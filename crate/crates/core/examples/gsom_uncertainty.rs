//! Clusters feature vectors with a growing self-organizing map and reads the
//! price spread of the winning node as an uncertainty estimate.

use chrono::NaiveDate;
use reservebid::data::{build_features, build_training_window};
use reservebid::gsom::{train_gsom, GsomParams};
use reservebid::synthetic::{generate, SyntheticConfig};

fn main() -> reservebid::Result<()> {
    let book = generate(&SyntheticConfig::default())?;
    let day = NaiveDate::from_ymd_opt(2018, 5, 10).unwrap();
    for market in ["FCR-N", "FCR-D", "mFRR"] {
        let series = book.require(market)?;
        let window = build_training_window(series, day, 180, 7)?;
        let vectors: Vec<Vec<f64>> = window.samples.iter().map(|s| s.features.values.clone()).collect();
        let prices: Vec<Vec<f64>> = window.samples.iter().map(|s| s.target.clone()).collect();
        let map = train_gsom(&vectors, &prices, &GsomParams::default(), 3)?;

        let x = build_features(series, day, &window.stats, 7)?;
        print!("{market:6} {:>3} nodes; nu at 08h/12h/18h:", map.len());
        for slot in [8, 12, 18] {
            let g = map.uncertainty(&x.values, slot)?;
            print!("  {:.3} (node {}, {} prices)", g.nu, g.node, g.count);
        }
        println!();
    }
    Ok(())
}
