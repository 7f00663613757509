//! Generates the synthetic three-market price set and writes one
//! `timestamp,price` CSV per market, ready for `reservebid ingest`.
//!
//! cargo run --example synthetic_data -- [out_dir] [seed]

use std::path::PathBuf;

use reservebid::data::write_csv;
use reservebid::synthetic::{generate, SyntheticConfig};

fn main() -> reservebid::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let seed = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(7);

    let cfg = SyntheticConfig { seed, ..Default::default() };
    let book = generate(&cfg)?;
    std::fs::create_dir_all(&out)?;
    for s in book.iter() {
        let path = out.join(format!("{}.csv", s.market_id()));
        write_csv(s, &path)?;
        let max = s.records().iter().map(|r| r.1).fold(0.0, f64::max);
        let zeros = s.records().iter().filter(|r| r.1 == 0.0).count();
        println!("{:6} {} hours, max {:.2}, {} zero hours -> {}", s.market_id(), s.len(), max, zeros, path.display());
    }
    Ok(())
}
