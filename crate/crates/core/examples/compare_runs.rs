//! Runs the same days with uncertainty, without it and with perfect
//! foresight, writes each report directory and the comparison tables.
//!
//! cargo run --release --example compare_runs -- [out_dir] [days]

use std::path::PathBuf;

use reservebid::backtest::{run_experiment, ExperimentConfig};
use reservebid::report::{compare_strategies, write_comparison, write_report_dir};
use reservebid::synthetic::{generate, SyntheticConfig};

fn main() -> reservebid::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "comparison".into()));
    let days = args.next().map(|s| s.parse().expect("days")).unwrap_or(3);

    let book = generate(&SyntheticConfig::default())?;
    let base = ExperimentConfig { days, mc_samples: 100, strategies: vec![1, 2], ..Default::default() };
    let runs = [
        ("with-uncertainty", base.clone()),
        ("without-uncertainty", ExperimentConfig { no_uncertainty: true, ..base.clone() }),
        ("perfect-foresight", ExperimentConfig { perfect_foresight: true, ..base }),
    ];

    let mut reports = Vec::new();
    for (name, cfg) in runs {
        let report = run_experiment(cfg, &book)?;
        write_report_dir(out.join(name), &report)?;
        reports.push((name.to_string(), report));
    }
    let cmp = compare_strategies(&reports)?;
    for f in write_comparison(&out, &cmp)? {
        println!("wrote {}", f.display());
    }
    for r in &cmp.revenue {
        println!("{:<10} {:?}", r.strategy, r);
    }
    Ok(())
}
