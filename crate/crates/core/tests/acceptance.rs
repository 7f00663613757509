//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! and exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reservebid::backtest::{run_experiment, Backtest, BacktestReport, ExperimentConfig, ThresholdSource};
use reservebid::calibration::{compute_ua, search_thresholds, ConfusionCounts, EvalHour, EvalSet, ThresholdTable};
use reservebid::data::{build_features, build_training_window};
use reservebid::forecaster::{predict_mc, train, TrainConfig};
use reservebid::gsom::{node_uncertainty, train_gsom, GsomParams};
use reservebid::market::{day_start, MarketSet, PriceBook, PriceSeries};
use reservebid::report::write_report_dir;
use reservebid::strategies::{
    n_min, strategy3, IntervalForecasts, PlanningContext, RescheduleConstraints, Scheme, Strategy, StrategyConfig,
};
use reservebid::synthetic::{generate, SyntheticConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn textbook_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn criterion1() -> Outcome {
    let ev = RescheduleConstraints::ev_example();
    let n = n_min(&ev).map_err(|e| e.to_string())?;
    check(n == 2, format!("EV case gives N_min {n}, expected 2"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..50 {
        let energy: u64 = rng.gen_range(1..=200);
        let p_max: u64 = rng.gen_range(1..=50);
        let per_hour: usize = rng.gen_range(1..=4);
        let hours = (energy + p_max - 1) / p_max;
        let expected = hours as usize * per_hour;
        let c = RescheduleConstraints {
            energy: energy as f64,
            p_max: p_max as f64,
            e_earliest: 0,
            e_latest: expected + rng.gen_range(0..10) - 1,
            epochs_per_hour: per_hour,
        };
        let got = n_min(&c).map_err(|e| format!("case {case}: {e}"))?;
        check(got == expected, format!("case {case}: E={energy} P_max={p_max} e_h={per_hour}: {got} != {expected}"))?;
    }
    Ok("EV N_min = 2; 50 random cases match the ceiling oracle".into())
}

fn criterion2() -> Outcome {
    let book = generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let day = NaiveDate::from_ymd_opt(2018, 5, 10).unwrap();
    let quick = TrainConfig { epochs: 30, ..Default::default() };
    let mut worst = 0.0f64;
    for (i, market) in ["FCR-N", "FCR-D", "mFRR"].iter().enumerate() {
        let s = book.require(market).unwrap();
        let w = build_training_window(s, day, 180, 7).unwrap();
        let model = train(&w, &quick, i as u64).unwrap();
        let x = build_features(s, day, &model.stats, 7).unwrap();
        let mc = predict_mc(&model, &x, 500, 9).unwrap();
        check(mc.samples.len() == 500 && mc.samples.iter().all(|r| r.len() == 24), "sample matrix is not 500 x 24")?;
        for h in 0..24 {
            let col: Vec<f64> = mc.samples.iter().map(|r| r[h]).collect();
            let (mean, std) = textbook_std(&col);
            worst = worst.max((mc.result.p_hat[h] - mean).abs()).max((mc.result.u[h] - std).abs());
            check(close(mc.result.p_hat[h], mean, 1e-12), format!("{market} hour {h}: p_hat {} vs mean {mean}", mc.result.p_hat[h]))?;
            check(close(mc.result.u[h], std, 1e-12), format!("{market} hour {h}: u {} vs std {std}", mc.result.u[h]))?;
        }

        let frozen = train(&w, &TrainConfig { dropout_rate: 0.0, ..quick.clone() }, i as u64).unwrap();
        let mc = predict_mc(&frozen, &x, 500, 9).unwrap();
        check(mc.result.u.iter().all(|&u| u == 0.0), format!("{market}: dropout 0 left nonzero u"))?;
    }
    Ok(format!("p_hat/u match the sample matrix (max abs diff {worst:.1e}); dropout 0 gives u = 0"))
}

fn criterion3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 8;
    let mut vectors = Vec::new();
    let mut prices = Vec::new();
    for i in 0..120 {
        let centre = if i % 2 == 0 { 5.0 } else { -5.0 };
        vectors.push((0..dim).map(|_| centre + rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>());
        prices.push((0..24).map(|_| rng.gen_range(1.0..30.0)).collect::<Vec<f64>>());
    }
    let map = train_gsom(&vectors, &prices, &GsomParams::default(), 17).unwrap();
    let winners = |parity: usize| -> std::collections::BTreeSet<usize> {
        vectors.iter().enumerate().filter(|(i, _)| i % 2 == parity).map(|(_, v)| map.winner(v)).collect()
    };
    let (a, b) = (winners(0), winners(1));
    check(a.is_disjoint(&b), format!("winner sets overlap: {a:?} / {b:?}"))?;

    let mut compared = 0;
    for node in &map.nodes {
        for slot in 0..24 {
            let p = &node.attached_prices[slot];
            if p.len() >= 2 {
                let (mean, std) = textbook_std(p);
                let (m, u, nu) = node_uncertainty(p);
                check(close(m, mean, 1e-12) && close(u, std, 1e-12), "node std differs from the textbook std")?;
                check(close(nu, std / mean, 1e-12), "nu differs from std / mean")?;
                compared += 1;
            }
        }
    }
    for n in 0..60 {
        let xs: Vec<f64> = (0..rng.gen_range(2..40)).map(|_| rng.gen_range(0.0..100.0)).collect();
        let (mean, std) = textbook_std(&xs);
        let (m, u, _) = node_uncertainty(&xs);
        check(close(m, mean, 1e-12) && close(u, std, 1e-12), format!("random list {n}: {u} vs {std}"))?;
    }

    let mut hollow = map.clone();
    let node = hollow.nodes.iter().position(|n| n.attached_prices[0].is_empty()).unwrap_or(0);
    for slot in hollow.nodes[node].attached_prices.iter_mut() {
        slot.clear();
    }
    let x = hollow.nodes[node].weight.clone();
    let g = hollow.uncertainty(&x, 0).unwrap();
    check(g.node == node, "query on a node's own weight did not win that node")?;
    check(g.u == f64::INFINITY && g.nu == f64::INFINITY, format!("empty node gave u {} nu {}", g.u, g.nu))?;
    Ok(format!(
        "{} nodes, disjoint winners ({} / {}), {compared} node slots match the textbook std, empty node is +inf",
        map.len(),
        a.len(),
        b.len()
    ))
}

/// Oracle: every combination of the 101-point grid, first maximum wins.
fn enumerate_thresholds(set: &EvalSet) -> (Vec<f64>, f64) {
    let sel: Vec<(usize, bool, f64)> = set
        .hours
        .iter()
        .map(|h| {
            let first_max = |v: &[f64]| {
                let mut b = 0;
                for i in 1..v.len() {
                    if v[i] > v[b] {
                        b = i;
                    }
                }
                b
            };
            let s = first_max(&h.p_hat);
            (s, s == first_max(&h.actual), h.nu[s])
        })
        .collect();
    let mut best = (vec![0.0; 3], -1.0);
    for i in 0..=100 {
        for j in 0..=100 {
            for k in 0..=100 {
                let th = [i as f64 / 100.0, j as f64 / 100.0, k as f64 / 100.0];
                let agree = sel.iter().filter(|(s, acc, nu)| (*nu < th[*s]) == *acc).count();
                let ua = agree as f64 / sel.len() as f64;
                if ua > best.1 {
                    best = (th.to_vec(), ua);
                }
            }
        }
    }
    best
}

fn criterion4() -> Outcome {
    let r = compute_ua(&ConfusionCounts { n_ac: 3, n_au: 1, n_ic: 1, n_iu: 1 }).unwrap();
    check(r.ua == 4.0 / 6.0, format!("UA {} != 4/6", r.ua))?;
    check(r.p_acc_given_cert == Some(0.75), "P(acc|cert) != 3/4")?;
    check(r.p_inacc_given_uncert == Some(0.5), "P(inacc|uncert) != 1/2")?;

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let markets: Vec<String> = ["FCR-N", "FCR-D", "mFRR"].iter().map(|s| s.to_string()).collect();
    let mut sets = Vec::new();
    for variant in 0..2 {
        let hours = (0..720)
            .map(|_| {
                let actual: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..10.0)).collect();
                let nu: Vec<f64> = (0..3)
                    .map(|_| match rng.gen_range(0..10) {
                        // exact grid points exercise the strict comparison
                        0 => rng.gen_range(0..=100) as f64 / 100.0,
                        1 => f64::INFINITY,
                        _ => rng.gen_range(0.0..1.2),
                    })
                    .collect();
                let p_hat = actual
                    .iter()
                    .zip(&nu)
                    .map(|(a, n)| {
                        let scale = if n.is_finite() { *n } else { 1.0 };
                        let noise = if variant == 0 { 8.0 } else { 3.0 };
                        (a + rng.gen_range(-1.0..1.0) * noise * scale).round()
                    })
                    .collect();
                EvalHour { p_hat, nu, actual: actual.iter().map(|a: &f64| a.round()).collect() }
            })
            .collect();
        sets.push(EvalSet::new(markets.clone(), hours).unwrap());
    }
    for (i, set) in sets.iter().enumerate() {
        let table = search_thresholds(set).unwrap();
        let (th, ua) = enumerate_thresholds(set);
        check(table.thresholds() == th, format!("set {i}: thresholds {:?} vs oracle {th:?}", table.thresholds()))?;
        check(table.ua == Some(ua), format!("set {i}: UA {:?} vs oracle {ua}", table.ua))?;
    }
    Ok("hand case UA = 4/6; search equals the 101^3 enumeration on two 3 x 720 sets".into())
}

fn criterion5() -> Outcome {
    let book = generate(&SyntheticConfig::default()).unwrap();
    let cfg = ExperimentConfig {
        strategies: vec![2],
        perfect_foresight: true,
        days: 30,
        ..Default::default()
    };
    let capacity = cfg.capacity_mw;
    let start = cfg.start;
    let report = run_experiment(cfg, &book).map_err(|e| e.to_string())?;
    let s2 = report.strategy(Strategy::EpochAheadAware).ok_or("no strategy 2 report")?;

    let mut expected = Vec::new();
    for d in 0..30 {
        let day = start + Duration::days(d);
        let prices: Vec<[f64; 24]> = ["FCR-N", "FCR-D", "mFRR"]
            .iter()
            .map(|m| book.require(m).unwrap().day_prices(day).unwrap())
            .collect();
        for h in 0..24 {
            let max = prices.iter().map(|p| p[h]).fold(f64::NEG_INFINITY, f64::max);
            expected.push(capacity * max * 1.0);
        }
    }
    let total: f64 = expected.iter().sum();
    let acc = s2.selection.accuracy().unwrap_or(0.0);
    check(s2.selection.total() == 720, format!("{} epochs counted", s2.selection.total()))?;
    check(acc == 1.0, format!("selection accuracy {acc}"))?;
    check(s2.epoch_revenue == expected, "per-epoch revenue differs from the max-price oracle")?;
    check(s2.total_revenue == total, format!("revenue {} vs oracle {total}", s2.total_revenue))?;
    Ok(format!("720/720 epochs on the best market, revenue {total:.2} equals the oracle"))
}

fn pf_revenue(prices: &[[f64; 8]; 3], ev: &RescheduleConstraints, scheme: Scheme, seed: u64) -> f64 {
    let start = day_start(NaiveDate::from_ymd_opt(2018, 5, 10).unwrap());
    let markets = MarketSet::finnish();
    let ids = markets.ids();
    let mut book = PriceBook::new();
    let mut forecasts = IntervalForecasts::new();
    for (id, p) in ids.iter().zip(prices) {
        book.insert(PriceSeries::hourly(id.as_str(), start, p).unwrap());
        forecasts.insert(id.as_str(), p.to_vec(), vec![0.0; 8]).unwrap();
    }
    let thresholds = ThresholdTable::uniform(&ids, 1.0).unwrap();
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
    let mut plan = strategy3(&ctx, ev, scheme, seed).unwrap();
    plan.settle(&markets, &book, 0.0).unwrap();
    plan.total_revenue()
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

fn criterion6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut margin = f64::INFINITY;
    for case in 0..1000 {
        let mut prices = [[0.0; 8]; 3];
        for row in prices.iter_mut() {
            for p in row.iter_mut() {
                *p = match rng.gen_range(0..8) {
                    0 => 0.0,
                    1 => rng.gen_range(1..5) as f64,
                    _ => rng.gen_range(0.0..40.0),
                };
            }
        }
        let p_max = [7.0, 11.0, 22.0].choose(&mut rng).copied().unwrap();
        let energy = rng.gen_range(1.0..=8.0 * p_max);
        let ev = RescheduleConstraints { energy, p_max, ..RescheduleConstraints::ev_example() };
        let n = n_min(&ev).unwrap();

        let r4 = pf_revenue(&prices, &ev, Scheme::Forecast, case);
        for scheme in [Scheme::Constant, Scheme::Earliest, Scheme::Random] {
            let r = pf_revenue(&prices, &ev, scheme, case);
            check(
                r4 >= r - 1e-9 * r.abs().max(1.0),
                format!("case {case}: scheme 4 {r4} < scheme {} {r}", scheme.number()),
            )?;
            margin = margin.min(r4 - r);
        }

        let epoch_best: Vec<f64> = (0..8).map(|e| prices.iter().map(|p| p[e]).fold(0.0, f64::max)).collect();
        let best = subsets(8, n)
            .iter()
            .map(|s| s.iter().map(|&e| p_max * epoch_best[e]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        check(close(r4, best, 1e-12), format!("case {case}: scheme 4 {r4} vs exhaustive optimum {best}"))?;
    }
    Ok(format!("1000 instances: scheme 4 >= schemes 1-3 (min margin {margin:.3}) and equals the C(8,N_min) optimum"))
}

fn quick_config(start: NaiveDate, days: usize) -> ExperimentConfig {
    ExperimentConfig {
        start,
        days,
        mc_samples: 40,
        window_days: 60,
        training: TrainConfig { epochs: 15, ..Default::default() },
        thresholds: ThresholdSource::Calibrate { days: 4 },
        ..Default::default()
    }
}

fn plans_at(book: &PriceBook, day: NaiveDate) -> (DateTime<Utc>, String) {
    let bt = Backtest::new(quick_config(day, 1), book).unwrap();
    let calibration: Vec<_> = bt.calibration_days().into_iter().map(|d| bt.forecast_day(d).unwrap()).collect();
    let thresholds = bt.thresholds(&calibration).unwrap();
    let forecast = bt.forecast_day(day).unwrap();
    let plans = bt.plan_day(&forecast, &thresholds).unwrap();
    let dump = serde_json::to_string(&(forecast, thresholds, plans)).unwrap();
    (bt.deadline(day), dump)
}

fn report_files(report: &BacktestReport) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let mut files: Vec<(String, Vec<u8>)> = write_report_dir(dir.path(), report)
        .unwrap()
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion7() -> Outcome {
    let book = generate(&SyntheticConfig::default()).unwrap();
    let cfg = quick_config(NaiveDate::from_ymd_opt(2018, 5, 10).unwrap(), 3);
    let a = run_experiment(cfg.clone(), &book).map_err(|e| e.to_string())?;
    let b = run_experiment(cfg, &book).map_err(|e| e.to_string())?;
    check(a.to_json().unwrap() == b.to_json().unwrap(), "report JSON differs between runs")?;
    check(report_files(&a) == report_files(&b), "report files differ between runs")?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let first = NaiveDate::from_ymd_opt(2018, 3, 1).unwrap();
    let end = book.require("FCR-N").unwrap().last().unwrap();
    let markets = ["FCR-N", "FCR-D", "mFRR"];
    for trial in 0..20 {
        let day = first + Duration::days(rng.gen_range(0..95));
        let (deadline, before) = plans_at(&book, day);
        let mut mutated = book.clone();
        // the instant of the deadline itself on the first trial, random later
        let span = (end - deadline).num_hours();
        let ts = deadline + Duration::hours(if trial == 0 { 0 } else { rng.gen_range(0..=span) });
        let k = rng.gen_range(1..=3);
        for m in markets.choose_multiple(&mut rng, k) {
            let s = mutated.get_mut(m).unwrap();
            let p = s.price_at(ts).unwrap();
            s.set_price(ts, p * 3.0 + 50.0).unwrap();
        }
        let (_, after) = plans_at(&mutated, day);
        check(before == after, format!("trial {trial}: mutating {ts} changed the bids for {day} (deadline {deadline})"))?;
    }

    // control: a change just before the deadline must reach the forecast
    let day = NaiveDate::from_ymd_opt(2018, 4, 2).unwrap();
    let (deadline, before) = plans_at(&book, day);
    let mut mutated = book.clone();
    let s = mutated.get_mut("FCR-N").unwrap();
    let ts = deadline - Duration::hours(1);
    let p = s.price_at(ts).unwrap();
    s.set_price(ts, p * 3.0 + 50.0).unwrap();
    check(plans_at(&mutated, day).1 != before, "a pre-deadline change did not affect the forecast")?;
    Ok("identical reports on rerun; 20 post-deadline mutations leave bids unchanged".into())
}

fn criterion8() -> Outcome {
    let book = generate(&SyntheticConfig::default()).unwrap();
    let (with, without) = std::thread::scope(|s| {
        let a = s.spawn(|| run_experiment(ExperimentConfig::default(), &book));
        let b = s.spawn(|| {
            run_experiment(ExperimentConfig { no_uncertainty: true, strategies: vec![1], ..Default::default() }, &book)
        });
        (a.join().unwrap(), b.join().unwrap())
    });
    let (with, without) = (with.map_err(|e| e.to_string())?, without.map_err(|e| e.to_string())?);
    let rev = |r: &BacktestReport, s| r.strategy(s).unwrap().total_revenue;
    let acc = |s| with.strategy(s).unwrap().selection.accuracy().unwrap();

    let (a1, a2) = (acc(Strategy::HighestForecast), acc(Strategy::EpochAheadAware));
    let (r1, r1n) = (rev(&with, Strategy::HighestForecast), rev(&without, Strategy::HighestForecast));
    let cum: Vec<f64> = Scheme::all().iter().map(|&k| rev(&with, Strategy::Reschedule(k))).collect();
    let ua = with.ua.as_ref().and_then(|u| u.calibration).unwrap_or(f64::NAN);
    let ua_eval = with.ua.as_ref().map(|u| u.evaluation.ua).unwrap_or(f64::NAN);

    let parts = [
        ("a", a2 > a1, format!("accuracy s2 {:.2}% vs s1 {:.2}%", 100.0 * a2, 100.0 * a1)),
        ("b", r1 > r1n, format!("s1 revenue {r1:.2} with vs {r1n:.2} without uncertainty")),
        ("c", cum[..3].iter().all(|&r| cum[3] > r), format!("scheme revenues {cum:.2?}")),
        ("d", (0.70..=0.85).contains(&ua), format!("calibrated UA {ua:.4} (evaluation days {ua_eval:.4})")),
    ];
    let summary: Vec<String> = parts
        .iter()
        .map(|(k, ok, msg)| format!("({k}) {} {msg}", if *ok { "ok" } else { "FAILED" }))
        .collect();
    let summary = summary.join("; ");
    if parts.iter().all(|p| p.1) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn main() {
    let criteria: [(u8, fn() -> Outcome); 8] = [
        (1, criterion1),
        (2, criterion2),
        (3, criterion3),
        (4, criterion4),
        (5, criterion5),
        (6, criterion6),
        (7, criterion7),
        (8, criterion8),
    ];
    let filter: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, f) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n}: PASS ({secs:.1} s) {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n}: FAIL ({secs:.1} s) {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
