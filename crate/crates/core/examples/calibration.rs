//! Searches per-market uncertainty thresholds that maximize the share of
//! hours where certainty agrees with accuracy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reservebid::calibration::{compute_ua, search_thresholds, ConfusionCounts, EvalHour, EvalSet};

fn main() -> reservebid::Result<()> {
    let counts = ConfusionCounts { n_ac: 3, n_au: 1, n_ic: 1, n_iu: 1 };
    let r = compute_ua(&counts)?;
    println!("hand case: UA {:.4}, P(acc|cert) {:?}", r.ua, r.p_acc_given_cert);

    // forecasts whose error grows with the reported uncertainty
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let markets = vec!["FCR-N".to_string(), "FCR-D".to_string(), "mFRR".to_string()];
    let hours = (0..720)
        .map(|_| {
            let actual: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..20.0)).collect();
            let nu: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.6)).collect();
            let p_hat = actual.iter().zip(&nu).map(|(a, n)| a + rng.gen_range(-1.0..1.0) * 20.0 * n).collect();
            EvalHour { p_hat, nu, actual }
        })
        .collect();
    let set = EvalSet::new(markets, hours)?;
    let table = search_thresholds(&set)?;
    for m in &table.markets {
        println!("{:6} u_th {:.2}  {:?}", m.market, m.u_th, m.counts);
    }
    println!("joint UA {:.4}", table.ua.unwrap_or(f64::NAN));
    table.write_csv(std::io::stdout())?;
    Ok(())
}
