//! Seeded synthetic hourly prices for the three Finnish reserve markets.
//!
//! Days follow a two-state Markov chain. Calm days are orderly; stressed days
//! come in multi-day episodes with erratic FCR prices and frequent mFRR
//! spikes.
//!
//! - FCR-N: smooth daily profile around `fcr_n_level`, a weekend discount, a
//!   slowly drifting daily level and multiplicative noise.
//! - FCR-D: lower and noisier than FCR-N, with whole zero-price days.
//! - mFRR: low base price with spikes. Spikes are most likely in weekday
//!   morning and evening peaks and occasionally happen at any hour.
//!
//! FCR noise is larger in weekday peak hours, the same hours in which mFRR
//! spikes.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{day_start, PriceBook, PriceSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub start: NaiveDate,
    pub days: usize,
    pub seed: u64,
    pub fcr_n_level: f64,
    pub fcr_d_level: f64,
    pub mfrr_level: f64,
    /// Chance that a calm day is followed by a stressed one.
    pub stress_onset: f64,
    /// Chance that a stressed day is followed by another stressed one.
    pub stress_persistence: f64,
    pub calm: Regime,
    pub stressed: Regime,
    pub spike_min: f64,
    pub spike_max: f64,
    /// Multiplier on FCR price noise during peak hours, where reserve prices
    /// of all products move together.
    pub peak_volatility: f64,
}

/// Price behaviour of one day type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// Log-scale noise of FCR-N prices.
    pub fcr_n_noise: f64,
    /// Probability that an FCR-D day clears at zero in every hour.
    pub zero_day_probability: f64,
    /// Spike probability in weekday peak hours (07-09 and 17-20).
    pub peak_spike_probability: f64,
    /// Spike probability in any other hour.
    pub offpeak_spike_probability: f64,
}

impl Regime {
    pub fn calm() -> Self {
        Regime {
            fcr_n_noise: 0.08,
            zero_day_probability: 0.05,
            peak_spike_probability: 0.7,
            offpeak_spike_probability: 0.02,
        }
    }

    pub fn stressed() -> Self {
        Regime {
            fcr_n_noise: 0.3,
            zero_day_probability: 0.3,
            peak_spike_probability: 0.9,
            offpeak_spike_probability: 0.4,
        }
    }

    fn validate(&self) -> Result<()> {
        for p in [
            self.zero_day_probability,
            self.peak_spike_probability,
            self.offpeak_spike_probability,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::arg(format!("probability {p} outside [0, 1]")));
            }
        }
        if !(self.fcr_n_noise >= 0.0) {
            return Err(Error::arg("noise scale must be >= 0"));
        }
        Ok(())
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            start: NaiveDate::from_ymd_opt(2017, 9, 1).expect("valid date"),
            days: 282,
            seed: 7,
            fcr_n_level: 14.0,
            fcr_d_level: 9.0,
            mfrr_level: 3.0,
            stress_onset: 0.08,
            stress_persistence: 0.8,
            calm: Regime::calm(),
            stressed: Regime::stressed(),
            spike_min: 20.0,
            spike_max: 60.0,
            peak_volatility: 2.5,
        }
    }
}

fn is_peak(hour: usize) -> bool {
    (7..=9).contains(&hour) || (17..=20).contains(&hour)
}

fn is_weekend(day: NaiveDate) -> bool {
    matches!(day.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Generates `FCR-N`, `FCR-D` and `mFRR` series over the configured days.
pub fn generate(config: &SyntheticConfig) -> Result<PriceBook> {
    if config.days == 0 {
        return Err(Error::arg("synthetic data needs at least one day"));
    }
    for p in [config.stress_onset, config.stress_persistence] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::arg(format!("probability {p} outside [0, 1]")));
        }
    }
    config.calm.validate()?;
    config.stressed.validate()?;
    if !(config.peak_volatility >= 0.0) {
        return Err(Error::arg("peak volatility must be >= 0"));
    }
    if !(config.spike_min <= config.spike_max) {
        return Err(Error::arg("spike_min must not exceed spike_max"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n_hours = config.days * 24;
    let (mut fcr_n, mut fcr_d, mut mfrr) = (
        Vec::with_capacity(n_hours),
        Vec::with_capacity(n_hours),
        Vec::with_capacity(n_hours),
    );

    let mut level = 0.0f64;
    let mut stressed = false;
    for d in 0..config.days {
        let day = config.start + Duration::days(d as i64);
        level = 0.9 * level + 0.1 * noise.sample(&mut rng);
        let p_stress = if stressed { config.stress_persistence } else { config.stress_onset };
        stressed = rng.gen::<f64>() < p_stress;
        let regime = if stressed { &config.stressed } else { &config.calm };
        let weekend = is_weekend(day);
        let zero_day = rng.gen::<f64>() < regime.zero_day_probability;
        for h in 0..24 {
            let phase = 2.0 * std::f64::consts::PI * (h as f64 - 8.0) / 24.0;
            let profile = 1.0 + 0.25 * phase.sin();
            let weekend_factor = if weekend { 0.8 } else { 1.0 };
            let vol = if is_peak(h) && !weekend { config.peak_volatility } else { 1.0 };

            let n = config.fcr_n_level * profile * weekend_factor * (1.0 + 0.15 * level) * (vol * regime.fcr_n_noise * noise.sample(&mut rng)).exp();
            fcr_n.push(n.max(0.0));

            let dval = if zero_day {
                0.0
            } else {
                config.fcr_d_level * profile * (vol * 0.35 * noise.sample(&mut rng)).exp()
            };
            fcr_d.push(dval.max(0.0));

            let p_spike = if is_peak(h) && !weekend {
                regime.peak_spike_probability
            } else {
                regime.offpeak_spike_probability
            };
            let m = if rng.gen::<f64>() < p_spike {
                rng.gen_range(config.spike_min..=config.spike_max)
            } else {
                config.mfrr_level * (0.3 * noise.sample(&mut rng)).exp()
            };
            mfrr.push(m.max(0.0));
        }
    }

    let start = day_start(config.start);
    let mut book = PriceBook::new();
    book.insert(PriceSeries::hourly("FCR-N", start, &fcr_n)?);
    book.insert(PriceSeries::hourly("FCR-D", start, &fcr_d)?);
    book.insert(PriceSeries::hourly("mFRR", start, &mfrr)?);
    Ok(book)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_complete() {
        let cfg = SyntheticConfig {
            days: 40,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        for s in a.iter() {
            assert_eq!(s.len(), 40 * 24);
            assert!(s.gaps().is_empty());
        }
    }

    #[test]
    fn has_zero_days_and_spikes() {
        let book = generate(&SyntheticConfig::default()).unwrap();
        let d = book.get("FCR-D").unwrap();
        let zero_days = (0..282)
            .filter(|i| {
                let day = SyntheticConfig::default().start + Duration::days(*i);
                d.day_prices(day).unwrap().iter().all(|&p| p == 0.0)
            })
            .count();
        assert!(zero_days > 10);
        let spikes = book.get("mFRR").unwrap().records().iter().filter(|(_, p)| *p >= 20.0).count();
        assert!(spikes > 200);
    }
}
