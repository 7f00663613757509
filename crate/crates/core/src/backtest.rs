//! Walk-forward backtests.
//!
//! Each evaluated day is forecast from data strictly before its bidding
//! deadline: the earliest day-ahead deadline minus the simulated compute
//! time. The price series are truncated at that instant before any model
//! sees them. Calibrated thresholds come from a block of days whose prices
//! are all known before the first evaluated deadline, so they never depend
//! on evaluated prices either.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{argmax, compute_ua, search_thresholds, EvalHour, EvalSet, ThresholdTable, UaReport};
use crate::data::{build_features, build_training_window, cutoff, last_observed_day, raw_features, HOURS, LAG_DAYS};
use crate::error::{Error, Result};
use crate::forecaster::{predict_mc, train, MlpModel, TrainConfig, DEFAULT_MC_SAMPLES};
use crate::gsom::{train_gsom, GsomMap, GsomParams};
use crate::market::{day_start, MarketSet, MarketSpec, PriceBook};
use crate::strategies::{
    plan_interval, BiddingPlan, IntervalForecasts, PlanningContext, RescheduleConstraints, Scheme, Strategy,
    StrategyConfig,
};

/// Where the per-market uncertainty thresholds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ThresholdSource {
    /// Fixed threshold per market id.
    Fixed { values: BTreeMap<String, f64> },
    /// UA calibration over walk-forward forecasts of the `days` days that end
    /// before the first evaluated deadline.
    Calibrate { days: usize },
}

impl Default for ThresholdSource {
    fn default() -> Self {
        ThresholdSource::Calibrate { days: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub start: NaiveDate,
    pub days: usize,
    pub markets: Vec<MarketSpec>,
    /// Strategy numbers to run (1, 2, 3).
    pub strategies: Vec<u8>,
    /// Rescheduling schemes run under strategy 3.
    pub schemes: Vec<u8>,
    /// Capacity offered per epoch by strategies 1 and 2.
    pub capacity_mw: f64,
    pub reschedule: RescheduleConstraints,
    pub mc_samples: usize,
    pub window_days: usize,
    pub training: TrainConfig,
    pub gsom: GsomParams,
    pub use_gsom: bool,
    pub seed: u64,
    pub thresholds: ThresholdSource,
    pub strategy: StrategyConfig,
    /// Replace forecasts by the actual prices and all uncertainties by zero.
    pub perfect_foresight: bool,
    /// Set every threshold to 1 and every uncertainty to 0.
    pub no_uncertainty: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            start: NaiveDate::from_ymd_opt(2018, 5, 10).expect("valid date"),
            days: 30,
            markets: MarketSet::finnish().markets().to_vec(),
            strategies: vec![1, 2, 3],
            schemes: vec![1, 2, 3, 4],
            capacity_mw: 10.0,
            reschedule: RescheduleConstraints::ev_example(),
            mc_samples: DEFAULT_MC_SAMPLES,
            window_days: 180,
            training: TrainConfig::default(),
            gsom: GsomParams::default(),
            use_gsom: true,
            seed: 42,
            thresholds: ThresholdSource::default(),
            strategy: StrategyConfig::default(),
            perfect_foresight: false,
            no_uncertainty: false,
        }
    }
}

impl ExperimentConfig {
    pub fn market_set(&self) -> Result<MarketSet> {
        MarketSet::new(self.markets.clone())
    }

    /// Strategies in run order. The no-optimization baseline comes first
    /// whenever strategy 1 or 2 runs.
    pub fn strategy_list(&self) -> Result<Vec<Strategy>> {
        let mut out = Vec::new();
        if self.strategies.iter().any(|&s| s == 1 || s == 2) {
            out.push(Strategy::Baseline);
        }
        for &s in &self.strategies {
            match s {
                1 | 2 => out.push(Strategy::from_numbers(s, None)?),
                3 => {
                    for &k in &self.schemes {
                        out.push(Strategy::Reschedule(Scheme::from_number(k)?));
                    }
                }
                _ => return Err(Error::arg(format!("strategy must be 1-3, got {s}"))),
            }
        }
        out.dedup();
        if out.is_empty() {
            return Err(Error::arg("no strategy selected"));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.market_set()?;
        self.strategy.validate()?;
        self.strategy_list()?;
        if !(self.capacity_mw >= 0.0 && self.capacity_mw.is_finite()) {
            return Err(Error::arg("capacity must be finite and >= 0"));
        }
        if self.mc_samples < 2 {
            return Err(Error::arg("MC sample count must be >= 2"));
        }
        if self.window_days == 0 {
            return Err(Error::arg("training window must be >= 1 day"));
        }
        if self.strategies.contains(&3) {
            crate::strategies::n_min(&self.reschedule)?;
            if self.reschedule.epochs_per_hour != 1 || self.reschedule.e_latest >= HOURS {
                return Err(Error::arg("rescheduling window must lie inside the 24 hourly epochs of a day"));
            }
        }
        if let ThresholdSource::Fixed { values } = &self.thresholds {
            for m in &self.markets {
                match values.get(&m.id) {
                    Some(t) if (0.0..=1.0).contains(t) => {}
                    Some(t) => return Err(Error::arg(format!("threshold {t} for {} outside [0, 1]", m.id))),
                    None => return Err(Error::arg(format!("no fixed threshold for market {}", m.id))),
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(0x9e37_79b9_7f4a_7c15));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn day_number(day: NaiveDate) -> u64 {
    day.signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch")).num_days() as u64
}

/// Trained artifacts for one market and forecast day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayModel {
    pub mlp: MlpModel,
    pub gsom: Option<GsomMap>,
}

/// Forecast of one market for one day with both uncertainty measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketForecast {
    pub market_id: String,
    pub day: NaiveDate,
    pub p_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub nu_mc: Vec<f64>,
    pub nu_gsom: Option<Vec<f64>>,
}

impl MarketForecast {
    /// Uncertainty used by the gate: certain only if both measures are below
    /// the threshold, i.e. the larger of the two.
    pub fn uf(&self) -> Vec<f64> {
        match &self.nu_gsom {
            Some(g) => self.nu_mc.iter().zip(g).map(|(a, b)| a.max(*b)).collect(),
            None => self.nu_mc.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayForecast {
    pub day: NaiveDate,
    pub markets: Vec<MarketForecast>,
}

impl DayForecast {
    pub fn interval(&self) -> Result<IntervalForecasts> {
        let mut out = IntervalForecasts::new();
        for m in &self.markets {
            out.insert(m.market_id.clone(), m.p_hat.clone(), m.uf())?;
        }
        Ok(out)
    }

    pub fn get(&self, market: &str) -> Option<&MarketForecast> {
        self.markets.iter().find(|m| m.market_id == market)
    }
}

/// Writes forecasts as `market,day,hour,p_hat,u,nu,nu_gsom,uf`; a missing
/// GSOM measure is an empty cell.
pub fn write_day_forecasts<W: Write>(out: W, days: &[DayForecast]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["market", "day", "hour", "p_hat", "u", "nu", "nu_gsom", "uf"])?;
    for d in days {
        for m in &d.markets {
            let uf = m.uf();
            for h in 0..m.p_hat.len() {
                w.write_record([
                    m.market_id.clone(),
                    d.day.to_string(),
                    h.to_string(),
                    m.p_hat[h].to_string(),
                    m.u[h].to_string(),
                    m.nu_mc[h].to_string(),
                    m.nu_gsom.as_ref().map(|g| g[h].to_string()).unwrap_or_default(),
                    uf[h].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_day_forecasts<R: BufRead>(input: R) -> Result<Vec<DayForecast>> {
    let mut r = csv::Reader::from_reader(input);
    let mut days: BTreeMap<NaiveDate, Vec<MarketForecast>> = BTreeMap::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::Parse {
            path: "forecasts".into(),
            line: i + 2,
            message: format!("bad {what}"),
        };
        if row.len() != 8 {
            return Err(bad("column count"));
        }
        let day: NaiveDate = row[1].parse().map_err(|_| bad("day"))?;
        let hour: usize = row[2].parse().map_err(|_| bad("hour"))?;
        let f = |j: usize, what: &str| row[j].parse::<f64>().map_err(|_| bad(what));
        let list = days.entry(day).or_default();
        let idx = match list.iter().position(|m| m.market_id == row[0]) {
            Some(i) => i,
            None => {
                list.push(MarketForecast {
                    market_id: row[0].to_string(),
                    day,
                    p_hat: Vec::new(),
                    u: Vec::new(),
                    nu_mc: Vec::new(),
                    nu_gsom: (!row[6].is_empty()).then(Vec::new),
                });
                list.len() - 1
            }
        };
        let m = &mut list[idx];
        if hour != m.p_hat.len() {
            return Err(bad("hour order"));
        }
        m.p_hat.push(f(3, "p_hat")?);
        m.u.push(f(4, "u")?);
        m.nu_mc.push(f(5, "nu")?);
        if let Some(g) = m.nu_gsom.as_mut() {
            g.push(f(6, "nu_gsom")?);
        }
    }
    Ok(days
        .into_iter()
        .map(|(day, markets)| DayForecast { day, markets })
        .collect())
}

/// One settled bid in the report's log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidLogRow {
    pub date: NaiveDate,
    pub strategy: String,
    pub epoch: usize,
    pub timestamp: DateTime<Utc>,
    pub market: String,
    pub capacity: f64,
    pub requested_fee: f64,
    pub phase: String,
    pub accepted: bool,
    pub paid_price: f64,
    pub revenue: f64,
}

/// Selected market against the actual highest-priced market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfusion {
    pub markets: Vec<String>,
    /// `matrix[selected][actual]`.
    pub matrix: Vec<Vec<u64>>,
}

impl SelectionConfusion {
    fn new(markets: Vec<String>) -> Self {
        let n = markets.len();
        SelectionConfusion {
            markets,
            matrix: vec![vec![0; n]; n],
        }
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.markets.len()).map(|i| self.matrix[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| self.correct() as f64 / t as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub label: String,
    /// One entry per evaluated epoch, day-major.
    pub epoch_revenue: Vec<f64>,
    pub daily_revenue: Vec<f64>,
    pub cumulative_revenue: Vec<f64>,
    pub total_revenue: f64,
    pub selection: SelectionConfusion,
    pub bids: Vec<BidLogRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UaSummary {
    /// UA the thresholds reached on their calibration days.
    pub calibration: Option<f64>,
    /// UA of the evaluated days under the thresholds in use.
    pub evaluation: UaReport,
    pub counts: crate::calibration::ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config_hash: String,
    pub seed: u64,
    pub days: Vec<NaiveDate>,
    pub markets: Vec<String>,
    pub perfect_foresight: bool,
    pub no_uncertainty: bool,
    pub thresholds: ThresholdTable,
    pub strategies: Vec<StrategyReport>,
    pub ua: Option<UaSummary>,
}

impl BacktestReport {
    pub fn strategy(&self, strategy: Strategy) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A configured walk-forward experiment over one price book.
pub struct Backtest<'a> {
    config: ExperimentConfig,
    markets: MarketSet,
    prices: &'a PriceBook,
}

impl<'a> Backtest<'a> {
    pub fn new(config: ExperimentConfig, prices: &'a PriceBook) -> Result<Self> {
        config.validate()?;
        let markets = config.market_set()?;
        for m in markets.markets() {
            prices.require(&m.id)?;
        }
        Ok(Backtest {
            config,
            markets,
            prices,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn markets(&self) -> &MarketSet {
        &self.markets
    }

    /// Hours between the day's start and its forecast instant.
    pub fn offset_hours(&self) -> i64 {
        self.markets.earliest_day_ahead_offset_hours() + self.config.strategy.t_comp_hours
    }

    /// Instant at which the day's forecasts are made and its bids fixed.
    pub fn deadline(&self, day: NaiveDate) -> DateTime<Utc> {
        cutoff(day, self.offset_hours())
    }

    pub fn eval_days(&self) -> Vec<NaiveDate> {
        (0..self.config.days)
            .map(|i| self.config.start + Duration::days(i as i64))
            .collect()
    }

    /// Days whose forecasts calibrate the thresholds; empty unless calibrating.
    pub fn calibration_days(&self) -> Vec<NaiveDate> {
        match self.config.thresholds {
            ThresholdSource::Calibrate { days } if !self.uses_model_free_mode() => {
                let last = last_observed_day(self.config.start, self.offset_hours());
                (0..days as i64).rev().map(|i| last - Duration::days(i)).collect()
            }
            _ => Vec::new(),
        }
    }

    fn uses_model_free_mode(&self) -> bool {
        self.config.perfect_foresight
    }

    /// Checks that every price the run will read exists, before any training.
    pub fn preflight(&self) -> Result<()> {
        let days = self.eval_days();
        let mut missing = Vec::new();
        for m in self.markets.markets() {
            let s = self.prices.require(&m.id)?;
            for &d in &days {
                if s.day_prices(d).is_none() {
                    missing.push(format!("{} has missing hours on {d}", m.id));
                }
            }
            if self.uses_model_free_mode() {
                continue;
            }
            let mut forecast_days = self.calibration_days();
            forecast_days.extend(&days);
            let Some(first) = forecast_days.first().copied() else { continue };
            let window_start =
                last_observed_day(first, self.offset_hours()) - Duration::days(self.config.window_days as i64 - 1);
            let need_from = day_start(window_start - Duration::days(LAG_DAYS)) - Duration::hours(self.offset_hours());
            match s.first() {
                Some(t) if t <= need_from => {}
                _ => missing.push(format!(
                    "{} must start by {need_from} ({} training days plus {LAG_DAYS} lag days before {first})",
                    m.id, self.config.window_days
                )),
            }
            for &d in &forecast_days {
                if let Err(e) = raw_features(s, d, self.offset_hours()) {
                    missing.push(format!("{}: {e}", m.id));
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Coverage(missing.join("; ")))
        }
    }

    /// Trains the network (and map) of one market for one forecast day on
    /// data before that day's deadline.
    pub fn train_day(&self, market: &str, day: NaiveDate) -> Result<DayModel> {
        let offset = self.offset_hours();
        let series = self.prices.require(market)?.before(self.deadline(day));
        let window = build_training_window(&series, day, self.config.window_days, offset)?;
        let midx = self.markets.index_of(market).unwrap_or(0) as u64;
        let dn = day_number(day);
        let mlp = train(&window, &self.config.training, derive_seed(self.config.seed, &[1, midx, dn]))?;
        let gsom = if self.config.use_gsom {
            let vectors: Vec<Vec<f64>> = window.samples.iter().map(|s| s.features.values.clone()).collect();
            let prices: Vec<Vec<f64>> = window.samples.iter().map(|s| s.target.clone()).collect();
            Some(train_gsom(
                &vectors,
                &prices,
                &self.config.gsom,
                derive_seed(self.config.seed, &[2, midx, dn]),
            )?)
        } else {
            None
        };
        Ok(DayModel { mlp, gsom })
    }

    /// Forecasts one market for one day with trained artifacts.
    pub fn forecast_with(&self, model: &DayModel, market: &str, day: NaiveDate) -> Result<MarketForecast> {
        let series = self.prices.require(market)?.before(self.deadline(day));
        let x = build_features(&series, day, &model.mlp.stats, self.offset_hours())?;
        let midx = self.markets.index_of(market).unwrap_or(0) as u64;
        let mc = predict_mc(
            &model.mlp,
            &x,
            self.config.mc_samples,
            derive_seed(self.config.seed, &[3, midx, day_number(day)]),
        )?;
        let nu_gsom = match &model.gsom {
            Some(map) => Some(
                (0..HOURS)
                    .map(|h| map.uncertainty(&x.values, h).map(|g| g.nu))
                    .collect::<Result<Vec<f64>>>()?,
            ),
            None => None,
        };
        Ok(MarketForecast {
            market_id: market.to_string(),
            day,
            p_hat: mc.result.p_hat,
            u: mc.result.u,
            nu_mc: mc.result.nu,
            nu_gsom,
        })
    }

    /// Trains and forecasts every market for one day.
    pub fn forecast_day(&self, day: NaiveDate) -> Result<DayForecast> {
        if self.config.perfect_foresight {
            return self.actual_day(day);
        }
        let ids = self.markets.ids();
        let markets = std::thread::scope(|scope| {
            let handles: Vec<_> = ids
                .iter()
                .map(|m| {
                    scope.spawn(move || {
                        let model = self.train_day(m, day)?;
                        self.forecast_with(&model, m, day)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("forecast thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(DayForecast { day, markets })
    }

    /// Actual prices as forecasts with zero uncertainty.
    pub fn actual_day(&self, day: NaiveDate) -> Result<DayForecast> {
        let markets = self
            .markets
            .markets()
            .iter()
            .map(|m| {
                let p = self.actual_prices(&m.id, day)?;
                Ok(MarketForecast {
                    market_id: m.id.clone(),
                    day,
                    p_hat: p.clone(),
                    u: vec![0.0; HOURS],
                    nu_mc: vec![0.0; HOURS],
                    nu_gsom: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DayForecast { day, markets })
    }

    fn actual_prices(&self, market: &str, day: NaiveDate) -> Result<Vec<f64>> {
        let s = self.prices.require(market)?;
        s.day_prices(day).map(|p| p.to_vec()).ok_or_else(|| Error::DataGap {
            market: market.to_string(),
            epoch: day_start(day),
        })
    }

    /// Per-hour calibration records of forecast days against actual prices.
    pub fn eval_set(&self, forecasts: &[DayForecast]) -> Result<EvalSet> {
        let ids = self.markets.ids();
        let mut hours = Vec::new();
        for d in forecasts {
            let mut per = Vec::with_capacity(ids.len());
            for m in &ids {
                let f = d.get(m).ok_or_else(|| Error::MissingForecast {
                    market: m.clone(),
                    epoch: 0,
                })?;
                per.push((f.p_hat.clone(), f.uf(), self.actual_prices(m, d.day)?));
            }
            for h in 0..HOURS {
                hours.push(EvalHour {
                    p_hat: per.iter().map(|p| p.0[h]).collect(),
                    nu: per.iter().map(|p| p.1[h]).collect(),
                    actual: per.iter().map(|p| p.2[h]).collect(),
                });
            }
        }
        EvalSet::new(ids, hours)
    }

    /// Thresholds of the configured source; `calibration` holds the
    /// forecasts of [`Backtest::calibration_days`] when calibrating.
    pub fn thresholds(&self, calibration: &[DayForecast]) -> Result<ThresholdTable> {
        let ids = self.markets.ids();
        if self.config.no_uncertainty || self.config.perfect_foresight {
            return ThresholdTable::uniform(&ids, 1.0);
        }
        match &self.config.thresholds {
            ThresholdSource::Fixed { values } => {
                let entries: Vec<(String, f64)> = ids.iter().map(|m| (m.clone(), values[m])).collect();
                ThresholdTable::fixed(&entries)
            }
            ThresholdSource::Calibrate { .. } => search_thresholds(&self.eval_set(calibration)?),
        }
    }

    /// Unsettled plans of every configured strategy for one day.
    pub fn plan_day(&self, forecast: &DayForecast, thresholds: &ThresholdTable) -> Result<Vec<BiddingPlan>> {
        let mut intervals = forecast.interval()?;
        if self.config.no_uncertainty {
            intervals = intervals.without_uncertainty();
        }
        let ctx = PlanningContext {
            markets: &self.markets,
            forecasts: &intervals,
            thresholds,
            config: &self.config.strategy,
            interval_start: day_start(forecast.day),
            epochs: HOURS,
            epoch_hours: 1.0,
        };
        let capacity = vec![self.config.capacity_mw; HOURS];
        let scheme_seed = derive_seed(self.config.strategy.seed, &[4, day_number(forecast.day)]);
        self.config
            .strategy_list()?
            .into_iter()
            .map(|s| plan_interval(s, &ctx, &capacity, Some(&self.config.reschedule), scheme_seed))
            .collect()
    }

    /// Runs the whole experiment.
    pub fn run(&self) -> Result<BacktestReport> {
        self.preflight()?;
        let calibration = self
            .calibration_days()
            .into_iter()
            .map(|d| self.forecast_day(d))
            .collect::<Result<Vec<_>>>()?;
        let thresholds = self.thresholds(&calibration)?;
        let forecasts = self
            .eval_days()
            .into_iter()
            .map(|d| self.forecast_day(d))
            .collect::<Result<Vec<_>>>()?;
        self.run_with(&forecasts, thresholds)
    }

    /// Plans, settles and reports given forecasts of every evaluated day.
    pub fn run_with(&self, forecasts: &[DayForecast], thresholds: ThresholdTable) -> Result<BacktestReport> {
        let days = self.eval_days();
        if forecasts.iter().map(|f| f.day).ne(days.iter().copied()) {
            return Err(Error::arg("forecasts must cover exactly the evaluated days, in order"));
        }
        let ids = self.markets.ids();
        let strategies = self.config.strategy_list()?;
        let mut reports: Vec<StrategyReport> = strategies
            .iter()
            .map(|&s| StrategyReport {
                strategy: s,
                label: s.label(),
                epoch_revenue: Vec::new(),
                daily_revenue: Vec::new(),
                cumulative_revenue: Vec::new(),
                total_revenue: 0.0,
                selection: SelectionConfusion::new(ids.clone()),
                bids: Vec::new(),
            })
            .collect();

        for forecast in forecasts {
            let actual: Vec<Vec<f64>> = ids
                .iter()
                .map(|m| self.actual_prices(m, forecast.day))
                .collect::<Result<_>>()?;
            let mut plans = self.plan_day(forecast, &thresholds)?;
            for (plan, report) in plans.iter_mut().zip(reports.iter_mut()) {
                plan.settle(&self.markets, self.prices, self.config.strategy.mpp)?;
                let epoch_rev = plan.epoch_revenue();
                report.daily_revenue.push(epoch_rev.iter().sum());
                report.epoch_revenue.extend(epoch_rev);
                for e in 0..HOURS {
                    if let Some(sel) = plan.selected_market(e, &self.markets) {
                        let s = self.markets.index_of(sel).expect("known market");
                        let best = argmax(&actual.iter().map(|a| a[e]).collect::<Vec<_>>());
                        report.selection.matrix[s][best] += 1;
                    }
                }
                for entry in &plan.entries {
                    let o = entry.outcome.expect("settled");
                    report.bids.push(BidLogRow {
                        date: forecast.day,
                        strategy: report.label.clone(),
                        epoch: entry.epoch,
                        timestamp: entry.timestamp,
                        market: entry.market_id.clone(),
                        capacity: entry.capacity,
                        requested_fee: entry.requested_fee,
                        phase: entry.phase.as_str().to_string(),
                        accepted: o.accepted,
                        paid_price: o.paid_price,
                        revenue: o.revenue,
                    });
                }
            }
        }
        for r in &mut reports {
            let mut acc = 0.0;
            r.cumulative_revenue = r
                .daily_revenue
                .iter()
                .map(|d| {
                    acc += d;
                    acc
                })
                .collect();
            r.total_revenue = r.epoch_revenue.iter().sum();
        }

        let ua = if self.config.perfect_foresight {
            None
        } else {
            let mut eval = self.eval_set(forecasts)?;
            if self.config.no_uncertainty {
                for h in &mut eval.hours {
                    h.nu.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let (counts, _) = eval.counts(&thresholds.thresholds())?;
            Some(UaSummary {
                calibration: thresholds.ua,
                evaluation: compute_ua(&counts)?,
                counts,
            })
        };

        Ok(BacktestReport {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            days,
            markets: ids,
            perfect_foresight: self.config.perfect_foresight,
            no_uncertainty: self.config.no_uncertainty,
            thresholds,
            strategies: reports,
            ua,
        })
    }
}

pub fn run_experiment(config: ExperimentConfig, prices: &PriceBook) -> Result<BacktestReport> {
    Backtest::new(config, prices)?.run()
}
