//! Bidding strategies for one bidding interval.
//!
//! All strategies are two-phase. The day-ahead round places at most one bid
//! per epoch on a day-ahead market; after it clears, every epoch's remaining
//! capacity (`C[e]` minus accepted day-ahead capacity) is offered on the
//! epoch-ahead market. Bids always request the minimum profitable price.
//!
//! - Strategy 1 picks, per epoch, the certain day-ahead market with the
//!   highest forecast.
//! - Strategy 2 does the same but leaves the epoch to the epoch-ahead market
//!   when that market's forecast is higher.
//! - Strategy 3 first reschedules a flexible load (`E` energy at up to
//!   `P_max`) with one of four schemes, then bids the scheduled power on the
//!   best certain market of each epoch.
//!
//! An uncertainty passes the gate only when it is strictly below the market's
//! threshold.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{classify_certainty, ThresholdTable};
use crate::error::{Error, Result};
use crate::market::{Bid, MarketKind, MarketSet, PriceBook};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Minimum profitable price, used as the requested fee of every bid.
    pub mpp: f64,
    /// Simulated forecast lead time before the earliest day-ahead deadline.
    pub t_comp_hours: i64,
    /// Day-ahead market for rescheduled capacity when no market is certain.
    /// `None` sends that capacity to the epoch-ahead market.
    pub default_market: Option<String>,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            mpp: 0.0,
            t_comp_hours: 1,
            default_market: None,
            seed: 0,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mpp >= 0.0 && self.mpp.is_finite()) {
            return Err(Error::arg("mpp must be finite and >= 0"));
        }
        if self.t_comp_hours < 0 {
            return Err(Error::arg("t_comp must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescheduleConstraints {
    /// Total energy to deliver inside the window (kWh).
    pub energy: f64,
    /// Maximum power of the resource (kW).
    pub p_max: f64,
    pub e_earliest: usize,
    pub e_latest: usize,
    pub epochs_per_hour: usize,
}

impl Default for RescheduleConstraints {
    fn default() -> Self {
        Self::ev_example()
    }
}

impl RescheduleConstraints {
    /// The overnight EV example: 44 kWh at up to 22 kW between midnight and 8 AM.
    pub fn ev_example() -> Self {
        RescheduleConstraints {
            energy: 44.0,
            p_max: 22.0,
            e_earliest: 0,
            e_latest: 7,
            epochs_per_hour: 1,
        }
    }

    pub fn e_total(&self) -> usize {
        self.e_latest + 1 - self.e_earliest
    }

    pub fn epoch_hours(&self) -> f64 {
        1.0 / self.epochs_per_hour as f64
    }

    fn validate_shape(&self) -> Result<()> {
        if !(self.energy > 0.0 && self.energy.is_finite()) {
            return Err(Error::arg("reschedulable energy must be > 0"));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::arg("P_max must be > 0"));
        }
        if self.e_earliest > self.e_latest {
            return Err(Error::arg("e_earliest must not exceed e_latest"));
        }
        if self.epochs_per_hour == 0 {
            return Err(Error::arg("epochs per hour must be >= 1"));
        }
        Ok(())
    }
}

/// Minimum number of epochs needed to move `E` at `P_max`: `ceil(E / P_max) * e_h`.
pub fn n_min(c: &RescheduleConstraints) -> Result<usize> {
    c.validate_shape()?;
    let ratio = c.energy / c.p_max;
    // absorb representation error such as 1.1 / 0.1 = 11.000000000000002
    let hours = (ratio - 1e-9 * ratio.max(1.0)).ceil().max(1.0) as usize;
    let n = hours * c.epochs_per_hour;
    if n > c.e_total() {
        return Err(Error::Infeasible {
            n_min: n,
            e_total: c.e_total(),
        });
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Constant power over the whole window.
    Constant,
    /// Full power from the earliest epoch.
    Earliest,
    /// Full power on randomly chosen epochs.
    Random,
    /// Full power on the epochs with the highest certain forecasts.
    Forecast,
}

impl Scheme {
    pub fn number(self) -> u8 {
        match self {
            Scheme::Constant => 1,
            Scheme::Earliest => 2,
            Scheme::Random => 3,
            Scheme::Forecast => 4,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Scheme::Constant),
            2 => Ok(Scheme::Earliest),
            3 => Ok(Scheme::Random),
            4 => Ok(Scheme::Forecast),
            _ => Err(Error::arg(format!("scheme must be 1-4, got {n}"))),
        }
    }

    pub fn all() -> [Scheme; 4] {
        [Scheme::Constant, Scheme::Earliest, Scheme::Random, Scheme::Forecast]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// Raw day-ahead argmax without gating or the epoch-ahead comparison.
    Baseline,
    HighestForecast,
    EpochAheadAware,
    Reschedule(Scheme),
}

impl Strategy {
    pub fn number(self) -> u8 {
        match self {
            Strategy::Baseline => 0,
            Strategy::HighestForecast => 1,
            Strategy::EpochAheadAware => 2,
            Strategy::Reschedule(_) => 3,
        }
    }

    pub fn scheme(self) -> Option<Scheme> {
        match self {
            Strategy::Reschedule(s) => Some(s),
            _ => None,
        }
    }

    pub fn from_numbers(strategy: u8, scheme: Option<u8>) -> Result<Self> {
        match strategy {
            0 => Ok(Strategy::Baseline),
            1 => Ok(Strategy::HighestForecast),
            2 => Ok(Strategy::EpochAheadAware),
            3 => Ok(Strategy::Reschedule(Scheme::from_number(scheme.unwrap_or(4))?)),
            _ => Err(Error::arg(format!("strategy must be 1-3, got {strategy}"))),
        }
    }

    pub fn label(self) -> String {
        match self {
            Strategy::Reschedule(s) => format!("strategy3-scheme{}", s.number()),
            other => format!("strategy{}", other.number()),
        }
    }
}

/// Forecast and normalized uncertainty per epoch for each market of one interval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecasts {
    by_market: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl IntervalForecasts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, market: impl Into<String>, f_fee: Vec<f64>, uf_fee: Vec<f64>) -> Result<()> {
        if f_fee.len() != uf_fee.len() {
            return Err(Error::arg("forecast and uncertainty lengths differ"));
        }
        self.by_market.insert(market.into(), (f_fee, uf_fee));
        Ok(())
    }

    pub fn get(&self, market: &str, epoch: usize) -> Result<(f64, f64)> {
        self.by_market
            .get(market)
            .and_then(|(f, u)| Some((*f.get(epoch)?, *u.get(epoch)?)))
            .ok_or_else(|| Error::MissingForecast {
                market: market.to_string(),
                epoch,
            })
    }

    pub fn markets(&self) -> impl Iterator<Item = &str> {
        self.by_market.keys().map(String::as_str)
    }

    /// Copy with every uncertainty set to zero.
    pub fn without_uncertainty(&self) -> Self {
        IntervalForecasts {
            by_market: self
                .by_market
                .iter()
                .map(|(m, (f, u))| (m.clone(), (f.clone(), vec![0.0; u.len()])))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    DayAheadRound,
    EpochAheadFallback,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::DayAheadRound => "day-ahead",
            Phase::EpochAheadFallback => "epoch-ahead-fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub accepted: bool,
    pub paid_price: f64,
    pub revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub epoch: usize,
    pub timestamp: DateTime<Utc>,
    pub market_id: String,
    pub capacity: f64,
    pub requested_fee: f64,
    pub phase: Phase,
    pub outcome: Option<Outcome>,
}

/// Bids of one strategy for one interval, annotated with outcomes once settled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiddingPlan {
    pub strategy: Strategy,
    pub interval_start: DateTime<Utc>,
    pub epoch_hours: f64,
    /// Capacity `C[e]` the plan intends to trade in each epoch.
    pub capacity: Vec<f64>,
    pub entries: Vec<PlanEntry>,
}

impl BiddingPlan {
    fn new(strategy: Strategy, interval_start: DateTime<Utc>, epoch_hours: f64, capacity: Vec<f64>) -> Self {
        BiddingPlan {
            strategy,
            interval_start,
            epoch_hours,
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn timestamp(&self, epoch: usize) -> DateTime<Utc> {
        self.interval_start + Duration::seconds((epoch as f64 * self.epoch_hours * 3600.0).round() as i64)
    }

    fn push(&mut self, epoch: usize, market: &str, capacity: f64, fee: f64, phase: Phase) {
        self.entries.push(PlanEntry {
            epoch,
            timestamp: self.timestamp(epoch),
            market_id: market.to_string(),
            capacity,
            requested_fee: fee,
            phase,
            outcome: None,
        });
    }

    pub fn day_ahead_entries(&self) -> impl Iterator<Item = &PlanEntry> {
        self.entries.iter().filter(|e| e.phase == Phase::DayAheadRound)
    }

    pub fn fallback_entries(&self) -> impl Iterator<Item = &PlanEntry> {
        self.entries.iter().filter(|e| e.phase == Phase::EpochAheadFallback)
    }

    /// Market chosen for an epoch at planning time: its day-ahead bid, or the
    /// epoch-ahead market when capacity was left for the fallback.
    pub fn selected_market<'a>(&'a self, epoch: usize, markets: &'a MarketSet) -> Option<&'a str> {
        if let Some(e) = self.day_ahead_entries().find(|e| e.epoch == epoch) {
            return Some(&e.market_id);
        }
        (self.capacity.get(epoch).copied().unwrap_or(0.0) > 0.0).then(|| markets.epoch_ahead().id.as_str())
    }

    pub fn total_revenue(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.outcome.map(|o| o.revenue))
            .sum()
    }

    pub fn epoch_revenue(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.capacity.len()];
        for e in &self.entries {
            if let Some(o) = e.outcome {
                out[e.epoch] += o.revenue;
            }
        }
        out
    }

    pub fn is_settled(&self) -> bool {
        self.entries.iter().all(|e| e.outcome.is_some())
    }

    /// Clears the day-ahead round, offers the remaining capacity of every
    /// epoch on the epoch-ahead market at `mpp`, clears that too, and
    /// annotates all entries.
    pub fn settle(&mut self, markets: &MarketSet, prices: &PriceBook, mpp: f64) -> Result<()> {
        if self.fallback_entries().next().is_some() || !self.day_ahead_entries().all(|e| e.outcome.is_none()) {
            return Err(Error::State("plan has already been settled".into()));
        }
        let bids = to_bids(self.day_ahead_entries())?;
        let results = prices.clear(&bids)?;
        let mut accepted = vec![0.0; self.capacity.len()];
        let mut iter = results.iter();
        for entry in self.entries.iter_mut().filter(|e| e.phase == Phase::DayAheadRound) {
            let r = iter.next().expect("one result per bid");
            entry.outcome = Some(outcome(entry.capacity, r.accepted, r.clearing_price, self.epoch_hours));
            if r.accepted {
                accepted[entry.epoch] += entry.capacity;
            }
        }

        let ea = markets.epoch_ahead().id.clone();
        for e in 0..self.capacity.len() {
            let rest = self.capacity[e] - accepted[e];
            if rest > 1e-12 {
                self.push(e, &ea, rest, mpp, Phase::EpochAheadFallback);
            }
        }
        let bids = to_bids(self.fallback_entries())?;
        let results = prices.clear(&bids)?;
        let mut iter = results.iter();
        let hours = self.epoch_hours;
        for entry in self.entries.iter_mut().filter(|e| e.phase == Phase::EpochAheadFallback) {
            let r = iter.next().expect("one result per bid");
            entry.outcome = Some(outcome(entry.capacity, r.accepted, r.clearing_price, hours));
        }
        Ok(())
    }
}

fn outcome(capacity: f64, accepted: bool, price: f64, hours: f64) -> Outcome {
    Outcome {
        accepted,
        paid_price: if accepted { price } else { 0.0 },
        revenue: if accepted { capacity * price * hours } else { 0.0 },
    }
}

fn to_bids<'a>(entries: impl Iterator<Item = &'a PlanEntry>) -> Result<Vec<Bid>> {
    entries
        .map(|e| Bid::new(e.market_id.clone(), e.timestamp, e.capacity, e.requested_fee))
        .collect()
}

/// What a strategy needs to know about one interval.
pub struct PlanningContext<'a> {
    pub markets: &'a MarketSet,
    pub forecasts: &'a IntervalForecasts,
    pub thresholds: &'a ThresholdTable,
    pub config: &'a StrategyConfig,
    pub interval_start: DateTime<Utc>,
    pub epochs: usize,
    pub epoch_hours: f64,
}

impl PlanningContext<'_> {
    fn certain(&self, market: &str, uf: f64) -> Result<bool> {
        let th = self
            .thresholds
            .threshold(market)
            .ok_or_else(|| Error::arg(format!("no uncertainty threshold for market {market}")))?;
        Ok(classify_certainty(uf, th))
    }

    /// Certain market with the highest forecast among `candidates` (configured
    /// order breaks ties), with its forecast.
    fn best_certain<'m>(&self, candidates: impl Iterator<Item = &'m str>, epoch: usize) -> Result<Option<(&'m str, f64)>> {
        let mut best: Option<(&str, f64)> = None;
        for m in candidates {
            let (f, uf) = self.forecasts.get(m, epoch)?;
            if !self.certain(m, uf)? {
                continue;
            }
            if best.map_or(true, |(_, bf)| f > bf) {
                best = Some((m, f));
            }
        }
        Ok(best)
    }

    fn day_ahead_ids(&self) -> impl Iterator<Item = &str> {
        self.markets.day_ahead().map(|m| m.id.as_str())
    }
}

fn check_capacity(capacity: &[f64], epochs: usize) -> Result<()> {
    if capacity.len() != epochs {
        return Err(Error::arg(format!("expected {epochs} capacities, got {}", capacity.len())));
    }
    if capacity.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(Error::arg("capacities must be finite and >= 0"));
    }
    Ok(())
}

/// Raw argmax over day-ahead forecasts, ignoring uncertainty and the epoch-ahead market.
pub fn baseline(ctx: &PlanningContext, capacity: &[f64]) -> Result<BiddingPlan> {
    check_capacity(capacity, ctx.epochs)?;
    let mut plan = BiddingPlan::new(Strategy::Baseline, ctx.interval_start, ctx.epoch_hours, capacity.to_vec());
    for e in 0..ctx.epochs {
        let mut best: Option<(&str, f64)> = None;
        for m in ctx.day_ahead_ids() {
            let (f, _) = ctx.forecasts.get(m, e)?;
            if best.map_or(true, |(_, bf)| f > bf) {
                best = Some((m, f));
            }
        }
        if let (Some((m, _)), true) = (best, capacity[e] > 0.0) {
            plan.push(e, m, capacity[e], ctx.config.mpp, Phase::DayAheadRound);
        }
    }
    Ok(plan)
}

/// Strategy 1: highest certain day-ahead forecast per epoch.
pub fn strategy1(ctx: &PlanningContext, capacity: &[f64]) -> Result<BiddingPlan> {
    check_capacity(capacity, ctx.epochs)?;
    let mut plan = BiddingPlan::new(Strategy::HighestForecast, ctx.interval_start, ctx.epoch_hours, capacity.to_vec());
    for e in 0..ctx.epochs {
        if let Some((m, _)) = ctx.best_certain(ctx.day_ahead_ids(), e)? {
            if capacity[e] > 0.0 {
                plan.push(e, m, capacity[e], ctx.config.mpp, Phase::DayAheadRound);
            }
        }
    }
    Ok(plan)
}

/// Strategy 2: as strategy 1, but an epoch whose epoch-ahead forecast beats
/// the best certain day-ahead forecast is left to the epoch-ahead market.
pub fn strategy2(ctx: &PlanningContext, capacity: &[f64]) -> Result<BiddingPlan> {
    check_capacity(capacity, ctx.epochs)?;
    let ea = ctx.markets.epoch_ahead().id.as_str();
    let mut plan = BiddingPlan::new(Strategy::EpochAheadAware, ctx.interval_start, ctx.epoch_hours, capacity.to_vec());
    for e in 0..ctx.epochs {
        let Some((m, f)) = ctx.best_certain(ctx.day_ahead_ids(), e)? else {
            continue;
        };
        let (f_ea, _) = ctx.forecasts.get(ea, e)?;
        if f_ea > f {
            continue;
        }
        if capacity[e] > 0.0 {
            plan.push(e, m, capacity[e], ctx.config.mpp, Phase::DayAheadRound);
        }
    }
    Ok(plan)
}

/// `C[e]` of a rescheduling scheme over the whole interval. Scheme 4 needs
/// the per-epoch best-market forecasts; `seed` drives scheme 3.
pub fn schedule(
    scheme: Scheme,
    constraints: &RescheduleConstraints,
    epochs: usize,
    best_forecast: &[Option<f64>],
    seed: u64,
) -> Result<Vec<f64>> {
    let n = n_min(constraints)?;
    if constraints.e_latest >= epochs {
        return Err(Error::arg(format!(
            "e_latest {} outside the {epochs}-epoch interval",
            constraints.e_latest
        )));
    }
    let range = constraints.e_earliest..=constraints.e_latest;
    let mut c = vec![0.0; epochs];
    match scheme {
        Scheme::Constant => {
            let power = constraints.energy * constraints.epochs_per_hour as f64 / constraints.e_total() as f64;
            for e in range {
                c[e] = power;
            }
        }
        Scheme::Earliest => {
            for e in constraints.e_earliest..constraints.e_earliest + n {
                c[e] = constraints.p_max;
            }
        }
        Scheme::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in index::sample(&mut rng, constraints.e_total(), n) {
                c[constraints.e_earliest + i] = constraints.p_max;
            }
        }
        Scheme::Forecast => {
            if best_forecast.len() != epochs {
                return Err(Error::arg("scheme 4 needs one best-market forecast per epoch"));
            }
            let mut ranked: Vec<usize> = range.collect();
            // certain epochs by descending forecast, then uncertain ones; lower index wins ties
            ranked.sort_by(|&a, &b| match (best_forecast[a], best_forecast[b]) {
                (Some(fa), Some(fb)) => fb.total_cmp(&fa).then(a.cmp(&b)),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => a.cmp(&b),
            });
            for &e in ranked.iter().take(n) {
                c[e] = constraints.p_max;
            }
        }
    }
    Ok(c)
}

/// Best certain market over all markets, per epoch.
pub fn best_markets<'a>(ctx: &'a PlanningContext) -> Result<Vec<Option<(&'a str, f64)>>> {
    let all = || ctx.markets.markets().iter().map(|m| m.id.as_str());
    (0..ctx.epochs).map(|e| ctx.best_certain(all(), e)).collect()
}

/// Strategy 3: reschedule with `scheme`, then bid each scheduled epoch's
/// power on its best certain market. Capacity whose best market is the
/// epoch-ahead market, or that has no certain market and no configured
/// default, goes to the epoch-ahead fallback.
pub fn strategy3(ctx: &PlanningContext, constraints: &RescheduleConstraints, scheme: Scheme, seed: u64) -> Result<BiddingPlan> {
    let best = best_markets(ctx)?;
    let best_forecast: Vec<Option<f64>> = best.iter().map(|b| b.map(|(_, f)| f)).collect();
    let capacity = schedule(scheme, constraints, ctx.epochs, &best_forecast, seed)?;

    if let Some(d) = &ctx.config.default_market {
        match ctx.markets.get(d) {
            Some(m) if m.kind == MarketKind::DayAhead => {}
            _ => return Err(Error::arg(format!("default market {d} is not a day-ahead market"))),
        }
    }

    let mut plan = BiddingPlan::new(Strategy::Reschedule(scheme), ctx.interval_start, ctx.epoch_hours, capacity.clone());
    for (e, &cap) in capacity.iter().enumerate() {
        if cap <= 0.0 {
            continue;
        }
        let target = match best[e] {
            Some((m, _)) => Some(m),
            None => ctx.config.default_market.as_deref(),
        };
        if let Some(m) = target {
            if ctx.markets.get(m).map(|s| s.kind) == Some(MarketKind::DayAhead) {
                plan.push(e, m, cap, ctx.config.mpp, Phase::DayAheadRound);
            }
        }
    }
    Ok(plan)
}

/// Dispatches to the planning function of `strategy`. `capacity` is ignored
/// by strategy 3, which derives it from `constraints`.
pub fn plan_interval(
    strategy: Strategy,
    ctx: &PlanningContext,
    capacity: &[f64],
    constraints: Option<&RescheduleConstraints>,
    seed: u64,
) -> Result<BiddingPlan> {
    match strategy {
        Strategy::Baseline => baseline(ctx, capacity),
        Strategy::HighestForecast => strategy1(ctx, capacity),
        Strategy::EpochAheadAware => strategy2(ctx, capacity),
        Strategy::Reschedule(s) => {
            let c = constraints.ok_or_else(|| Error::arg("strategy 3 needs rescheduling constraints"))?;
            strategy3(ctx, c, s, seed)
        }
    }
}
