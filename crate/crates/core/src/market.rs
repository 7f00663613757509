//! Generalised frequency-reserve market: market descriptions, price histories,
//! bids, and replay clearing against historical prices.
//!
//! Auctions are uniform-price. A bid is accepted when its requested fee does
//! not exceed the historical clearing price of its epoch and that price is
//! positive (a zero price means nothing was procured). Every accepted bid is
//! paid the clearing price, never its own requested fee.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarketKind {
    DayAhead,
    EpochAhead,
}

/// Static description of one reserve market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub id: String,
    pub kind: MarketKind,
    #[serde(default = "default_epoch_hours")]
    pub epoch_duration_hours: f64,
    pub epochs_per_interval: usize,
    /// Hours between the bid deadline and the start of the bidding interval.
    #[serde(default)]
    pub bid_deadline_offset_hours: i64,
    #[serde(default)]
    pub symmetric: bool,
    /// Carried as a flag only; block-wise peak-hour products are not modelled.
    #[serde(default)]
    pub peak_hours_only: bool,
}

fn default_epoch_hours() -> f64 {
    1.0
}

impl MarketSpec {
    pub fn day_ahead(id: &str) -> Self {
        MarketSpec {
            id: id.to_string(),
            kind: MarketKind::DayAhead,
            epoch_duration_hours: 1.0,
            epochs_per_interval: 24,
            bid_deadline_offset_hours: 6,
            symmetric: true,
            peak_hours_only: false,
        }
    }

    pub fn epoch_ahead(id: &str) -> Self {
        MarketSpec {
            id: id.to_string(),
            kind: MarketKind::EpochAhead,
            epoch_duration_hours: 1.0,
            epochs_per_interval: 1,
            bid_deadline_offset_hours: 1,
            symmetric: false,
            peak_hours_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| {
            Err(Error::Validation {
                market: self.id.clone(),
                message: message.to_string(),
            })
        };
        if self.id.trim().is_empty() {
            return fail("empty market id");
        }
        if self.epochs_per_interval < 1 {
            return fail("epochs_per_interval must be at least 1");
        }
        if !(self.epoch_duration_hours > 0.0 && self.epoch_duration_hours.is_finite()) {
            return fail("epoch_duration_hours must be positive");
        }
        if self.kind == MarketKind::EpochAhead && self.epochs_per_interval != 1 {
            return fail("an epoch-ahead market has exactly one epoch per interval");
        }
        if self.bid_deadline_offset_hours < 0 {
            return fail("bid_deadline_offset_hours must be non-negative");
        }
        Ok(())
    }
}

/// An ordered set of markets. The order doubles as the tie-break order used
/// wherever two markets have equal prices or forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSet {
    markets: Vec<MarketSpec>,
}

impl MarketSet {
    pub fn new(markets: Vec<MarketSpec>) -> Result<Self> {
        for m in &markets {
            m.validate()?;
        }
        for (i, m) in markets.iter().enumerate() {
            if markets[..i].iter().any(|o| o.id == m.id) {
                return Err(Error::Validation {
                    market: m.id.clone(),
                    message: "duplicate market id".into(),
                });
            }
        }
        let epoch_ahead = markets
            .iter()
            .filter(|m| m.kind == MarketKind::EpochAhead)
            .count();
        if epoch_ahead != 1 {
            return Err(Error::Validation {
                market: "*".into(),
                message: format!("exactly one epoch-ahead market is required, found {epoch_ahead}"),
            });
        }
        if markets.iter().all(|m| m.kind != MarketKind::DayAhead) {
            return Err(Error::Validation {
                market: "*".into(),
                message: "at least one day-ahead market is required".into(),
            });
        }
        Ok(MarketSet { markets })
    }

    /// FCR-N, FCR-D (day-ahead) and mFRR (hour-ahead).
    pub fn finnish() -> Self {
        MarketSet::new(vec![
            MarketSpec::day_ahead("FCR-N"),
            MarketSpec::day_ahead("FCR-D"),
            MarketSpec::epoch_ahead("mFRR"),
        ])
        .expect("static market set is valid")
    }

    pub fn markets(&self) -> &[MarketSpec] {
        &self.markets
    }

    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.markets.iter().map(|m| m.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&MarketSpec> {
        self.markets.iter().find(|m| m.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.markets.iter().position(|m| m.id == id)
    }

    pub fn day_ahead(&self) -> impl Iterator<Item = &MarketSpec> {
        self.markets.iter().filter(|m| m.kind == MarketKind::DayAhead)
    }

    pub fn epoch_ahead(&self) -> &MarketSpec {
        self.markets
            .iter()
            .find(|m| m.kind == MarketKind::EpochAhead)
            .expect("validated on construction")
    }

    /// Keep only the listed markets, preserving the configured order.
    pub fn restrict(&self, ids: &[String]) -> Result<Self> {
        for id in ids {
            if self.get(id).is_none() {
                return Err(Error::arg(format!("unknown market {id}")));
            }
        }
        MarketSet::new(
            self.markets
                .iter()
                .filter(|m| ids.contains(&m.id))
                .cloned()
                .collect(),
        )
    }

    /// Largest day-ahead deadline offset, i.e. the earliest deadline of the day.
    pub fn earliest_day_ahead_offset_hours(&self) -> i64 {
        self.day_ahead()
            .map(|m| m.bid_deadline_offset_hours)
            .max()
            .unwrap_or(0)
    }
}

/// Hourly clearing-price history of one market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    market_id: String,
    records: Vec<(DateTime<Utc>, f64)>,
}

impl PriceSeries {
    /// Builds a series, rejecting unsorted, duplicate, misaligned, negative or
    /// non-finite records.
    pub fn new(market_id: impl Into<String>, records: Vec<(DateTime<Utc>, f64)>) -> Result<Self> {
        let market_id = market_id.into();
        let fail = |message: String| Error::Validation {
            market: market_id.clone(),
            message,
        };
        for (i, (ts, price)) in records.iter().enumerate() {
            if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
                return Err(fail(format!("timestamp {ts} is not hour-aligned")));
            }
            if !price.is_finite() || *price < 0.0 {
                return Err(fail(format!("price {price} at {ts} must be finite and >= 0")));
            }
            if i > 0 {
                let prev = records[i - 1].0;
                if *ts == prev {
                    return Err(fail(format!("duplicate timestamp {ts}")));
                }
                if *ts < prev {
                    return Err(fail(format!("timestamp {ts} follows later timestamp {prev}")));
                }
            }
        }
        Ok(PriceSeries { market_id, records })
    }

    /// Consecutive hourly prices starting at `start`.
    pub fn hourly(market_id: impl Into<String>, start: DateTime<Utc>, prices: &[f64]) -> Result<Self> {
        let records = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| (start + Duration::hours(i as i64), p))
            .collect();
        PriceSeries::new(market_id, records)
    }

    pub fn market_id(&self) -> &str {
        &self.market_id
    }

    pub fn records(&self) -> &[(DateTime<Utc>, f64)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<DateTime<Utc>> {
        self.records.first().map(|r| r.0)
    }

    pub fn last(&self) -> Option<DateTime<Utc>> {
        self.records.last().map(|r| r.0)
    }

    pub fn price_at(&self, ts: DateTime<Utc>) -> Option<f64> {
        self.records
            .binary_search_by_key(&ts, |r| r.0)
            .ok()
            .map(|i| self.records[i].1)
    }

    /// The 24 prices of a UTC day, or `None` if any hour is missing.
    pub fn day_prices(&self, day: NaiveDate) -> Option<[f64; 24]> {
        let start = day_start(day);
        let mut out = [0.0; 24];
        for (h, slot) in out.iter_mut().enumerate() {
            *slot = self.price_at(start + Duration::hours(h as i64))?;
        }
        Some(out)
    }

    /// Hourly timestamps between the first and last record that have no price.
    pub fn gaps(&self) -> Vec<DateTime<Utc>> {
        let mut gaps = Vec::new();
        for w in self.records.windows(2) {
            let mut t = w[0].0 + Duration::hours(1);
            while t < w[1].0 {
                gaps.push(t);
                t += Duration::hours(1);
            }
        }
        gaps
    }

    /// Replace the price at `ts`. Used by perturbation tests and what-if runs.
    pub fn set_price(&mut self, ts: DateTime<Utc>, price: f64) -> Result<()> {
        if !price.is_finite() || price < 0.0 {
            return Err(Error::arg(format!("price {price} must be finite and >= 0")));
        }
        match self.records.binary_search_by_key(&ts, |r| r.0) {
            Ok(i) => {
                self.records[i].1 = price;
                Ok(())
            }
            Err(_) => Err(Error::DataGap {
                market: self.market_id.clone(),
                epoch: ts,
            }),
        }
    }

    /// Copy with every price multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        PriceSeries::new(
            self.market_id.clone(),
            self.records.iter().map(|&(t, p)| (t, p * k)).collect(),
        )
    }

    /// Records strictly before `ts`.
    pub fn before(&self, ts: DateTime<Utc>) -> PriceSeries {
        let end = self.records.partition_point(|(t, _)| *t < ts);
        PriceSeries {
            market_id: self.market_id.clone(),
            records: self.records[..end].to_vec(),
        }
    }
}

pub fn day_start(day: NaiveDate) -> DateTime<Utc> {
    day.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc()
}

/// Price histories keyed by market id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceBook {
    series: BTreeMap<String, PriceSeries>,
}

impl PriceBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, series: PriceSeries) {
        self.series.insert(series.market_id().to_string(), series);
    }

    pub fn get(&self, market: &str) -> Option<&PriceSeries> {
        self.series.get(market)
    }

    pub fn get_mut(&mut self, market: &str) -> Option<&mut PriceSeries> {
        self.series.get_mut(market)
    }

    pub fn require(&self, market: &str) -> Result<&PriceSeries> {
        self.get(market)
            .ok_or_else(|| Error::arg(format!("no price series for market {market}")))
    }

    pub fn price(&self, market: &str, ts: DateTime<Utc>) -> Result<f64> {
        self.require(market)?
            .price_at(ts)
            .ok_or_else(|| Error::DataGap {
                market: market.to_string(),
                epoch: ts,
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &PriceSeries> {
        self.series.values()
    }

    /// Clears bids on any market in the book. Results keep the order of `bids`.
    pub fn clear(&self, bids: &[Bid]) -> Result<Vec<AuctionResult>> {
        let mut by_market: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, b) in bids.iter().enumerate() {
            by_market.entry(b.market_id.as_str()).or_default().push(i);
        }
        let mut out: Vec<Option<AuctionResult>> = vec![None; bids.len()];
        for (market, idx) in by_market {
            let subset: Vec<Bid> = idx.iter().map(|&i| bids[i].clone()).collect();
            let results = clear_auction(&subset, self.require(market)?)?;
            for (i, r) in idx.into_iter().zip(results) {
                out[i] = Some(r);
            }
        }
        Ok(out.into_iter().map(|r| r.expect("every bid cleared")).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub market_id: String,
    pub epoch: DateTime<Utc>,
    pub capacity: f64,
    pub requested_fee: f64,
}

impl Bid {
    pub fn new(market_id: impl Into<String>, epoch: DateTime<Utc>, capacity: f64, requested_fee: f64) -> Result<Self> {
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(Error::arg(format!("bid capacity must be > 0, got {capacity}")));
        }
        if !(requested_fee >= 0.0 && requested_fee.is_finite()) {
            return Err(Error::arg(format!("requested fee must be >= 0, got {requested_fee}")));
        }
        Ok(Bid {
            market_id: market_id.into(),
            epoch,
            capacity,
            requested_fee,
        })
    }
}

/// Outcome of one submitted bid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionResult {
    pub market_id: String,
    pub epoch: DateTime<Utc>,
    pub clearing_price: f64,
    pub accepted: bool,
    /// Sum of accepted capacities on this market and epoch among the cleared bids.
    pub procured_capacity: f64,
}

impl AuctionResult {
    /// Unit price actually paid to this bid.
    pub fn paid_price(&self) -> f64 {
        if self.accepted {
            self.clearing_price
        } else {
            0.0
        }
    }
}

/// Replays a uniform-price auction for `bids` against one market's history.
pub fn clear_auction(bids: &[Bid], history: &PriceSeries) -> Result<Vec<AuctionResult>> {
    let mut prices = Vec::with_capacity(bids.len());
    for b in bids {
        if b.market_id != history.market_id() {
            return Err(Error::arg(format!(
                "bid for market {} cleared against history of {}",
                b.market_id,
                history.market_id()
            )));
        }
        let price = history.price_at(b.epoch).ok_or_else(|| Error::DataGap {
            market: b.market_id.clone(),
            epoch: b.epoch,
        })?;
        prices.push(price);
    }

    let accepted: Vec<bool> = bids
        .iter()
        .zip(&prices)
        .map(|(b, &p)| p > 0.0 && b.requested_fee <= p)
        .collect();

    let mut procured: BTreeMap<DateTime<Utc>, f64> = BTreeMap::new();
    for (b, &ok) in bids.iter().zip(&accepted) {
        if ok {
            *procured.entry(b.epoch).or_default() += b.capacity;
        }
    }

    Ok(bids
        .iter()
        .zip(prices)
        .zip(accepted)
        .map(|((b, price), ok)| AuctionResult {
            market_id: b.market_id.clone(),
            epoch: b.epoch,
            clearing_price: price,
            accepted: ok,
            procured_capacity: procured.get(&b.epoch).copied().unwrap_or(0.0),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueBreakdown {
    pub total: f64,
    pub per_epoch: Vec<(DateTime<Utc>, f64)>,
}

/// Revenue of accepted bids: capacity × clearing price × epoch duration.
pub fn revenue(results: &[AuctionResult], bids: &[Bid], epoch_duration_hours: f64) -> Result<RevenueBreakdown> {
    if results.len() != bids.len() {
        return Err(Error::Invariant(format!(
            "{} results for {} bids",
            results.len(),
            bids.len()
        )));
    }
    let mut per_epoch: BTreeMap<DateTime<Utc>, f64> = BTreeMap::new();
    for (r, b) in results.iter().zip(bids) {
        if r.market_id != b.market_id || r.epoch != b.epoch {
            return Err(Error::Invariant(format!(
                "result ({}, {}) does not belong to bid ({}, {})",
                r.market_id, r.epoch, b.market_id, b.epoch
            )));
        }
        let value = if r.accepted {
            b.capacity * r.clearing_price * epoch_duration_hours
        } else {
            0.0
        };
        *per_epoch.entry(b.epoch).or_default() += value;
    }
    let per_epoch: Vec<_> = per_epoch.into_iter().collect();
    let total = per_epoch.iter().map(|(_, v)| v).sum();
    Ok(RevenueBreakdown { total, per_epoch })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveResource {
    pub id: String,
    pub capacity_mw: f64,
}

/// A service provider's reserve unit and its untraded capacity per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub owner: String,
    resources: Vec<ReserveResource>,
    untraded: BTreeMap<DateTime<Utc>, f64>,
}

impl Portfolio {
    pub fn new(owner: impl Into<String>, resources: Vec<ReserveResource>) -> Result<Self> {
        if resources
            .iter()
            .any(|r| !(r.capacity_mw >= 0.0 && r.capacity_mw.is_finite()))
        {
            return Err(Error::arg("resource capacities must be finite and >= 0"));
        }
        Ok(Portfolio {
            owner: owner.into(),
            resources,
            untraded: BTreeMap::new(),
        })
    }

    /// A single resource of `capacity_mw`.
    pub fn single(owner: impl Into<String>, capacity_mw: f64) -> Result<Self> {
        let owner = owner.into();
        Portfolio::new(
            owner.clone(),
            vec![ReserveResource {
                id: owner,
                capacity_mw,
            }],
        )
    }

    pub fn resources(&self) -> &[ReserveResource] {
        &self.resources
    }

    pub fn total_capacity(&self) -> f64 {
        self.resources.iter().map(|r| r.capacity_mw).sum()
    }

    /// Untraded capacity C[e]; epochs never touched hold the full capacity.
    pub fn untraded(&self, epoch: DateTime<Utc>) -> f64 {
        self.untraded
            .get(&epoch)
            .copied()
            .unwrap_or_else(|| self.total_capacity())
    }

    pub fn set_untraded(&mut self, epoch: DateTime<Utc>, capacity: f64) -> Result<()> {
        if !(capacity >= 0.0 && capacity <= self.total_capacity() + 1e-12) {
            return Err(Error::Invariant(format!(
                "untraded capacity {capacity} outside [0, {}]",
                self.total_capacity()
            )));
        }
        self.untraded.insert(epoch, capacity);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, 5, 10, 0, 0, 0).unwrap()
    }

    fn series(prices: &[f64]) -> PriceSeries {
        PriceSeries::hourly("FCR-N", t0(), prices).unwrap()
    }

    #[test]
    fn zero_fee_bid_is_paid_clearing_price() {
        let h = series(&[15.0]);
        let bid = Bid::new("FCR-N", t0(), 10.0, 0.0).unwrap();
        let r = clear_auction(std::slice::from_ref(&bid), &h).unwrap();
        assert!(r[0].accepted);
        assert_eq!(r[0].clearing_price, 15.0);
        assert_eq!(r[0].procured_capacity, 10.0);
        let rev = revenue(&r, &[bid], 1.0).unwrap();
        assert_eq!(rev.total, 150.0);
    }

    #[test]
    fn zero_price_epoch_rejects() {
        let h = series(&[0.0]);
        let bid = Bid::new("FCR-N", t0(), 10.0, 5.0).unwrap();
        assert!(!clear_auction(&[bid], &h).unwrap()[0].accepted);
        let free = Bid::new("FCR-N", t0(), 10.0, 0.0).unwrap();
        assert!(!clear_auction(&[free], &h).unwrap()[0].accepted);
    }

    #[test]
    fn fee_above_price_rejects() {
        let h = series(&[15.0]);
        let bid = Bid::new("FCR-N", t0(), 10.0, 20.0).unwrap();
        let r = clear_auction(&[bid], &h).unwrap();
        assert!(!r[0].accepted);
        assert_eq!(r[0].paid_price(), 0.0);
    }

    #[test]
    fn missing_epoch_is_a_data_gap() {
        let h = series(&[15.0]);
        let bid = Bid::new("FCR-N", t0() + Duration::hours(3), 10.0, 0.0).unwrap();
        match clear_auction(&[bid], &h) {
            Err(Error::DataGap { market, epoch }) => {
                assert_eq!(market, "FCR-N");
                assert_eq!(epoch, t0() + Duration::hours(3));
            }
            other => panic!("expected data gap, got {other:?}"),
        }
    }

    #[test]
    fn revenue_examples() {
        let h = series(&[12.3, 4.0]);
        let bid = Bid::new("FCR-N", t0(), 10.0, 0.0).unwrap();
        let r = clear_auction(std::slice::from_ref(&bid), &h).unwrap();
        assert!((revenue(&r, &[bid], 1.0).unwrap().total - 123.0).abs() < 1e-9);

        let bids = vec![
            Bid::new("FCR-N", t0(), 10.0, 50.0).unwrap(),
            Bid::new("FCR-N", t0() + Duration::hours(1), 10.0, 50.0).unwrap(),
        ];
        let r = clear_auction(&bids, &h).unwrap();
        let rev = revenue(&r, &bids, 1.0).unwrap();
        assert_eq!(rev.total, 0.0);
        assert_eq!(rev.per_epoch.len(), 2);
    }

    #[test]
    fn revenue_rejects_mismatched_inputs() {
        let h = series(&[12.0]);
        let bid = Bid::new("FCR-N", t0(), 10.0, 0.0).unwrap();
        let r = clear_auction(std::slice::from_ref(&bid), &h).unwrap();
        assert!(matches!(revenue(&r, &[], 1.0), Err(Error::Invariant(_))));
    }

    #[test]
    fn uniform_price_for_all_accepted_bids() {
        let h = series(&[30.0]);
        let bids = vec![
            Bid::new("FCR-N", t0(), 1.0, 0.0).unwrap(),
            Bid::new("FCR-N", t0(), 2.0, 29.0).unwrap(),
            Bid::new("FCR-N", t0(), 3.0, 31.0).unwrap(),
        ];
        let r = clear_auction(&bids, &h).unwrap();
        assert_eq!(r[0].paid_price(), r[1].paid_price());
        assert!(!r[2].accepted);
        assert_eq!(r[0].procured_capacity, 3.0);
    }

    #[test]
    fn series_validation() {
        let t = t0();
        assert!(PriceSeries::new("x", vec![(t, 1.0), (t, 2.0)]).is_err());
        assert!(PriceSeries::new("x", vec![(t + Duration::hours(1), 1.0), (t, 2.0)]).is_err());
        assert!(PriceSeries::new("x", vec![(t, -1.0)]).is_err());
        assert!(PriceSeries::new("x", vec![(t, f64::NAN)]).is_err());
        assert!(PriceSeries::new("x", vec![(t + Duration::minutes(30), 1.0)]).is_err());
        let s = PriceSeries::new("x", vec![(t, 1.0), (t + Duration::hours(2), 0.0)]).unwrap();
        assert_eq!(s.gaps(), vec![t + Duration::hours(1)]);
    }

    #[test]
    fn market_set_requires_one_epoch_ahead() {
        assert!(MarketSet::new(vec![MarketSpec::day_ahead("a")]).is_err());
        assert!(MarketSet::new(vec![
            MarketSpec::day_ahead("a"),
            MarketSpec::epoch_ahead("b"),
            MarketSpec::epoch_ahead("c"),
        ])
        .is_err());
        let mut bad = MarketSpec::epoch_ahead("b");
        bad.epochs_per_interval = 24;
        assert!(bad.validate().is_err());
        let set = MarketSet::finnish();
        assert_eq!(set.epoch_ahead().id, "mFRR");
        assert_eq!(set.day_ahead().count(), 2);
    }

    #[test]
    fn portfolio_capacity_bounds() {
        let mut p = Portfolio::single("vpp", 10.0).unwrap();
        assert_eq!(p.untraded(t0()), 10.0);
        p.set_untraded(t0(), 4.0).unwrap();
        assert_eq!(p.untraded(t0()), 4.0);
        assert!(p.set_untraded(t0(), 11.0).is_err());
        assert!(p.set_untraded(t0(), -1.0).is_err());
    }
}
