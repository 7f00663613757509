//! Uncertainty-threshold calibration.
//!
//! Each evaluated hour is labelled accurate when the market with the highest
//! predicted price is also the market with the highest actual price, and
//! certain when the normalized uncertainty of that selected market is strictly
//! below the market's threshold. Uncertainty Accuracy (UA) is the share of
//! hours that are accurate-and-certain or inaccurate-and-uncertain.
//!
//! Because an hour's certainty only depends on the threshold of the market it
//! selects, the joint UA is a sum of independent per-market terms. The search
//! therefore scans the 101-point grid `{0.00, 0.01, ..., 1.00}` one market at
//! a time; the result is the exact joint optimum, with ties resolved towards
//! the smallest threshold of every market.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_STEPS: usize = 100;

/// Threshold at grid index `k` (`k / 100`).
pub fn grid_value(k: usize) -> f64 {
    k as f64 / GRID_STEPS as f64
}

/// Index of the largest value; ties resolve to the earliest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Whether the predicted and actual price vectors agree on the max-priced
/// market. Both sides are keyed by market id and ties follow `ordering`.
pub fn classify_accuracy(pred: &[(&str, f64)], actual: &[(&str, f64)], ordering: &[String]) -> Result<bool> {
    if pred.len() < 2 {
        return Err(Error::arg("accuracy needs at least two markets"));
    }
    let align = |side: &[(&str, f64)]| -> Result<Vec<f64>> {
        if side.len() != pred.len() {
            return Err(Error::arg("prediction and actual market sets differ"));
        }
        let mut ordered = Vec::with_capacity(side.len());
        for id in ordering.iter().filter(|id| pred.iter().any(|(p, _)| p == id)) {
            let v = side
                .iter()
                .find(|(m, _)| m == id)
                .ok_or_else(|| Error::arg(format!("market {id} missing on one side")))?;
            ordered.push(v.1);
        }
        if ordered.len() != pred.len() {
            return Err(Error::arg("markets outside the configured ordering"));
        }
        Ok(ordered)
    };
    let p = align(pred)?;
    let a = align(actual)?;
    Ok(argmax(&p) == argmax(&a))
}

/// Strict comparison: a zero threshold rejects everything, infinity is never certain.
pub fn classify_certainty(nu: f64, u_th: f64) -> bool {
    nu < u_th
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub n_ac: u64,
    pub n_au: u64,
    pub n_ic: u64,
    pub n_iu: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.n_ac + self.n_au + self.n_ic + self.n_iu
    }

    pub fn record(&mut self, accurate: bool, certain: bool) {
        match (accurate, certain) {
            (true, true) => self.n_ac += 1,
            (true, false) => self.n_au += 1,
            (false, true) => self.n_ic += 1,
            (false, false) => self.n_iu += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.n_ac += other.n_ac;
        self.n_au += other.n_au;
        self.n_ic += other.n_ic;
        self.n_iu += other.n_iu;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UaReport {
    /// `None` when no hour is certain.
    pub p_acc_given_cert: Option<f64>,
    /// `None` when no hour is uncertain.
    pub p_inacc_given_uncert: Option<f64>,
    pub ua: f64,
}

pub fn compute_ua(counts: &ConfusionCounts) -> Result<UaReport> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::arg("UA is undefined for zero evaluated hours"));
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(UaReport {
        p_acc_given_cert: ratio(counts.n_ac, counts.n_ac + counts.n_ic),
        p_inacc_given_uncert: ratio(counts.n_iu, counts.n_au + counts.n_iu),
        ua: (counts.n_ac + counts.n_iu) as f64 / total as f64,
    })
}

/// One evaluated hour: per-market forecast, uncertainty and actual price, in
/// the market order of the enclosing [`EvalSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalHour {
    pub p_hat: Vec<f64>,
    pub nu: Vec<f64>,
    pub actual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub markets: Vec<String>,
    pub hours: Vec<EvalHour>,
}

impl EvalSet {
    pub fn new(markets: Vec<String>, hours: Vec<EvalHour>) -> Result<Self> {
        if markets.len() < 2 {
            return Err(Error::arg("calibration needs at least two markets"));
        }
        let n = markets.len();
        if hours
            .iter()
            .any(|h| h.p_hat.len() != n || h.nu.len() != n || h.actual.len() != n)
        {
            return Err(Error::arg("every hour must carry one value per market"));
        }
        if hours.iter().any(|h| h.nu.iter().any(|v| v.is_nan() || *v < 0.0)) {
            return Err(Error::arg("normalized uncertainties must be >= 0 or +inf"));
        }
        Ok(EvalSet { markets, hours })
    }

    /// (selected market, accurate) per hour.
    fn labels(&self) -> impl Iterator<Item = (usize, bool, f64)> + '_ {
        self.hours.iter().map(|h| {
            let sel = argmax(&h.p_hat);
            (sel, sel == argmax(&h.actual), h.nu[sel])
        })
    }

    /// Confusion counts under `thresholds` (one per market), overall and per selected market.
    pub fn counts(&self, thresholds: &[f64]) -> Result<(ConfusionCounts, Vec<ConfusionCounts>)> {
        if thresholds.len() != self.markets.len() {
            return Err(Error::arg("one threshold per market is required"));
        }
        let mut all = ConfusionCounts::default();
        let mut per = vec![ConfusionCounts::default(); self.markets.len()];
        for (sel, accurate, nu) in self.labels() {
            let certain = classify_certainty(nu, thresholds[sel]);
            all.record(accurate, certain);
            per[sel].record(accurate, certain);
        }
        Ok((all, per))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketCalibration {
    pub market: String,
    pub u_th: f64,
    pub counts: ConfusionCounts,
}

/// Calibrated per-market uncertainty thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub markets: Vec<MarketCalibration>,
    pub counts: ConfusionCounts,
    /// Joint UA reached on the calibration set; `None` for fixed tables.
    pub ua: Option<f64>,
}

impl ThresholdTable {
    /// Table with the given thresholds and no calibration statistics.
    pub fn fixed(entries: &[(String, f64)]) -> Result<Self> {
        for (m, t) in entries {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::arg(format!("threshold {t} for {m} outside [0, 1]")));
            }
        }
        Ok(ThresholdTable {
            markets: entries
                .iter()
                .map(|(m, t)| MarketCalibration {
                    market: m.clone(),
                    u_th: *t,
                    counts: ConfusionCounts::default(),
                })
                .collect(),
            counts: ConfusionCounts::default(),
            ua: None,
        })
    }

    pub fn uniform(markets: &[String], value: f64) -> Result<Self> {
        let entries: Vec<_> = markets.iter().map(|m| (m.clone(), value)).collect();
        Self::fixed(&entries)
    }

    pub fn threshold(&self, market: &str) -> Option<f64> {
        self.markets.iter().find(|m| m.market == market).map(|m| m.u_th)
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.markets.iter().map(|m| m.u_th).collect()
    }

    /// `market,u_th,ua,p_acc_given_cert,p_inacc_given_uncert,n_ac,n_au,n_ic,n_iu`,
    /// one row per market (over the hours it was selected) and a final `ALL` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "market",
            "u_th",
            "ua",
            "p_acc_given_cert",
            "p_inacc_given_uncert",
            "n_ac",
            "n_au",
            "n_ic",
            "n_iu",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let row = |name: String, th: String, c: &ConfusionCounts| -> Vec<String> {
            let r = compute_ua(c).ok();
            vec![
                name,
                th,
                opt(r.map(|r| r.ua)),
                opt(r.and_then(|r| r.p_acc_given_cert)),
                opt(r.and_then(|r| r.p_inacc_given_uncert)),
                c.n_ac.to_string(),
                c.n_au.to_string(),
                c.n_ic.to_string(),
                c.n_iu.to_string(),
            ]
        };
        for m in &self.markets {
            w.write_record(row(m.market.clone(), m.u_th.to_string(), &m.counts))?;
        }
        w.write_record(row("ALL".into(), String::new(), &self.counts))?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut markets = Vec::new();
        let mut counts = ConfusionCounts::default();
        let mut ua = None;
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let bad = |what: &str| Error::Parse {
                path: "thresholds".into(),
                line: i + 2,
                message: format!("bad {what}"),
            };
            if row.len() != 9 {
                return Err(bad("column count"));
            }
            let n = |j: usize| row[j].parse::<u64>().map_err(|_| bad("count"));
            let c = ConfusionCounts {
                n_ac: n(5)?,
                n_au: n(6)?,
                n_ic: n(7)?,
                n_iu: n(8)?,
            };
            if &row[0] == "ALL" {
                counts = c;
                ua = row[2].parse().ok();
            } else {
                let u_th: f64 = row[1].parse().map_err(|_| bad("u_th"))?;
                markets.push(MarketCalibration {
                    market: row[0].to_string(),
                    u_th,
                    counts: c,
                });
            }
        }
        Ok(ThresholdTable { markets, counts, ua })
    }
}

/// Exact maximization of joint UA over the per-market threshold grid.
pub fn search_thresholds(eval: &EvalSet) -> Result<ThresholdTable> {
    if eval.hours.is_empty() {
        return Err(Error::arg("calibration set is empty"));
    }
    let n_markets = eval.markets.len();
    let width = GRID_STEPS + 1;
    // certain_from[k] histogram: an hour with first-certain index k0 is certain for all k >= k0.
    let mut acc_from = vec![vec![0i64; width + 1]; n_markets];
    let mut inacc_from = vec![vec![0i64; width + 1]; n_markets];
    for (sel, accurate, nu) in eval.labels() {
        let k0 = (0..width).find(|&k| classify_certainty(nu, grid_value(k))).unwrap_or(width);
        if accurate {
            acc_from[sel][k0] += 1;
        } else {
            inacc_from[sel][k0] += 1;
        }
    }

    let mut thresholds = vec![0.0; n_markets];
    for m in 0..n_markets {
        let (mut best_k, mut best_score) = (0usize, i64::MIN);
        let (mut acc_certain, mut inacc_certain) = (0i64, 0i64);
        let inacc_total: i64 = inacc_from[m].iter().sum();
        for k in 0..width {
            acc_certain += acc_from[m][k];
            inacc_certain += inacc_from[m][k];
            let score = acc_certain + (inacc_total - inacc_certain);
            if score > best_score {
                best_score = score;
                best_k = k;
            }
        }
        thresholds[m] = grid_value(best_k);
    }

    let (counts, per) = eval.counts(&thresholds)?;
    let ua = compute_ua(&counts)?.ua;
    Ok(ThresholdTable {
        markets: eval
            .markets
            .iter()
            .zip(thresholds)
            .zip(per)
            .map(|((m, u_th), counts)| MarketCalibration {
                market: m.clone(),
                u_th,
                counts,
            })
            .collect(),
        counts,
        ua: Some(ua),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order() -> Vec<String> {
        vec!["FCR-N".into(), "FCR-D".into(), "mFRR".into()]
    }

    fn tagged(v: [f64; 3]) -> Vec<(&'static str, f64)> {
        vec![("FCR-N", v[0]), ("FCR-D", v[1]), ("mFRR", v[2])]
    }

    #[test]
    fn accuracy_examples() {
        assert!(classify_accuracy(&tagged([10.0, 5.0, 8.0]), &tagged([9.0, 4.0, 7.0]), &order()).unwrap());
        assert!(!classify_accuracy(&tagged([10.0, 5.0, 8.0]), &tagged([4.0, 9.0, 7.0]), &order()).unwrap());
        assert!(classify_accuracy(&tagged([3.0, 3.0, 1.0]), &tagged([3.0, 3.0, 1.0]), &order()).unwrap());
    }

    #[test]
    fn accuracy_is_keyed_by_market() {
        let pred = vec![("mFRR", 1.0), ("FCR-N", 10.0), ("FCR-D", 5.0)];
        assert!(classify_accuracy(&pred, &tagged([9.0, 4.0, 7.0]), &order()).unwrap());
        let short = vec![("FCR-N", 1.0), ("FCR-D", 2.0)];
        assert!(classify_accuracy(&short, &tagged([1.0, 2.0, 3.0]), &order()).is_err());
        let other = vec![("FCR-N", 1.0), ("aFRR", 2.0), ("mFRR", 0.0)];
        assert!(classify_accuracy(&tagged([1.0, 2.0, 3.0]), &other, &order()).is_err());
        assert!(classify_accuracy(&[("FCR-N", 1.0)], &[("FCR-N", 1.0)], &order()).is_err());
    }

    #[test]
    fn ties_follow_market_order() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn certainty_examples() {
        assert!(classify_certainty(0.005, 0.01));
        assert!(!classify_certainty(0.0, 0.0));
        assert!(!classify_certainty(f64::INFINITY, 1.0));
    }

    #[test]
    fn ua_examples() {
        let r = compute_ua(&ConfusionCounts { n_ac: 3, n_au: 1, n_ic: 1, n_iu: 1 }).unwrap();
        assert_eq!(r.ua, 4.0 / 6.0);
        assert_eq!(r.p_acc_given_cert, Some(0.75));
        assert_eq!(r.p_inacc_given_uncert, Some(0.5));

        let r = compute_ua(&ConfusionCounts { n_ac: 7, ..Default::default() }).unwrap();
        assert_eq!(r.ua, 1.0);

        let r = compute_ua(&ConfusionCounts { n_au: 2, n_iu: 1, ..Default::default() }).unwrap();
        assert_eq!(r.p_acc_given_cert, None);
        assert!((r.ua - 1.0 / 3.0).abs() < 1e-15);

        assert!(compute_ua(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn dominant_market_is_all_certain() {
        let hours = (0..50)
            .map(|i| EvalHour {
                p_hat: vec![20.0 + i as f64, 1.0, 2.0],
                nu: vec![0.05, 0.5, 0.5],
                actual: vec![25.0, 0.0, 3.0],
            })
            .collect();
        let eval = EvalSet::new(order(), hours).unwrap();
        let t = search_thresholds(&eval).unwrap();
        assert_eq!(t.ua, Some(1.0));
        assert_eq!(t.counts.n_ac, 50);
        assert_eq!(t.threshold("FCR-N"), Some(0.06));
    }

    #[test]
    fn empty_set_is_rejected() {
        let eval = EvalSet::new(order(), vec![]).unwrap();
        assert!(search_thresholds(&eval).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let hours = (0..20)
            .map(|i| EvalHour {
                p_hat: vec![(i % 3) as f64, 1.0, 1.5],
                nu: vec![0.1 * (i % 5) as f64, 0.02, f64::INFINITY],
                actual: vec![1.0, (i % 4) as f64, 2.0],
            })
            .collect();
        let eval = EvalSet::new(order(), hours).unwrap();
        let t = search_thresholds(&eval).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("market,u_th,ua,p_acc_given_cert,p_inacc_given_uncert,n_ac,n_au,n_ic,n_iu\n"));
        let back = ThresholdTable::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.thresholds(), t.thresholds());
        assert_eq!(back.counts, t.counts);
    }
}
