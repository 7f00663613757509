//! Day-ahead price forecaster: a 64-32-24 feed-forward network with dropout on
//! the hidden layer, evaluated with Monte-Carlo dropout.
//!
//! `predict_mc` runs `N` stochastic forward passes with dropout active and
//! reduces the de-standardized sample matrix per hour to a mean `p_hat`, an
//! `N - 1` standard deviation `u`, and the normalized uncertainty
//! `nu = u / p_hat`. Sample `j` draws its dropout mask from its own ChaCha
//! stream, so results do not depend on evaluation order.

use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureVector, Standardization, TrainingWindow, FEATURE_DIM, HOURS};
use crate::error::{Error, Result};

pub const HIDDEN: usize = 32;
pub const DEFAULT_DROPOUT: f64 = 0.4;
pub const DEFAULT_MC_SAMPLES: usize = 500;
/// Below this absolute predicted price the normalized uncertainty is infinite.
pub const PRICE_FLOOR: f64 = 1e-6;

const MODEL_FORMAT: &str = "reservebid-mlp";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            learning_rate: 3e-3,
            batch_size: 16,
            dropout_rate: DEFAULT_DROPOUT,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub market_id: String,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub samples: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format: String,
    pub version: u32,
    pub layer_sizes: [usize; 3],
    /// Row-major, `hidden x input`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major, `output x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub dropout_rate: f64,
    pub stats: Standardization,
    pub meta: TrainingMeta,
}

impl MlpModel {
    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        let [n_in, n_hid, _] = self.layer_sizes;
        (0..n_hid)
            .map(|j| {
                let row = &self.w1[j * n_in..(j + 1) * n_in];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j]
            })
            .collect()
    }

    /// Output layer on already-activated (and possibly masked) hidden units.
    fn output(&self, h: &[f64]) -> Vec<f64> {
        let [_, n_hid, n_out] = self.layer_sizes;
        (0..n_out)
            .map(|k| {
                let row = &self.w2[k * n_hid..(k + 1) * n_hid];
                row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.b2[k]
            })
            .collect()
    }

    /// Deterministic pass with dropout disabled, in currency units.
    pub fn predict_point(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let h: Vec<f64> = self.hidden_pre(&x.values).into_iter().map(relu).collect();
        Ok(self
            .output(&h)
            .into_iter()
            .map(|z| self.stats.destandardize(z))
            .collect())
    }

    fn check_input(&self, x: &FeatureVector) -> Result<()> {
        if x.values.len() != self.layer_sizes[0] {
            return Err(Error::arg(format!(
                "expected {} features, got {}",
                self.layer_sizes[0],
                x.values.len()
            )));
        }
        if x.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("feature vector contains non-finite values"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model: MlpModel = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::arg(format!(
                "unsupported model artifact {} v{}",
                model.format, model.version
            )));
        }
        Ok(model)
    }
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn keep_scale(rate: f64) -> f64 {
    if rate > 0.0 {
        1.0 / (1.0 - rate)
    } else {
        1.0
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Trains a 64-32-24 network on the window by minibatch Adam on standardized MSE.
pub fn train(window: &TrainingWindow, config: &TrainConfig, seed: u64) -> Result<MlpModel> {
    if window.is_empty() {
        return Err(Error::arg("training window is empty"));
    }
    if !(0.0..1.0).contains(&config.dropout_rate) {
        return Err(Error::arg(format!("dropout rate {} outside [0, 1)", config.dropout_rate)));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::arg("epochs and batch size must be positive"));
    }
    let (n_in, n_hid, n_out) = (FEATURE_DIM, HIDDEN, HOURS);
    for s in &window.samples {
        if s.features.values.len() != n_in || s.target.len() != n_out {
            return Err(Error::arg("training sample has the wrong shape"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim1 = (6.0 / n_in as f64).sqrt();
    let lim2 = (6.0 / (n_hid + n_out) as f64).sqrt();
    let mut w1: Vec<f64> = (0..n_hid * n_in).map(|_| rng.gen_range(-lim1..lim1)).collect();
    let mut b1 = vec![0.0; n_hid];
    let mut w2: Vec<f64> = (0..n_out * n_hid).map(|_| rng.gen_range(-lim2..lim2)).collect();
    let mut b2 = vec![0.0; n_out];

    let xs: Vec<&[f64]> = window.samples.iter().map(|s| s.features.values.as_slice()).collect();
    let ys: Vec<Vec<f64>> = window
        .samples
        .iter()
        .map(|s| s.target.iter().map(|&p| window.stats.standardize(p)).collect())
        .collect();

    let scale = keep_scale(config.dropout_rate);
    let mut opt = [Adam::new(w1.len()), Adam::new(b1.len()), Adam::new(w2.len()), Adam::new(b2.len())];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut final_loss = f64::NAN;

    let mut gw1 = vec![0.0; w1.len()];
    let mut gb1 = vec![0.0; b1.len()];
    let mut gw2 = vec![0.0; w2.len()];
    let mut gb2 = vec![0.0; b2.len()];
    let mut h = vec![0.0; n_hid];
    let mut mask = vec![0.0; n_hid];
    let mut dh = vec![0.0; n_hid];
    let mut dy = vec![0.0; n_out];

    for epoch in 0..config.epochs {
        // Fisher-Yates with the training stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            gw1.iter_mut().for_each(|g| *g = 0.0);
            gb1.iter_mut().for_each(|g| *g = 0.0);
            gw2.iter_mut().for_each(|g| *g = 0.0);
            gb2.iter_mut().for_each(|g| *g = 0.0);
            let norm = 1.0 / (batch.len() * n_out) as f64;

            for &i in batch {
                let x = xs[i];
                for j in 0..n_hid {
                    let z = w1[j * n_in..(j + 1) * n_in]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + b1[j];
                    mask[j] = if config.dropout_rate > 0.0 && rng.gen::<f64>() < config.dropout_rate {
                        0.0
                    } else {
                        scale
                    };
                    h[j] = relu(z) * mask[j];
                    // relu'(z) folded into the mask used for backprop
                    if z <= 0.0 {
                        mask[j] = 0.0;
                    }
                }
                for k in 0..n_out {
                    let y = w2[k * n_hid..(k + 1) * n_hid]
                        .iter()
                        .zip(&h)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + b2[k];
                    let err = y - ys[i][k];
                    epoch_loss += err * err;
                    dy[k] = 2.0 * err * norm;
                }
                dh.iter_mut().for_each(|d| *d = 0.0);
                for k in 0..n_out {
                    gb2[k] += dy[k];
                    let row = k * n_hid;
                    for j in 0..n_hid {
                        gw2[row + j] += dy[k] * h[j];
                        dh[j] += dy[k] * w2[row + j];
                    }
                }
                for j in 0..n_hid {
                    let dz = dh[j] * mask[j];
                    if dz == 0.0 {
                        continue;
                    }
                    gb1[j] += dz;
                    let row = j * n_in;
                    for (g, v) in gw1[row..row + n_in].iter_mut().zip(x) {
                        *g += dz * v;
                    }
                }
            }

            opt[0].step(&mut w1, &gw1, config.learning_rate, config.weight_decay);
            opt[1].step(&mut b1, &gb1, config.learning_rate, 0.0);
            opt[2].step(&mut w2, &gw2, config.learning_rate, config.weight_decay);
            opt[3].step(&mut b2, &gb2, config.learning_rate, 0.0);
        }
        final_loss = epoch_loss / (xs.len() * n_out) as f64;
        if !final_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                loss: final_loss,
            });
        }
    }

    Ok(MlpModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        layer_sizes: [n_in, n_hid, n_out],
        w1,
        b1,
        w2,
        b2,
        dropout_rate: config.dropout_rate,
        stats: window.stats,
        meta: TrainingMeta {
            market_id: window.market_id.clone(),
            first_day: window.first_day,
            last_day: window.last_day,
            samples: window.len(),
            seed,
            config: config.clone(),
            final_loss,
        },
    })
}

/// Point forecast with uncertainty for the 24 hours of one day and market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub market_id: String,
    pub day: NaiveDate,
    pub p_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub nu: Vec<f64>,
    pub n_samples: usize,
}

/// A forecast together with the `N x 24` sample matrix it was reduced from.
#[derive(Debug, Clone, PartialEq)]
pub struct McForecast {
    pub result: ForecastResult,
    pub samples: Vec<Vec<f64>>,
}

/// `u / p_hat`, or infinity when the predicted price is at or below the floor.
pub fn normalized_uncertainty(u: f64, p_hat: f64) -> f64 {
    if p_hat.abs() < PRICE_FLOOR || p_hat < 0.0 || u.is_infinite() {
        f64::INFINITY
    } else {
        u / p_hat
    }
}

/// Reduces a sample matrix (rows = samples) to per-column mean, N-1 std and nu.
pub fn summarize_samples(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 samples, got {n}")));
    }
    let width = samples[0].len();
    if samples.iter().any(|s| s.len() != width) {
        return Err(Error::arg("ragged sample matrix"));
    }
    let mut p_hat = vec![0.0; width];
    let mut u = vec![0.0; width];
    for col in 0..width {
        // deviations from the first sample keep identical samples exact
        let shift = samples[0][col];
        let d_mean = samples.iter().map(|s| s[col] - shift).sum::<f64>() / n as f64;
        let ss = samples.iter().map(|s| (s[col] - shift - d_mean).powi(2)).sum::<f64>();
        p_hat[col] = shift + d_mean;
        u[col] = (ss / (n - 1) as f64).sqrt();
    }
    let nu = p_hat
        .iter()
        .zip(&u)
        .map(|(&p, &s)| normalized_uncertainty(s, p))
        .collect();
    Ok((p_hat, u, nu))
}

/// Monte-Carlo dropout forecast with `n` stochastic passes.
pub fn predict_mc(model: &MlpModel, x: &FeatureVector, n: usize, seed: u64) -> Result<McForecast> {
    if n < 2 {
        return Err(Error::arg(format!("MC dropout needs N >= 2, got {n}")));
    }
    model.check_input(x)?;
    let hidden: Vec<f64> = model.hidden_pre(&x.values).into_iter().map(relu).collect();
    let rate = model.dropout_rate;
    let scale = keep_scale(rate);

    let samples: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let h: Vec<f64> = hidden
                .iter()
                .map(|&v| {
                    if rate > 0.0 && rng.gen::<f64>() < rate {
                        0.0
                    } else {
                        v * scale
                    }
                })
                .collect();
            model
                .output(&h)
                .into_iter()
                .map(|z| model.stats.destandardize(z))
                .collect()
        })
        .collect();

    let (p_hat, u, nu) = summarize_samples(&samples)?;
    Ok(McForecast {
        result: ForecastResult {
            market_id: x.market_id.clone(),
            day: x.target_day,
            p_hat,
            u,
            nu,
            n_samples: n,
        },
        samples,
    })
}

/// Writes forecasts as `market,day,hour,p_hat,u,nu`.
pub fn write_forecasts<W: Write>(out: W, forecasts: &[ForecastResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["market", "day", "hour", "p_hat", "u", "nu"])?;
    for f in forecasts {
        for h in 0..f.p_hat.len() {
            w.write_record([
                f.market_id.clone(),
                f.day.to_string(),
                h.to_string(),
                f.p_hat[h].to_string(),
                f.u[h].to_string(),
                f.nu[h].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a forecast dump back into per-(market, day) results. `n_samples` is
/// not part of the dump and is reported as 0.
pub fn read_forecasts<R: BufRead>(input: R) -> Result<Vec<ForecastResult>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<ForecastResult> = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |what: &str| Error::Parse {
            path: "forecasts".into(),
            line,
            message: format!("bad {what}"),
        };
        if row.len() != 6 {
            return Err(bad("column count"));
        }
        let market = row[0].to_string();
        let day: NaiveDate = row[1].parse().map_err(|_| bad("day"))?;
        let hour: usize = row[2].parse().map_err(|_| bad("hour"))?;
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let (p, u, nu) = (num(&row[3], "p_hat")?, num(&row[4], "u")?, num(&row[5], "nu")?);
        let fresh = out.last().map_or(true, |f| f.market_id != market || f.day != day);
        if fresh {
            out.push(ForecastResult {
                market_id: market,
                day,
                p_hat: Vec::new(),
                u: Vec::new(),
                nu: Vec::new(),
                n_samples: 0,
            });
        }
        let f = out.last_mut().expect("pushed above");
        if hour != f.p_hat.len() {
            return Err(bad("hour order"));
        }
        f.p_hat.push(p);
        f.u.push(u);
        f.nu.push(nu);
    }
    Ok(out)
}
