//! Growing Self-Organizing Map and the node-variance uncertainty metric.
//!
//! The map starts with four nodes on a 2x2 grid. During the growing phase the
//! winner accumulates its Euclidean quantization error; once that exceeds the
//! growth threshold `GT = -D ln(SF)` a boundary winner spawns nodes in its free
//! grid neighbours, while an interior winner halves its error and pushes a
//! share of it onto its neighbours. A smoothing phase then refines weights at a
//! low learning rate without growth.
//!
//! After training every sample's actual prices are attached to its winner,
//! one list per hour slot. The uncertainty of a new vector is the `c - 1`
//! standard deviation of the prices attached to its winner for that slot,
//! normalized by their mean. Fewer than two attached prices give an infinite
//! uncertainty.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::PRICE_FLOOR;

const MAP_FORMAT: &str = "reservebid-gsom";
const MAP_VERSION: u32 = 1;
const DIRECTIONS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsomParams {
    pub spread_factor: f64,
    pub growing_learning_rate: f64,
    pub smoothing_learning_rate: f64,
    pub initial_radius: f64,
    pub final_radius: f64,
    pub growing_passes: usize,
    pub smoothing_passes: usize,
    /// Share of an interior winner's error added to each grid neighbour.
    pub distribution_factor: f64,
    pub max_nodes: usize,
}

impl Default for GsomParams {
    fn default() -> Self {
        GsomParams {
            spread_factor: 0.5,
            growing_learning_rate: 0.3,
            smoothing_learning_rate: 0.05,
            initial_radius: 3.0,
            final_radius: 1.0,
            growing_passes: 1,
            smoothing_passes: 1,
            distribution_factor: 0.1,
            max_nodes: 400,
        }
    }
}

impl GsomParams {
    pub fn growth_threshold(&self, dim: usize) -> f64 {
        -(dim as f64) * self.spread_factor.ln()
    }

    fn validate(&self) -> Result<()> {
        if !(self.spread_factor > 0.0 && self.spread_factor < 1.0) {
            return Err(Error::arg("spread factor must lie in (0, 1)"));
        }
        if self.max_nodes < 4 {
            return Err(Error::arg("max_nodes must be at least 4"));
        }
        if self.initial_radius < self.final_radius || self.final_radius < 0.0 {
            return Err(Error::arg("radius schedule must shrink towards a non-negative radius"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsomNode {
    pub weight: Vec<f64>,
    pub position: (i32, i32),
    pub accumulated_error: f64,
    /// Attached actual prices, one list per slot (hour of day).
    pub attached_prices: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsomMap {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub slots: usize,
    pub params: GsomParams,
    pub growth_threshold: f64,
    pub nodes: Vec<GsomNode>,
    pub trained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsomUncertainty {
    pub node: usize,
    pub count: usize,
    pub mean: f64,
    pub u: f64,
    pub nu: f64,
}

/// Sample standard deviation (`c - 1` denominator) and mean of node prices.
/// Returns infinite `u` and `nu` for fewer than two prices.
pub fn node_uncertainty(prices: &[f64]) -> (f64, f64, f64) {
    let c = prices.len();
    if c < 2 {
        let mean = if c == 1 { prices[0] } else { f64::NAN };
        return (mean, f64::INFINITY, f64::INFINITY);
    }
    let mean = prices.iter().sum::<f64>() / c as f64;
    let u = (prices.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (c - 1) as f64).sqrt();
    let nu = if mean < PRICE_FLOOR { f64::INFINITY } else { u / mean };
    (mean, u, nu)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl GsomMap {
    /// Four-node map with weights drawn uniformly inside the data's bounding box.
    pub fn initial(vectors: &[Vec<f64>], slots: usize, params: GsomParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let dim = vectors
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::arg("GSOM needs at least one input vector"))?;
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::arg("GSOM input vectors must share a non-zero dimension"));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg("GSOM input contains non-finite values"));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for v in vectors {
            for d in 0..dim {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = [(0, 0), (1, 0), (0, 1), (1, 1)]
            .into_iter()
            .map(|position| GsomNode {
                weight: (0..dim)
                    .map(|d| if hi[d] > lo[d] { rng.gen_range(lo[d]..=hi[d]) } else { lo[d] })
                    .collect(),
                position,
                accumulated_error: 0.0,
                attached_prices: vec![Vec::new(); slots],
            })
            .collect();
        Ok(GsomMap {
            format: MAP_FORMAT.to_string(),
            version: MAP_VERSION,
            dim,
            slots,
            growth_threshold: params.growth_threshold(dim),
            params,
            nodes,
            trained: false,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node nearest to `x`; ties go to the lower index.
    pub fn winner(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = sq_dist(&n.weight, x);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn position_index(&self) -> HashMap<(i32, i32), usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.position, i)).collect()
    }

    fn adapt(&mut self, x: &[f64], winner: usize, lr: f64, radius: f64) {
        let (wx, wy) = self.nodes[winner].position;
        let r2 = radius * radius;
        for n in &mut self.nodes {
            let dx = (n.position.0 - wx) as f64;
            let dy = (n.position.1 - wy) as f64;
            let g2 = dx * dx + dy * dy;
            if g2 > r2 {
                continue;
            }
            let influence = if r2 > 0.0 { (-g2 / (2.0 * r2)).exp() } else { 1.0 };
            let step = lr * influence;
            for (w, v) in n.weight.iter_mut().zip(x) {
                *w += step * (v - *w);
            }
        }
    }

    fn grow_or_spread(&mut self, winner: usize) {
        let index = self.position_index();
        let (wx, wy) = self.nodes[winner].position;
        let free: Vec<(i32, i32)> = DIRECTIONS
            .iter()
            .filter(|(dx, dy)| !index.contains_key(&(wx + dx, wy + dy)))
            .copied()
            .collect();

        if !free.is_empty() {
            if self.nodes.len() + free.len() > self.params.max_nodes {
                self.nodes[winner].accumulated_error = self.growth_threshold / 2.0;
                return;
            }
            let base = self.nodes[winner].weight.clone();
            for (dx, dy) in free {
                let weight = match index.get(&(wx - dx, wy - dy)) {
                    Some(&opp) => base
                        .iter()
                        .zip(&self.nodes[opp].weight)
                        .map(|(w, o)| 2.0 * w - o)
                        .collect(),
                    None => base.clone(),
                };
                self.nodes.push(GsomNode {
                    weight,
                    position: (wx + dx, wy + dy),
                    accumulated_error: 0.0,
                    attached_prices: vec![Vec::new(); self.slots],
                });
            }
            self.nodes[winner].accumulated_error = 0.0;
        } else {
            self.nodes[winner].accumulated_error = self.growth_threshold / 2.0;
            for (dx, dy) in DIRECTIONS {
                if let Some(&n) = index.get(&(wx + dx, wy + dy)) {
                    self.nodes[n].accumulated_error *= 1.0 + self.params.distribution_factor;
                }
            }
        }
    }

    /// Attach the prices of one sample to its winner.
    pub fn attach(&mut self, x: &[f64], prices: &[f64]) -> Result<usize> {
        if prices.len() != self.slots || x.len() != self.dim {
            return Err(Error::arg("attached sample has the wrong shape"));
        }
        let w = self.winner(x);
        for (slot, &p) in prices.iter().enumerate() {
            self.nodes[w].attached_prices[slot].push(p);
        }
        Ok(w)
    }

    /// Normalized uncertainty of `x` for one price slot.
    pub fn uncertainty(&self, x: &[f64], slot: usize) -> Result<GsomUncertainty> {
        if !self.trained {
            return Err(Error::State("GSOM map has not been trained".into()));
        }
        if x.len() != self.dim || slot >= self.slots {
            return Err(Error::arg("query does not match the map's shape"));
        }
        let node = self.winner(x);
        let prices = &self.nodes[node].attached_prices[slot];
        let (mean, u, nu) = node_uncertainty(prices);
        Ok(GsomUncertainty {
            node,
            count: prices.len(),
            mean,
            u,
            nu,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let map: GsomMap = serde_json::from_reader(std::io::BufReader::new(file))?;
        if map.format != MAP_FORMAT || map.version != MAP_VERSION {
            return Err(Error::arg(format!("unsupported map artifact {} v{}", map.format, map.version)));
        }
        Ok(map)
    }
}

/// Trains a map on `vectors` and attaches `prices[i]` (one entry per slot) to
/// the final winner of `vectors[i]`.
pub fn train_gsom(vectors: &[Vec<f64>], prices: &[Vec<f64>], params: &GsomParams, seed: u64) -> Result<GsomMap> {
    if vectors.is_empty() {
        return Err(Error::arg("GSOM training set is empty"));
    }
    if prices.len() != vectors.len() {
        return Err(Error::arg("one price row per input vector is required"));
    }
    let slots = prices[0].len();
    if slots == 0 || prices.iter().any(|p| p.len() != slots) {
        return Err(Error::arg("price rows must share a non-zero width"));
    }
    let mut map = GsomMap::initial(vectors, slots, params.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..vectors.len()).collect();

    let total = (params.growing_passes * vectors.len()).max(1) as f64;
    let mut t = 0usize;
    for _ in 0..params.growing_passes {
        shuffle(&mut order, &mut rng);
        for &i in &order {
            let frac = t as f64 / total;
            let lr = params.growing_learning_rate * (1.0 - frac);
            let radius = params.initial_radius + (params.final_radius - params.initial_radius) * frac;
            let x = &vectors[i];
            let w = map.winner(x);
            map.nodes[w].accumulated_error += sq_dist(&map.nodes[w].weight, x).sqrt();
            map.adapt(x, w, lr, radius);
            if map.nodes[w].accumulated_error > map.growth_threshold {
                map.grow_or_spread(w);
            }
            t += 1;
        }
    }

    let total = (params.smoothing_passes * vectors.len()).max(1) as f64;
    let mut t = 0usize;
    for _ in 0..params.smoothing_passes {
        shuffle(&mut order, &mut rng);
        for &i in &order {
            let lr = params.smoothing_learning_rate * (1.0 - t as f64 / total);
            let w = map.winner(&vectors[i]);
            map.adapt(&vectors[i], w, lr, params.final_radius);
            t += 1;
        }
    }

    for (x, p) in vectors.iter().zip(prices) {
        map.attach(x, p)?;
    }
    map.trained = true;
    Ok(map)
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
