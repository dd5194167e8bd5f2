//! Production data: synthetic cloud-advection simulation, CSV ingest,
//! rolling means, normalisation and encoder/decoder windows.

mod clouds;
mod csvio;
mod windows;

pub use clouds::{
    place_plants, simulate_power, simulate_with_field, CloudBlob, CloudField, CloudParams,
    LocalFrame, SyntheticConfig,
};
pub use csvio::{load_csv, read_csv, read_plants, write_csv, write_plants, MAX_INTERPOLATED_GAP};
pub use windows::{
    make_windows, window_count, window_starts, FeatureFrame, FeatureSet, WindowSpec,
    DECODER_FEATURES, ENCODER_FEATURES,
};

use std::ops::Range;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::NodeLocation;

pub const STEP_MINUTES: i64 = 15;
pub const STEPS_PER_DAY: usize = 96;
/// Rolling-mean history: the window is `[t - 72 h, t - 24 h)`.
pub const ROLLING_LAG_FAR: usize = 3 * STEPS_PER_DAY;
pub const ROLLING_LAG_NEAR: usize = STEPS_PER_DAY;
/// First index at which the rolling mean is defined.
pub const WARMUP_STEPS: usize = ROLLING_LAG_FAR;
/// Irradiance channels are divided by this (W/m²) before entering a model.
pub const IRRADIANCE_SCALE: f64 = 1000.0;

/// A plant: where it is and how much it can produce.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlantSpecJson", into = "PlantSpecJson")]
pub struct PlantSpec {
    pub location: NodeLocation,
    /// Peak capacity in kW.
    pub capacity_kw: f64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
struct PlantSpecJson {
    lat: f64,
    lon: f64,
    alt_m: f64,
    capacity_kw: f64,
}

impl TryFrom<PlantSpecJson> for PlantSpec {
    type Error = Error;

    fn try_from(j: PlantSpecJson) -> Result<Self> {
        PlantSpec::new(NodeLocation::new(j.lat, j.lon, j.alt_m)?, j.capacity_kw)
    }
}

impl From<PlantSpec> for PlantSpecJson {
    fn from(p: PlantSpec) -> Self {
        Self {
            lat: p.location.latitude,
            lon: p.location.longitude,
            alt_m: p.location.altitude,
            capacity_kw: p.capacity_kw,
        }
    }
}

impl PlantSpec {
    pub fn new(location: NodeLocation, capacity_kw: f64) -> Result<Self> {
        location.validate()?;
        if !(capacity_kw > 0.0) || !capacity_kw.is_finite() {
            return Err(invalid(format!(
                "capacity {capacity_kw} kW must be positive"
            )));
        }
        Ok(Self {
            location,
            capacity_kw,
        })
    }
}

/// Power on a uniform 15-minute UTC grid, `[T, N]` row-major in kW.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    start: DateTime<Utc>,
    n_nodes: usize,
    power: Vec<f64>,
    per_node_max: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(start: DateTime<Utc>, n_nodes: usize, power: Vec<f64>) -> Result<Self> {
        if n_nodes == 0 || !power.len().is_multiple_of(n_nodes) {
            return Err(invalid(format!(
                "{} power values do not form rows of {} nodes",
                power.len(),
                n_nodes
            )));
        }
        if let Some(i) = power.iter().position(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid(format!(
                "power at step {}, node {} is {}",
                i / n_nodes,
                i % n_nodes,
                power[i]
            )));
        }
        Ok(Self {
            start,
            n_nodes,
            power,
            per_node_max: None,
        })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn n_times(&self) -> usize {
        self.power.len() / self.n_nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn timestamp(&self, t: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(STEP_MINUTES * t as i64)
    }

    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        (0..self.n_times()).map(|t| self.timestamp(t)).collect()
    }

    pub fn power(&self, t: usize, v: usize) -> f64 {
        self.power[t * self.n_nodes + v]
    }

    pub fn power_data(&self) -> &[f64] {
        &self.power
    }

    pub fn per_node_max(&self) -> Option<&[f64]> {
        self.per_node_max.as_deref()
    }

    /// Whole days in the series.
    pub fn n_days(&self) -> usize {
        self.n_times() / STEPS_PER_DAY
    }

    /// The same series with timestamps moved by `steps` grid steps.
    pub fn shifted(&self, steps: i64) -> Self {
        let mut out = self.clone();
        out.start = self.start + Duration::minutes(STEP_MINUTES * steps);
        out
    }

    /// Consecutive rows `range` as a new dataset.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_times() {
            return Err(invalid(format!(
                "row range {:?} outside {} rows",
                range,
                self.n_times()
            )));
        }
        let n = self.n_nodes;
        Ok(Self {
            start: self.timestamp(range.start),
            n_nodes: n,
            power: self.power[range.start * n..range.end * n].to_vec(),
            per_node_max: self.per_node_max.clone(),
        })
    }
}

/// Mean power per node over `[t - 72 h, t - 24 h)`.
pub fn rolling_mean(dataset: &Dataset, t: usize) -> Result<Vec<f64>> {
    if t < ROLLING_LAG_FAR || t > dataset.n_times() {
        return Err(Error::Window(format!(
            "rolling mean at step {t} needs steps {}..{} of {}",
            t as i64 - ROLLING_LAG_FAR as i64,
            t as i64 - ROLLING_LAG_NEAR as i64,
            dataset.n_times()
        )));
    }
    let n = dataset.n_nodes();
    let count = (ROLLING_LAG_FAR - ROLLING_LAG_NEAR) as f64;
    let mut sums = vec![0.0; n];
    for s in t - ROLLING_LAG_FAR..t - ROLLING_LAG_NEAR {
        for (v, acc) in sums.iter_mut().enumerate() {
            *acc += dataset.power(s, v);
        }
    }
    Ok(sums.into_iter().map(|s| s / count).collect())
}

/// Sets `per_node_max` from the rows in `training_range`.
pub fn normalize(dataset: &Dataset, training_range: Range<usize>) -> Result<Dataset> {
    if training_range.is_empty() || training_range.end > dataset.n_times() {
        return Err(invalid(format!(
            "training range {:?} invalid for {} rows",
            training_range,
            dataset.n_times()
        )));
    }
    let n = dataset.n_nodes();
    let mut max = vec![0.0f64; n];
    for t in training_range {
        for (v, m) in max.iter_mut().enumerate() {
            *m = m.max(dataset.power(t, v));
        }
    }
    if let Some(node) = max.iter().position(|&m| m <= 0.0) {
        return Err(Error::DegenerateNode { node });
    }
    let mut out = dataset.clone();
    out.per_node_max = Some(max);
    Ok(out)
}

/// Attaches known per-node maxima, e.g. the training maxima stored with a
/// checkpoint, so a different dataset is normalised consistently.
pub fn normalize_with(dataset: &Dataset, per_node_max: &[f64]) -> Result<Dataset> {
    if per_node_max.len() != dataset.n_nodes() {
        return Err(shape_err(format!(
            "{} maxima for {} nodes",
            per_node_max.len(),
            dataset.n_nodes()
        )));
    }
    if let Some(node) = per_node_max
        .iter()
        .position(|&m| !(m > 0.0) || !m.is_finite())
    {
        return Err(Error::DegenerateNode { node });
    }
    let mut out = dataset.clone();
    out.per_node_max = Some(per_node_max.to_vec());
    Ok(out)
}

/// Row ranges for a split of whole days: the first `train_fraction` of days
/// train, the rest evaluate.
pub fn split_by_days(n_times: usize, train_fraction: f64) -> Result<(Range<usize>, Range<usize>)> {
    let days = n_times / STEPS_PER_DAY;
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(invalid(format!(
            "train fraction {train_fraction} must be in (0, 1)"
        )));
    }
    let train_days = ((days as f64) * train_fraction).round() as usize;
    if train_days == 0 || train_days >= days {
        return Err(invalid(format!(
            "{days} days cannot be split {train_fraction}:{}",
            1.0 - train_fraction
        )));
    }
    let cut = train_days * STEPS_PER_DAY;
    Ok((0..cut, cut..n_times))
}
