//! Normalised feature arrays and encoder/decoder windows.
//!
//! Encoder steps carry `(p, p̄, g)`, decoder steps `(g, d, p̄)`. Power
//! channels are divided by each node's training maximum, irradiance by
//! [`IRRADIANCE_SCALE`].

use std::ops::Range;

use super::{Dataset, IRRADIANCE_SCALE, ROLLING_LAG_FAR, ROLLING_LAG_NEAR, WARMUP_STEPS};
use crate::autodiff::Tensor;
use crate::clearsky::ClearSkyTable;
use crate::error::{invalid, shape_err, Error, Result};
use crate::exec::{self, Exec};
use crate::graph::NodeLocation;

pub const ENCODER_FEATURES: usize = 3;
pub const DECODER_FEATURES: usize = 3;

/// History length `m`, horizon `h` and stride between window starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub m: usize,
    pub h: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(m: usize, h: usize, stride: usize) -> Result<Self> {
        if m == 0 || h == 0 || stride == 0 {
            return Err(invalid(format!(
                "window M={m}, H={h}, stride={stride} must all be >= 1"
            )));
        }
        Ok(Self { m, h, stride })
    }
}

/// One training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFrame {
    /// Index of the first decoder step.
    pub start: usize,
    /// `[M, N, 3]`: (p, p̄, g).
    pub encoder_x: Tensor,
    /// `[H, N, 3]`: (g, d, p̄).
    pub decoder_y: Tensor,
    /// `[H, N]` normalised power.
    pub target: Tensor,
}

impl FeatureFrame {
    pub fn m(&self) -> usize {
        self.encoder_x.shape()[0]
    }

    pub fn h(&self) -> usize {
        self.decoder_y.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.encoder_x.shape()[1]
    }
}

/// Decoder start indices of every window inside `range`.
///
/// The encoder begins no earlier than `max(range.start, WARMUP_STEPS)`, so the
/// rolling mean is defined everywhere; the rolling mean itself may look back
/// before `range.start`.
pub fn window_starts(range: Range<usize>, spec: WindowSpec) -> Vec<usize> {
    let first_enc = range.start.max(WARMUP_STEPS);
    let mut out = Vec::new();
    let mut t = first_enc + spec.m;
    while t + spec.h <= range.end {
        out.push(t);
        t += spec.stride;
    }
    out
}

/// `floor((T - W - M - H) / stride) + 1`, or 0 if no window fits.
pub fn window_count(n_times: usize, spec: WindowSpec) -> usize {
    let need = WARMUP_STEPS + spec.m + spec.h;
    if n_times < need {
        0
    } else {
        (n_times - need) / spec.stride + 1
    }
}

/// Precomputed model inputs for every step of a normalised dataset.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    n_times: usize,
    n_nodes: usize,
    per_node_max: Vec<f64>,
    power: Vec<f64>,
    pbar: Vec<f64>,
    ghi: Vec<f64>,
    dni: Vec<f64>,
}

impl FeatureSet {
    /// Builds features for a dataset that already carries `per_node_max`.
    pub fn build(
        dataset: &Dataset,
        locations: &[NodeLocation],
        linke_turbidity: f64,
        exec: Exec,
    ) -> Result<Self> {
        let n = dataset.n_nodes();
        if locations.len() != n {
            return Err(shape_err(format!(
                "{} locations for {} dataset columns",
                locations.len(),
                n
            )));
        }
        let table = ClearSkyTable::compute(exec, &dataset.timestamps(), locations, linke_turbidity);
        Self::from_parts(dataset, &table, exec)
    }

    /// Builds features from a precomputed clear-sky table.
    pub fn from_parts(dataset: &Dataset, table: &ClearSkyTable, exec: Exec) -> Result<Self> {
        let max = dataset
            .per_node_max()
            .ok_or_else(|| invalid("dataset must be normalised before building features"))?
            .to_vec();
        let (t_len, n) = (dataset.n_times(), dataset.n_nodes());
        if table.n_times() != t_len || table.n_sites() != n {
            return Err(shape_err("clear-sky table does not match dataset"));
        }
        let power: Vec<f64> = dataset
            .power_data()
            .iter()
            .enumerate()
            .map(|(i, p)| p / max[i % n])
            .collect();
        // rolling mean, one node per task, summed directly for exactness
        let count = (ROLLING_LAG_FAR - ROLLING_LAG_NEAR) as f64;
        let nodes: Vec<usize> = (0..n).collect();
        let columns = exec::map(exec, &nodes, |&v| {
            (0..t_len)
                .map(|t| {
                    if t < WARMUP_STEPS {
                        return 0.0;
                    }
                    let s: f64 = (t - ROLLING_LAG_FAR..t - ROLLING_LAG_NEAR)
                        .map(|s| dataset.power(s, v))
                        .sum();
                    s / count / max[v]
                })
                .collect::<Vec<f64>>()
        });
        let mut pbar = vec![0.0; t_len * n];
        for (v, col) in columns.iter().enumerate() {
            for (t, x) in col.iter().enumerate() {
                pbar[t * n + v] = *x;
            }
        }
        let ghi = table
            .ghi_data()
            .iter()
            .map(|g| g / IRRADIANCE_SCALE)
            .collect();
        let dni = table
            .dni_data()
            .iter()
            .map(|d| d / IRRADIANCE_SCALE)
            .collect();
        Ok(Self {
            n_times: t_len,
            n_nodes: n,
            per_node_max: max,
            power,
            pbar,
            ghi,
            dni,
        })
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn per_node_max(&self) -> &[f64] {
        &self.per_node_max
    }

    /// Normalised power.
    pub fn power(&self, t: usize, v: usize) -> f64 {
        self.power[t * self.n_nodes + v]
    }

    /// Normalised rolling mean (meaningful for `t >= WARMUP_STEPS`).
    pub fn pbar(&self, t: usize, v: usize) -> f64 {
        self.pbar[t * self.n_nodes + v]
    }

    /// Clear-sky GHI divided by the irradiance scale.
    pub fn ghi(&self, t: usize, v: usize) -> f64 {
        self.ghi[t * self.n_nodes + v]
    }

    pub fn dni(&self, t: usize, v: usize) -> f64 {
        self.dni[t * self.n_nodes + v]
    }

    /// Night: the sun is at or below the horizon, so clear-sky GHI is 0.
    pub fn is_night(&self, t: usize, v: usize) -> bool {
        self.ghi(t, v) <= 0.0
    }

    /// The window whose decoder starts at `t`.
    pub fn frame(&self, t: usize, m: usize, h: usize) -> Result<FeatureFrame> {
        if t < m || t - m < WARMUP_STEPS || t + h > self.n_times {
            return Err(Error::Window(format!(
                "window at step {t} with M={m}, H={h} needs steps {}..{} (warm-up {WARMUP_STEPS}, length {})",
                t as i64 - m as i64,
                t + h,
                self.n_times
            )));
        }
        let n = self.n_nodes;
        let mut enc = Vec::with_capacity(m * n * ENCODER_FEATURES);
        for tau in t - m..t {
            for v in 0..n {
                enc.extend([self.power(tau, v), self.pbar(tau, v), self.ghi(tau, v)]);
            }
        }
        let mut dec = Vec::with_capacity(h * n * DECODER_FEATURES);
        let mut target = Vec::with_capacity(h * n);
        for tau in t..t + h {
            for v in 0..n {
                dec.extend([self.ghi(tau, v), self.dni(tau, v), self.pbar(tau, v)]);
                target.push(self.power(tau, v));
            }
        }
        Ok(FeatureFrame {
            start: t,
            encoder_x: Tensor::new(&[m, n, ENCODER_FEATURES], enc)?,
            decoder_y: Tensor::new(&[h, n, DECODER_FEATURES], dec)?,
            target: Tensor::new(&[h, n], target)?,
        })
    }
}

/// All windows of `spec` within `range`, materialised.
pub fn make_windows(
    features: &FeatureSet,
    range: Range<usize>,
    spec: WindowSpec,
) -> Result<Vec<FeatureFrame>> {
    window_starts(range, spec)
        .into_iter()
        .map(|t| features.frame(t, spec.m, spec.h))
        .collect()
}
