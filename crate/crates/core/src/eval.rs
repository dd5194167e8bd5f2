//! Night-masked error metrics, persistence baselines, per-step reports and
//! the nearest-neighbour distance analysis.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datagen::{
    make_windows, FeatureFrame, FeatureSet, WindowSpec, IRRADIANCE_SCALE, STEP_MINUTES,
};
use crate::error::{shape_err, Error, Result};
use crate::exec::{self, Exec};
use crate::graph::Graph;

/// Horizon steps reported as snapshots: 15 min, 1 h, 3 h, 6 h.
pub const SNAPSHOT_STEPS: [usize; 4] = [1, 4, 12, 24];
/// Steps used by the distance analysis: 1 h, 3 h, 6 h.
pub const DISTANCE_STEPS: [usize; 3] = [4, 12, 24];
/// Floor on clear-sky GHI in the clear-sky-index baseline, W/m².
pub const CSI_EPSILON_WM2: f64 = 1.0;

/// Sum of squared errors over all entries.
pub fn sse_loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(shape_err(format!(
            "loss: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

fn check_lengths(pred: &[f64], truth: &[f64], night: &[bool]) -> Result<()> {
    if pred.len() != truth.len() || pred.len() != night.len() {
        return Err(shape_err(format!(
            "metric inputs of length {}, {}, {}",
            pred.len(),
            truth.len(),
            night.len()
        )));
    }
    Ok(())
}

/// Root mean squared error over daytime entries, as a fraction of `p_max`.
pub fn nrmse(pred: &[f64], truth: &[f64], p_max: f64, night: &[bool]) -> Result<f64> {
    check_lengths(pred, truth, night)?;
    if !(p_max > 0.0) {
        return Err(Error::UndefinedMetric(format!("p_max = {p_max}")));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((p, t), &n) in pred.iter().zip(truth).zip(night) {
        if !n {
            let e = (p - t) / p_max;
            sum += e * e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(
            "every entry is masked as night".into(),
        ));
    }
    Ok((sum / count as f64).sqrt())
}

/// Absolute error over daytime entries as a fraction of daytime production.
pub fn nmae(pred: &[f64], truth: &[f64], night: &[bool]) -> Result<f64> {
    check_lengths(pred, truth, night)?;
    let (mut err, mut total) = (0.0, 0.0);
    for ((p, t), &n) in pred.iter().zip(truth).zip(night) {
        if !n {
            err += (p - t).abs();
            total += t;
        }
    }
    if !(total > 0.0) {
        return Err(Error::UndefinedMetric(
            "no daytime production to normalise by".into(),
        ));
    }
    Ok(err / total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    PowerPersistence,
    ClearSkyIndexPersistence,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [
        BaselineKind::PowerPersistence,
        BaselineKind::ClearSkyIndexPersistence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::PowerPersistence => "power-persistence",
            BaselineKind::ClearSkyIndexPersistence => "csi-persistence",
        }
    }
}

/// Persistence forecast `[H, N]` in normalised power units.
///
/// Power persistence repeats `p(t-1)`. Clear-sky-index persistence scales
/// future clear-sky GHI by `p(t-1) / max(g(t-1), ε)`.
pub fn baseline_forecast(kind: BaselineKind, frame: &FeatureFrame) -> Tensor {
    let (m, h, n) = (frame.m(), frame.h(), frame.n_nodes());
    let eps = CSI_EPSILON_WM2 / IRRADIANCE_SCALE;
    Tensor::from_fn(&[h, n], |i| {
        let (step, v) = (i / n, i % n);
        let p_last = frame.encoder_x.at(&[m - 1, v, 0]);
        match kind {
            BaselineKind::PowerPersistence => p_last,
            BaselineKind::ClearSkyIndexPersistence => {
                let g_last = frame.encoder_x.at(&[m - 1, v, 2]);
                p_last / g_last.max(eps) * frame.decoder_y.at(&[step, v, 0])
            }
        }
    })
}

/// Evaluation windows plus the constants every forecaster is scored with.
/// All forecasters evaluated against one `EvalSet` see identical windows.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub frames: Vec<FeatureFrame>,
    pub h: usize,
    pub n_nodes: usize,
    /// Training maxima (kW) used to undo normalisation.
    pub per_node_max: Vec<f64>,
    /// Maximum power (kW) over the evaluation period, per node.
    pub p_max: Vec<f64>,
    /// `[window][step][node]` night flags.
    night: Vec<bool>,
}

impl EvalSet {
    pub fn new(features: &FeatureSet, range: Range<usize>, spec: WindowSpec) -> Result<Self> {
        let frames = make_windows(features, range.clone(), spec)?;
        if frames.is_empty() {
            return Err(Error::Window(format!(
                "no evaluation windows with M={}, H={} in rows {:?}",
                spec.m, spec.h, range
            )));
        }
        let n = features.n_nodes();
        let per_node_max = features.per_node_max().to_vec();
        let p_max = (0..n)
            .map(|v| {
                range
                    .clone()
                    .map(|t| features.power(t, v) * per_node_max[v])
                    .fold(0.0, f64::max)
            })
            .collect();
        let mut night = Vec::with_capacity(frames.len() * spec.h * n);
        for f in &frames {
            for i in 0..spec.h {
                for v in 0..n {
                    night.push(features.is_night(f.start + i, v));
                }
            }
        }
        Ok(Self {
            frames,
            h: spec.h,
            n_nodes: n,
            per_node_max,
            p_max,
            night,
        })
    }

    /// The windows for which `keep` holds, with their night flags.
    pub fn filtered(&self, keep: impl Fn(&FeatureFrame) -> bool) -> Result<Self> {
        let block = self.h * self.n_nodes;
        let (mut frames, mut night) = (Vec::new(), Vec::new());
        for (k, f) in self.frames.iter().enumerate() {
            if keep(f) {
                frames.push(f.clone());
                night.extend_from_slice(&self.night[k * block..(k + 1) * block]);
            }
        }
        if frames.is_empty() {
            return Err(Error::Window("filter removed every window".into()));
        }
        Ok(Self {
            frames,
            night,
            per_node_max: self.per_node_max.clone(),
            p_max: self.p_max.clone(),
            ..*self
        })
    }

    /// Scores normalised `[H, N]` predictions, one per frame. Predictions are
    /// clipped at zero before scoring.
    pub fn score(&self, name: &str, predictions: &[Tensor]) -> Result<MetricsReport> {
        if predictions.len() != self.frames.len() {
            return Err(shape_err(format!(
                "{} predictions for {} windows",
                predictions.len(),
                self.frames.len()
            )));
        }
        let (h, n, w) = (self.h, self.n_nodes, self.frames.len());
        for p in predictions {
            if p.shape() != [h, n] {
                return Err(shape_err(format!(
                    "prediction {:?}, expected [{h}, {n}]",
                    p.shape()
                )));
            }
        }
        let mut out_nrmse = vec![0.0; n * h];
        let mut out_nmae = vec![0.0; n * h];
        let (mut pred, mut truth, mut night) = (vec![0.0; w], vec![0.0; w], vec![false; w]);
        for v in 0..n {
            let scale = self.per_node_max[v];
            for i in 0..h {
                for (k, (f, p)) in self.frames.iter().zip(predictions).enumerate() {
                    pred[k] = p.at(&[i, v]).max(0.0) * scale;
                    truth[k] = f.target.at(&[i, v]) * scale;
                    night[k] = self.night[(k * h + i) * n + v];
                }
                out_nrmse[v * h + i] = nrmse(&pred, &truth, self.p_max[v], &night)?;
                out_nmae[v * h + i] = nmae(&pred, &truth, &night)?;
            }
        }
        Ok(MetricsReport {
            name: name.to_string(),
            n_nodes: n,
            h,
            nrmse: out_nrmse,
            nmae: out_nmae,
        })
    }

    /// Runs `predict` on every window (in parallel when enabled) and scores it.
    pub fn evaluate<F>(&self, name: &str, exec: Exec, predict: F) -> Result<MetricsReport>
    where
        F: Fn(&FeatureFrame) -> Result<Tensor> + Sync + Send,
    {
        let preds = exec::map(exec, &self.frames, &predict)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        self.score(name, &preds)
    }

    pub fn evaluate_baseline(&self, kind: BaselineKind) -> Result<MetricsReport> {
        let preds: Vec<Tensor> = self
            .frames
            .iter()
            .map(|f| baseline_forecast(kind, f))
            .collect();
        self.score(kind.name(), &preds)
    }
}

/// Per-node, per-step NRMSE and NMAE, stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub n_nodes: usize,
    pub h: usize,
    pub nrmse: Vec<f64>,
    pub nmae: Vec<f64>,
}

/// Median and quartiles over nodes at one horizon step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub horizon_minutes: i64,
    pub nrmse_median: f64,
    pub nrmse_q25: f64,
    pub nrmse_q75: f64,
    pub nmae_median: f64,
    pub nmae_q25: f64,
    pub nmae_q75: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub name: String,
    pub steps: Vec<StepSummary>,
    /// The rows of `steps` at [`SNAPSHOT_STEPS`] within the horizon.
    pub snapshots: Vec<StepSummary>,
}

/// Linear-interpolation quantile of a non-empty sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl MetricsReport {
    /// NRMSE of node `v` at 1-based horizon `step`.
    pub fn nrmse_at(&self, v: usize, step: usize) -> f64 {
        self.nrmse[v * self.h + step - 1]
    }

    pub fn nmae_at(&self, v: usize, step: usize) -> f64 {
        self.nmae[v * self.h + step - 1]
    }

    /// NRMSE over nodes at a 1-based horizon step.
    pub fn nrmse_step(&self, step: usize) -> Vec<f64> {
        (0..self.n_nodes).map(|v| self.nrmse_at(v, step)).collect()
    }

    pub fn nmae_step(&self, step: usize) -> Vec<f64> {
        (0..self.n_nodes).map(|v| self.nmae_at(v, step)).collect()
    }

    /// Median NRMSE over nodes for each step `1..=H`.
    pub fn median_nrmse(&self) -> Vec<f64> {
        (1..=self.h)
            .map(|s| quantile(&self.nrmse_step(s), 0.5))
            .collect()
    }

    pub fn summary(&self) -> ReportSummary {
        let steps: Vec<StepSummary> = (1..=self.h)
            .map(|s| {
                let (r, a) = (self.nrmse_step(s), self.nmae_step(s));
                StepSummary {
                    step: s,
                    horizon_minutes: s as i64 * STEP_MINUTES,
                    nrmse_median: quantile(&r, 0.5),
                    nrmse_q25: quantile(&r, 0.25),
                    nrmse_q75: quantile(&r, 0.75),
                    nmae_median: quantile(&a, 0.5),
                    nmae_q25: quantile(&a, 0.25),
                    nmae_q75: quantile(&a, 0.75),
                }
            })
            .collect();
        let snapshots = SNAPSHOT_STEPS
            .iter()
            .filter(|&&s| s <= self.h)
            .map(|&s| steps[s - 1])
            .collect();
        ReportSummary {
            name: self.name.clone(),
            steps,
            snapshots,
        }
    }

    /// CSV rows `node,step,horizon_minutes,nrmse,nmae`, H rows per node.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "step", "horizon_minutes", "nrmse", "nmae"])?;
        for v in 0..self.n_nodes {
            for s in 1..=self.h {
                w.write_record([
                    v.to_string(),
                    s.to_string(),
                    (s as i64 * STEP_MINUTES).to_string(),
                    self.nrmse_at(v, s).to_string(),
                    self.nmae_at(v, s).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Distance to a node's closest neighbour against its NRMSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceErrorRow {
    pub node: usize,
    pub nearest_km: f64,
    /// `(step, nrmse)` for each of [`DISTANCE_STEPS`] within the horizon.
    pub nrmse: Vec<(usize, f64)>,
}

pub fn distance_error_analysis(
    report: &MetricsReport,
    graph: &Graph,
) -> Result<Vec<DistanceErrorRow>> {
    if graph.n_nodes() != report.n_nodes {
        return Err(shape_err(format!(
            "graph has {} nodes, report {}",
            graph.n_nodes(),
            report.n_nodes
        )));
    }
    let nearest = graph.nearest_neighbor_km();
    Ok(nearest
        .into_iter()
        .enumerate()
        .map(|(v, d)| DistanceErrorRow {
            node: v,
            nearest_km: d,
            nrmse: DISTANCE_STEPS
                .iter()
                .filter(|&&s| s <= report.h)
                .map(|&s| (s, report.nrmse_at(v, s)))
                .collect(),
        })
        .collect())
}

/// CSV with columns `node,nearest_km,nrmse_step<s>...`.
pub fn write_distance_csv(rows: &[DistanceErrorRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut header = vec!["node".to_string(), "nearest_km".to_string()];
        header.extend(first.nrmse.iter().map(|(s, _)| format!("nrmse_step{s}")));
        w.write_record(&header)?;
    }
    for r in rows {
        let mut rec = vec![r.node.to_string(), r.nearest_km.to_string()];
        rec.extend(r.nrmse.iter().map(|(_, e)| e.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
