//! Training: data preparation, seeded batch sampling and Adam updates.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Gradients};
use crate::clearsky::DEFAULT_LINKE_TURBIDITY;
use crate::datagen::{
    make_windows, normalize, split_by_days, Dataset, FeatureFrame, FeatureSet, WindowSpec,
};
use crate::error::{invalid, Error, Result};
use crate::exec::{self, Exec};
use crate::gclstm::GclstmConfig;
use crate::gctrafo::GctrafoConfig;
use crate::graph::{build_knn_graph_with, Graph, NodeLocation};
use crate::model::{Forecaster, ModelConfig, ModelKind, ModelMeta};

/// Added to the seed for the batch-sampling stream, keeping it independent
/// of parameter initialisation.
const SAMPLER_STREAM: u64 = 0x5EED_BA7C;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// History length M.
    pub m: usize,
    /// Horizon H.
    pub h: usize,
    /// Chebyshev order K.
    pub order: usize,
    pub k_neighbors: usize,
    pub lat: usize,
    /// Attention heads (GCTrafo only).
    pub heads: usize,
    pub seed: u64,
    pub desk_scale: bool,
    /// Step between consecutive training windows.
    pub stride: usize,
    pub train_fraction: f64,
    pub linke_turbidity: f64,
    pub log_every: usize,
}

impl TrainConfig {
    /// Full-scale hyperparameters for `kind`.
    pub fn full(kind: ModelKind) -> Self {
        let base = Self {
            model: kind,
            iterations: 50_000,
            batch_size: 64,
            lr: 1e-4,
            m: 16,
            h: 24,
            order: 4,
            k_neighbors: 15,
            lat: 32,
            heads: 1,
            seed: 0,
            desk_scale: false,
            stride: 1,
            train_fraction: 0.7,
            linke_turbidity: DEFAULT_LINKE_TURBIDITY,
            log_every: 100,
        };
        match kind {
            ModelKind::Gclstm => base,
            ModelKind::Gctrafo => {
                let c = GctrafoConfig::full();
                Self {
                    iterations: 70_000,
                    order: c.order,
                    k_neighbors: 24,
                    lat: c.lat,
                    heads: c.heads,
                    ..base
                }
            }
        }
    }

    /// Reduced dimensions for a 12-node, single-machine run.
    pub fn desk(kind: ModelKind) -> Self {
        let base = Self {
            iterations: 5000,
            batch_size: 16,
            lr: 1e-3,
            k_neighbors: 4,
            desk_scale: true,
            ..Self::full(kind)
        };
        match kind {
            ModelKind::Gclstm => {
                let c = GclstmConfig::desk();
                Self {
                    order: c.order,
                    lat: c.lat,
                    ..base
                }
            }
            // attention converges more slowly than the recurrent cell
            ModelKind::Gctrafo => Self {
                heads: GctrafoConfig::desk().heads,
                iterations: 10_000,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("m", self.m),
            ("h", self.h),
            ("order", self.order),
            ("k_neighbors", self.k_neighbors),
            ("lat", self.lat),
            ("heads", self.heads),
            ("stride", self.stride),
            ("log_every", self.log_every),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        match self.model {
            ModelKind::Gclstm => ModelConfig::Gclstm(GclstmConfig {
                lat: self.lat,
                order: self.order,
                ..GclstmConfig::full()
            }),
            ModelKind::Gctrafo => ModelConfig::Gctrafo(GctrafoConfig {
                lat: self.lat,
                order: self.order,
                heads: self.heads,
                ..GctrafoConfig::full()
            }),
        }
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.m, self.h, self.stride)
    }
}

/// A normalised dataset with its features, graph and day split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub features: FeatureSet,
    pub graph: Graph,
    pub train_range: Range<usize>,
    pub eval_range: Range<usize>,
}

/// Splits by days, normalises by the training maxima and builds features
/// and the kNN graph.
pub fn prepare(
    dataset: &Dataset,
    locations: &[NodeLocation],
    config: &TrainConfig,
    exec: Exec,
) -> Result<Prepared> {
    config.validate()?;
    let (train_range, eval_range) = split_by_days(dataset.n_times(), config.train_fraction)?;
    let dataset = normalize(dataset, train_range.clone())?;
    let features = FeatureSet::build(&dataset, locations, config.linke_turbidity, exec)?;
    let graph = build_knn_graph_with(exec, locations, config.k_neighbors)?;
    Ok(Prepared {
        dataset,
        features,
        graph,
        train_range,
        eval_range,
    })
}

/// Mean batch loss over one logging interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub forecaster: Forecaster,
    /// Batch loss (mean per-window SSE) at every iteration.
    pub losses: Vec<f64>,
    /// One record per `log_every` iterations.
    pub trace: Vec<LossRecord>,
}

/// Builds an untrained forecaster for `prepared`.
pub fn initial_forecaster(config: &TrainConfig, prepared: &Prepared) -> Result<Forecaster> {
    Forecaster::new(ModelMeta {
        config: config.model_config(),
        m: config.m,
        h: config.h,
        k_neighbors: config.k_neighbors,
        graph: prepared.graph.to_json(),
        per_node_max: prepared.features.per_node_max().to_vec(),
        seed: config.seed,
    })
}

/// Trains on the windows of `prepared.train_range`.
pub fn train(
    config: &TrainConfig,
    prepared: &Prepared,
    exec: Exec,
    on_log: impl FnMut(LossRecord),
) -> Result<TrainOutcome> {
    let frames = make_windows(
        &prepared.features,
        prepared.train_range.clone(),
        config.window_spec()?,
    )?;
    let forecaster = initial_forecaster(config, prepared)?;
    train_frames(config, forecaster, &frames, exec, on_log)
}

/// Runs `config.iterations` Adam steps on batches drawn uniformly (with
/// replacement) from `frames`.
pub fn train_frames(
    config: &TrainConfig,
    mut forecaster: Forecaster,
    frames: &[FeatureFrame],
    exec: Exec,
    mut on_log: impl FnMut(LossRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Window("no training windows".into()));
    }
    let mut sampler = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SAMPLER_STREAM));
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &forecaster.store);
    let weight = 1.0 / config.batch_size as f64;
    let mut losses = Vec::with_capacity(config.iterations);
    let mut trace = Vec::new();
    let mut interval = 0.0;
    for it in 1..=config.iterations {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| sampler.gen_range(0..frames.len()))
            .collect();
        let results = exec::map(exec, &batch, |&i| {
            forecaster.sse_and_grad(&frames[i], weight)
        });
        let mut grads = Gradients::zeros_like(&forecaster.store);
        let mut loss = 0.0;
        for r in results {
            let (sse, g) = r?;
            loss += sse;
            grads.add_assign(&g);
        }
        loss *= weight;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        adam.step(&mut forecaster.store, &grads)?;
        losses.push(loss);
        interval += loss;
        if it % config.log_every == 0 {
            let record = LossRecord {
                iteration: it,
                loss: interval / config.log_every as f64,
            };
            log::info!("iteration {}: loss {:.6}", record.iteration, record.loss);
            on_log(record);
            trace.push(record);
            interval = 0.0;
        }
    }
    Ok(TrainOutcome {
        forecaster,
        losses,
        trace,
    })
}
