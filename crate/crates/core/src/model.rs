//! Model selection, the trained-forecaster bundle and its checkpoint form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    checkpoint, Gradients, ParamId, ParamStore, ParamVars, SparsePattern, Tape, Tensor, Var,
};
use crate::datagen::FeatureFrame;
use crate::error::{invalid, shape_err, Error, Result};
use crate::gclstm::{Gclstm, GclstmConfig};
use crate::gctrafo::{Gctrafo, GctrafoConfig};
use crate::graph::{laplacian, scale_laplacian, Graph, GraphJson, ScaledLaplacian, POWER_ITER_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gclstm,
    Gctrafo,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Gclstm, ModelKind::Gctrafo];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gclstm => "gclstm",
            ModelKind::Gctrafo => "gctrafo",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gclstm" => Ok(ModelKind::Gclstm),
            "gctrafo" => Ok(ModelKind::Gctrafo),
            other => Err(invalid(format!(
                "unknown model {other:?} (expected gclstm or gctrafo)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Gclstm(GclstmConfig),
    Gctrafo(GctrafoConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Gclstm(_) => ModelKind::Gclstm,
            ModelConfig::Gctrafo(_) => ModelKind::Gctrafo,
        }
    }
}

/// Either forecaster, behind one forward signature.
// Built once per run, so the size gap between variants is irrelevant.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum Model {
    Gclstm(Gclstm),
    Gctrafo(Gctrafo),
}

impl Model {
    /// Registers parameters in `store` in a fixed order, so the same config
    /// and seed always produce the same names, shapes and values.
    pub fn build(
        config: &ModelConfig,
        lap: &ScaledLaplacian,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(match config {
            ModelConfig::Gclstm(c) => Model::Gclstm(Gclstm::new(c.clone(), lap, store, rng)?),
            ModelConfig::Gctrafo(c) => Model::Gctrafo(Gctrafo::new(c.clone(), lap, store, rng)?),
        })
    }

    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var, y: Var) -> Result<Var> {
        match self {
            Model::Gclstm(m) => m.forward(tape, vars, x, y),
            Model::Gctrafo(m) => m.forward(tape, vars, x, y),
        }
    }

    pub fn laplacian_ids(&self) -> Vec<ParamId> {
        match self {
            Model::Gclstm(m) => m.laplacian_ids(),
            Model::Gctrafo(m) => m.laplacian_ids(),
        }
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        match self {
            Model::Gclstm(m) => m.pattern(),
            Model::Gctrafo(m) => m.pattern(),
        }
    }
}

/// Everything besides parameter values needed to rebuild a forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    /// History length M.
    pub m: usize,
    /// Horizon H.
    pub h: usize,
    pub k_neighbors: usize,
    pub graph: GraphJson,
    /// Training-period maximum power per node (kW), used to denormalise.
    pub per_node_max: Vec<f64>,
    pub seed: u64,
}

/// A model together with its parameter values.
#[derive(Clone, Debug)]
pub struct Forecaster {
    pub meta: ModelMeta,
    pub model: Model,
    pub store: ParamStore,
}

impl Forecaster {
    /// Fresh parameters initialised from `meta.seed`.
    pub fn new(meta: ModelMeta) -> Result<Self> {
        if meta.m == 0 || meta.h == 0 {
            return Err(invalid(format!(
                "M={} and H={} must be positive",
                meta.m, meta.h
            )));
        }
        let graph = Graph::from_json(&meta.graph)?;
        if meta.per_node_max.len() != graph.n_nodes() {
            return Err(shape_err(format!(
                "{} normalisation constants for {} nodes",
                meta.per_node_max.len(),
                graph.n_nodes()
            )));
        }
        let lap = scale_laplacian(&laplacian(&graph), POWER_ITER_TOL)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        let model = Model::build(&meta.config, &lap, &mut store, &mut rng)?;
        Ok(Self { meta, model, store })
    }

    pub fn n_nodes(&self) -> usize {
        self.meta.per_node_max.len()
    }

    fn check_frame(&self, frame: &FeatureFrame) -> Result<()> {
        if frame.m() != self.meta.m || frame.h() != self.meta.h || frame.n_nodes() != self.n_nodes()
        {
            return Err(shape_err(format!(
                "frame M={}, H={}, N={} but model expects M={}, H={}, N={}",
                frame.m(),
                frame.h(),
                frame.n_nodes(),
                self.meta.m,
                self.meta.h,
                self.n_nodes()
            )));
        }
        Ok(())
    }

    /// Normalised prediction `[H, N]`.
    pub fn predict(&self, frame: &FeatureFrame) -> Result<Tensor> {
        self.check_frame(frame)?;
        let mut tape = Tape::new();
        let vars = tape.bind(&self.store);
        let x = tape.constant(frame.encoder_x.clone());
        let y = tape.constant(frame.decoder_y.clone());
        let out = self.model.forward(&mut tape, &vars, x, y)?;
        Ok(tape.value(out).clone())
    }

    /// Sum of squared errors over horizon and nodes, plus its gradient
    /// scaled by `weight`.
    pub fn sse_and_grad(&self, frame: &FeatureFrame, weight: f64) -> Result<(f64, Gradients)> {
        self.check_frame(frame)?;
        let mut tape = Tape::new();
        let vars = tape.bind(&self.store);
        let x = tape.constant(frame.encoder_x.clone());
        let y = tape.constant(frame.decoder_y.clone());
        let target = tape.constant(frame.target.clone());
        let out = self.model.forward(&mut tape, &vars, x, y)?;
        let diff = tape.sub(out, target)?;
        let sq = tape.mul(diff, diff)?;
        let sse = tape.sum(sq);
        let weighted = tape.scale(sse, weight);
        let mut grads = Gradients::zeros_like(&self.store);
        tape.backward(weighted, &mut grads)?;
        Ok((tape.value(sse).item(), grads))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.store, serde_json::to_value(&self.meta)?)
    }

    /// Rebuilds the model from the manifest and copies values in by name.
    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, saved) = checkpoint::load(dir)?;
        let meta: ModelMeta = serde_json::from_value(manifest.model)?;
        let mut out = Self::new(meta)?;
        if saved.len() != out.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                saved.len(),
                out.store.len()
            )));
        }
        for id in out.store.ids().collect::<Vec<_>>() {
            let name = out.store.name(id).to_string();
            let src = saved
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            out.store
                .set(id, saved.get(src).clone())
                .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
        }
        Ok(out)
    }
}
