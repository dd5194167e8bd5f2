use std::fs;
use std::path::{Path, PathBuf};

use pvgnn::exec::Exec;
use pvgnn::model::ModelKind;
use pvgnn::train::{prepare, train, LossRecord, TrainConfig};

use super::load_data_dir;
use crate::config::{self, Overrides};
use crate::error::{usage, CliError, Result};
use crate::manifest::ManifestBuilder;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRACE_FILE: &str = "loss_trace.csv";

#[derive(Clone, Debug, Default)]
pub struct TrainFlags {
    pub data: PathBuf,
    pub model: Option<ModelKind>,
    pub desk_scale: bool,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

/// Profile defaults, then the config file, then flags.
pub fn resolve(flags: &TrainFlags) -> Result<TrainConfig> {
    let file = match &flags.config {
        Some(p) => config::read(p)?,
        None => Overrides::new(),
    };
    let model = match (flags.model, file.get("model")) {
        (Some(m), _) => m,
        (None, Some(m)) => m.parse()?,
        (None, None) => return Err(usage("--model is required (gclstm or gctrafo)")),
    };
    let desk = flags.desk_scale
        || match file.get("desk_scale") {
            Some(v) => v
                .parse()
                .map_err(|_| usage(format!("desk_scale = {v:?}: expected true or false")))?,
            None => false,
        };
    let base = if desk {
        TrainConfig::desk(model)
    } else {
        TrainConfig::full(model)
    };
    let mut cfg = config::apply(&base, &file)?;
    cfg.model = model;
    cfg.desk_scale = desk;
    if let Some(v) = flags.iters {
        cfg.iterations = v;
    }
    if let Some(v) = flags.lr {
        cfg.lr = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn write_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut text = String::from("iteration,loss\n");
    for r in trace {
        text.push_str(&format!("{},{}\n", r.iteration, r.loss));
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn run(flags: &TrainFlags) -> Result<()> {
    let cfg = resolve(flags)?;
    let data = load_data_dir(&flags.data)?;
    let mut inputs = data.files.clone();
    inputs.extend(flags.config.iter().cloned());
    let manifest = ManifestBuilder::start("train", &cfg, cfg.seed, inputs)?;

    let locations: Vec<_> = data.plants.iter().map(|p| p.location).collect();
    let exec = Exec::default();
    let prepared = prepare(&data.dataset, &locations, &cfg, exec)?;
    eprintln!(
        "training {} for {} iterations on {} nodes ({} training rows)",
        cfg.model,
        cfg.iterations,
        data.dataset.n_nodes(),
        prepared.train_range.len()
    );
    let outcome = train(&cfg, &prepared, exec, |r| {
        eprintln!("iteration {:>6}  loss {:.6}", r.iteration, r.loss)
    })?;

    fs::create_dir_all(&flags.out).map_err(|e| CliError::io(&flags.out, e))?;
    outcome.forecaster.save(&flags.out.join(CHECKPOINT_DIR))?;
    write_trace(&flags.out.join(TRACE_FILE), &outcome.trace)?;
    manifest.finish(&flags.out, vec![CHECKPOINT_DIR.into(), TRACE_FILE.into()])?;
    let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "final batch loss {last:.6}; checkpoint in {}",
        flags.out.join(CHECKPOINT_DIR).display()
    );
    Ok(())
}
