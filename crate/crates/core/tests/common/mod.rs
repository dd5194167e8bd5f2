//! Fixtures shared by integration test targets.
#![allow(dead_code)]

use pvgnn::datagen::{
    make_windows, normalize, CloudParams, FeatureFrame, FeatureSet, SyntheticConfig, WindowSpec,
    STEPS_PER_DAY, WARMUP_STEPS,
};
use pvgnn::exec::Exec;
use pvgnn::graph::build_knn_graph;
use pvgnn::model::ModelKind;
use pvgnn::train::{Prepared, TrainConfig};

/// Clear-sky days simulated before the two training days, covering the
/// rolling-mean warm-up.
pub const WARMUP_DAYS: usize = WARMUP_STEPS / STEPS_PER_DAY;

/// Three plants, cloudless sky, windows covering two days after warm-up.
pub fn overfit_task(m: usize, h: usize) -> (Prepared, Vec<FeatureFrame>) {
    let cfg = SyntheticConfig {
        n_nodes: 3,
        days: WARMUP_DAYS + 2,
        seed: 3,
        along_km: 30.0,
        across_km: 15.0,
        clouds: CloudParams::clear_sky(),
        ..SyntheticConfig::default()
    };
    let (plants, data, _) = cfg.generate().unwrap();
    let locations: Vec<_> = plants.iter().map(|p| p.location).collect();
    let all = 0..data.n_times();
    let dataset = normalize(&data, all.clone()).unwrap();
    let features = FeatureSet::build(&dataset, &locations, 3.0, Exec::default()).unwrap();
    let graph = build_knn_graph(&locations, 2).unwrap();
    let train_range = WARMUP_STEPS..data.n_times();
    let frames = make_windows(
        &features,
        train_range.clone(),
        WindowSpec::new(m, h, 1).unwrap(),
    )
    .unwrap();
    let prepared = Prepared {
        dataset,
        features,
        graph,
        train_range: train_range.clone(),
        eval_range: train_range,
    };
    (prepared, frames)
}

/// Settings for the overfit task: desk model dimensions, 3000 steps, lr 1e-3.
pub fn overfit_config(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        iterations: 3000,
        lr: 1e-3,
        batch_size: 16,
        k_neighbors: 2,
        seed: 1,
        ..TrainConfig::desk(kind)
    }
}
