use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use pvgnn::datagen::{normalize_with, split_by_days, FeatureSet, WindowSpec};
use pvgnn::eval::{
    distance_error_analysis, write_distance_csv, BaselineKind, EvalSet, MetricsReport,
    ReportSummary,
};
use pvgnn::exec::Exec;
use pvgnn::graph::Graph;
use pvgnn::model::Forecaster;
use serde::{Deserialize, Serialize};

use super::load_data_dir;
use super::train::CHECKPOINT_DIR;
use crate::error::{usage, CliError, Result};
use crate::manifest::ManifestBuilder;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug)]
pub struct EvalFlags {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub horizon: Option<usize>,
    pub history: Option<usize>,
    pub train_fraction: f64,
    pub linke_turbidity: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EvalRecord {
    checkpoint: PathBuf,
    m: usize,
    h: usize,
    train_fraction: f64,
    linke_turbidity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub windows: usize,
    pub reports: Vec<ReportSummary>,
}

pub fn metrics_file(name: &str) -> String {
    format!("metrics_{name}.csv")
}

/// Accepts either a checkpoint directory or the `train` output directory
/// containing one.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

/// Writes one metrics CSV per report plus a JSON summary of all of them.
/// Returns the file names written, relative to `dir`.
pub fn write_reports(
    dir: &Path,
    windows: usize,
    reports: &[MetricsReport],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    for r in reports {
        let name = metrics_file(&r.name);
        let path = dir.join(&name);
        r.write_csv(BufWriter::new(
            File::create(&path).map_err(|e| CliError::io(&path, e))?,
        ))?;
        written.push(name.into());
    }
    let summary = EvalSummary {
        windows,
        reports: reports.iter().map(MetricsReport::summary).collect(),
    };
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary)?)
        .map_err(|e| CliError::io(&path, e))?;
    written.push(SUMMARY_FILE.into());
    Ok(written)
}

fn print_table(reports: &[MetricsReport]) {
    let snaps: Vec<_> = reports.iter().map(|r| r.summary()).collect();
    let Some(first) = snaps.first() else { return };
    let mut header = format!("{:<20}", "median NRMSE");
    for s in &first.snapshots {
        header.push_str(&format!("{:>10}", format!("{} min", s.horizon_minutes)));
    }
    println!("{header}");
    for s in &snaps {
        let mut line = format!("{:<20}", s.name);
        for x in &s.snapshots {
            line.push_str(&format!("{:>10.4}", x.nrmse_median));
        }
        println!("{line}");
    }
}

pub fn run(flags: &EvalFlags) -> Result<()> {
    let ckpt = checkpoint_dir(&flags.checkpoint);
    let forecaster = Forecaster::load(&ckpt)?;
    let (m, h) = (forecaster.meta.m, forecaster.meta.h);
    if let Some(fh) = flags.horizon.filter(|&fh| fh != h) {
        return Err(usage(format!(
            "--horizon {fh} does not match the checkpoint's H = {h}"
        )));
    }
    if let Some(fm) = flags.history.filter(|&fm| fm != m) {
        return Err(usage(format!(
            "--history {fm} does not match the checkpoint's M = {m}"
        )));
    }
    let data = load_data_dir(&flags.data)?;
    if data.dataset.n_nodes() != forecaster.n_nodes() {
        return Err(usage(format!(
            "dataset has {} nodes, checkpoint was trained on {}",
            data.dataset.n_nodes(),
            forecaster.n_nodes()
        )));
    }
    let record = EvalRecord {
        checkpoint: ckpt.clone(),
        m,
        h,
        train_fraction: flags.train_fraction,
        linke_turbidity: flags.linke_turbidity,
    };
    let mut inputs = data.files.clone();
    inputs.extend([ckpt.join("manifest.json"), ckpt.join("params.bin")]);
    let manifest = ManifestBuilder::start("eval", &record, forecaster.meta.seed, inputs)?;

    let dataset = normalize_with(&data.dataset, &forecaster.meta.per_node_max)?;
    let locations: Vec<_> = data.plants.iter().map(|p| p.location).collect();
    let exec = Exec::default();
    let features = FeatureSet::build(&dataset, &locations, flags.linke_turbidity, exec)?;
    let (_, eval_range) = split_by_days(dataset.n_times(), flags.train_fraction)?;
    let eval_set = EvalSet::new(&features, eval_range, WindowSpec::new(m, h, 1)?)?;

    let name = forecaster.meta.config.kind().to_string();
    let mut reports = vec![eval_set.evaluate(&name, exec, |f| forecaster.predict(f))?];
    for kind in BaselineKind::ALL {
        reports.push(eval_set.evaluate_baseline(kind)?);
    }
    let mut outputs = write_reports(&flags.out, eval_set.frames.len(), &reports)?;

    let graph = Graph::from_json(&forecaster.meta.graph)?;
    let rows = distance_error_analysis(&reports[0], &graph)?;
    let dist = format!("distance_{name}.csv");
    let path = flags.out.join(&dist);
    write_distance_csv(
        &rows,
        File::create(&path).map_err(|e| CliError::io(&path, e))?,
    )?;
    outputs.push(dist.into());
    manifest.finish(&flags.out, outputs)?;

    println!("{} evaluation windows, H = {h}", eval_set.frames.len());
    print_table(&reports);
    Ok(())
}
