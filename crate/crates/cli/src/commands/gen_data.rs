use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use pvgnn::datagen::{write_csv, write_plants, CloudParams, SyntheticConfig};
use serde::{Deserialize, Serialize};

use crate::config::{self, Overrides};
use crate::error::{usage, CliError, Result};
use crate::manifest::ManifestBuilder;

pub const POWER_FILE: &str = "power.csv";
pub const PLANTS_FILE: &str = "plants.json";

/// The knobs exposed for synthetic data; everything else keeps the
/// library defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub nodes: usize,
    pub days: usize,
    pub seed: u64,
    pub wind_kmh: f64,
    /// Cloud blobs per 1000 km²; 0 gives a clear sky.
    pub clouds: f64,
    pub along_km: f64,
    pub across_km: f64,
    pub start: DateTime<Utc>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            nodes: s.n_nodes,
            days: s.days,
            seed: s.seed,
            wind_kmh: s.clouds.wind_kmh,
            clouds: s.clouds.density_per_1000km2,
            along_km: s.along_km,
            across_km: s.across_km,
            start: s.start,
        }
    }
}

impl GenDataConfig {
    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_nodes: self.nodes,
            days: self.days,
            seed: self.seed,
            start: self.start,
            along_km: self.along_km,
            across_km: self.across_km,
            clouds: CloudParams {
                wind_kmh: self.wind_kmh,
                density_per_1000km2: self.clouds,
                ..CloudParams::default()
            },
            ..SyntheticConfig::default()
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GenDataFlags {
    pub nodes: Option<usize>,
    pub days: Option<usize>,
    pub seed: Option<u64>,
    pub wind_kmh: Option<f64>,
    pub clouds: Option<f64>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn resolve(flags: &GenDataFlags) -> Result<GenDataConfig> {
    let file = match &flags.config {
        Some(p) => config::read(p)?,
        None => Overrides::new(),
    };
    let mut cfg = config::apply(&GenDataConfig::default(), &file)?;
    if let Some(v) = flags.nodes {
        cfg.nodes = v;
    }
    if let Some(v) = flags.days {
        cfg.days = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.wind_kmh {
        cfg.wind_kmh = v;
    }
    if let Some(v) = flags.clouds {
        cfg.clouds = v;
    }
    if !(cfg.clouds >= 0.0) {
        return Err(usage(format!("--clouds {} must be >= 0", cfg.clouds)));
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

pub fn run(flags: &GenDataFlags) -> Result<()> {
    let cfg = resolve(flags)?;
    let inputs = flags.config.iter().cloned().collect();
    let manifest = ManifestBuilder::start("gen-data", &cfg, cfg.seed, inputs)?;
    let (plants, data, _) = cfg.synthetic().generate()?;

    fs::create_dir_all(&flags.out).map_err(|e| CliError::io(&flags.out, e))?;
    write_csv(&data, create(&flags.out.join(POWER_FILE))?)?;
    write_plants(&plants, create(&flags.out.join(PLANTS_FILE))?)?;
    manifest.finish(&flags.out, vec![POWER_FILE.into(), PLANTS_FILE.into()])?;

    let caps: Vec<f64> = plants.iter().map(|p| p.capacity_kw).collect();
    let (lo, hi) = caps.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &c| {
        (lo.min(c), hi.max(c))
    });
    println!(
        "N = {} plants, T = {} steps ({} days from {})",
        data.n_nodes(),
        data.n_times(),
        cfg.days,
        data.start().format("%Y-%m-%d %H:%M UTC")
    );
    println!(
        "capacity kW: min {lo:.1}, mean {:.1}, max {hi:.1}",
        caps.iter().sum::<f64>() / caps.len() as f64
    );
    println!("wrote {}", flags.out.display());
    Ok(())
}
