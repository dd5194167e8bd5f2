pub mod eval;
pub mod gen_data;
pub mod train;

use std::path::{Path, PathBuf};

use pvgnn::datagen::{load_csv, read_plants, Dataset, PlantSpec};

use crate::error::{usage, CliError, Result};
use gen_data::{PLANTS_FILE, POWER_FILE};

/// A data directory as written by `gen-data`: `power.csv` and `plants.json`.
pub struct DataDir {
    pub dataset: Dataset,
    pub plants: Vec<PlantSpec>,
    pub files: Vec<PathBuf>,
}

pub fn load_data_dir(dir: &Path) -> Result<DataDir> {
    if !dir.is_dir() {
        return Err(CliError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        ));
    }
    let (power, plants_path) = (dir.join(POWER_FILE), dir.join(PLANTS_FILE));
    for p in [&power, &plants_path] {
        if !p.is_file() {
            return Err(CliError::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "missing input file"),
            ));
        }
    }
    let dataset = load_csv(&power)?;
    let plants = read_plants(&plants_path)?;
    if plants.len() != dataset.n_nodes() {
        return Err(usage(format!(
            "{} lists {} plants but {} has {} node columns",
            plants_path.display(),
            plants.len(),
            power.display(),
            dataset.n_nodes()
        )));
    }
    Ok(DataDir {
        dataset,
        plants,
        files: vec![power, plants_path],
    })
}
