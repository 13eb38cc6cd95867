//! Experiment configuration file (JSON).

use crate::CliError;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSource {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SearchSettings {
    pub layouts: Option<Vec<Vec<usize>>>,
    pub dropout_min: Option<f64>,
    pub dropout_max: Option<f64>,
    pub runs_per_embedding: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    /// How many best-dev runs feed each report cell.
    pub top_k: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DataSource>,
    #[serde(default)]
    pub embeddings: Vec<DataSource>,
    #[serde(default = "default_scenario_seed")]
    pub scenario_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub search: SearchSettings,
}

fn default_scenario_seed() -> u64 {
    42
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.datasets.is_empty() {
            return Err(CliError::Config("no datasets configured".into()));
        }
        let mut seen = HashSet::new();
        for src in self.datasets.iter().chain(&self.embeddings) {
            if !seen.insert(&src.id) {
                return Err(CliError::Config(format!("duplicate id {:?}", src.id)));
            }
            if !src.path.exists() {
                return Err(CliError::Config(format!(
                    "path for {:?} does not exist: {}",
                    src.id,
                    src.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn dataset(&self, id: &str) -> Result<&DataSource, CliError> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| CliError::Config(format!("dataset {id:?} not in config")))
    }
}
