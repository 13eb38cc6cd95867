//! Versioned model checkpoints: every named parameter matrix with its shape
//! plus the config, as JSON. f64 values round-trip bit-exactly through the
//! shortest-representation float encoding.

use super::{ModelConfig, ModelError, TaskModel};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub input_dim: usize,
    /// (task id, tag count) in head order.
    pub tasks: Vec<(String, usize)>,
    /// (name, matrix) in store order.
    pub params: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn from_model(model: &TaskModel) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            input_dim: model.input_dim,
            tasks: model.tasks().map(|(t, k)| (t.to_string(), k)).collect(),
            params: model
                .params
                .iter()
                .map(|(n, m)| (n.to_string(), m.clone()))
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<TaskModel, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::CheckpointFormat(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut model = TaskModel::new(self.config.clone(), self.input_dim, &self.tasks);
        if model.params.len() != self.params.len() {
            return Err(ModelError::CheckpointFormat(format!(
                "parameter count {} does not match model layout {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (name, mat) in self.params {
            let idx = model.params.index_of(&name).ok_or_else(|| {
                ModelError::CheckpointFormat(format!("unknown parameter {name:?}"))
            })?;
            if !model.params.get(idx).same_shape(&mat) {
                return Err(ModelError::CheckpointFormat(format!(
                    "shape mismatch for {name:?}"
                )));
            }
            *model.params.get_mut(idx) = mat;
        }
        Ok(model)
    }
}

/// Atomic write: serialize next to the target, then rename over it.
pub fn save_checkpoint(path: &Path, model: &TaskModel) -> Result<(), ModelError> {
    let cp = Checkpoint::from_model(model);
    let json = serde_json::to_string(&cp)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TaskModel, ModelError> {
    let json = std::fs::read_to_string(path)?;
    let cp: Checkpoint = serde_json::from_str(&json)?;
    cp.into_model()
}
