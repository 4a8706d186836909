use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BicError, Result};
use crate::numerics::{Real, Tensor};

use super::{BicModel, InputSpec, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "bic-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    pub inputs: InputSpec,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model<R: Real>(model: &BicModel<R>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: VERSION,
            seed: model.config.seed,
            config: model.config.clone(),
            inputs: model.spec.clone(),
            params: model
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.tensor.shape(),
                    values: p.tensor.to_f64(),
                })
                .collect(),
        }
    }

    pub fn into_model<R: Real>(self) -> Result<BicModel<R>> {
        if self.format != CHECKPOINT_FORMAT || self.version != VERSION {
            return Err(BicError::Integrity(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut model = BicModel::<R>::new(self.config, self.inputs)?;
        if self.params.len() != model.params.len() {
            return Err(BicError::Integrity(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for p in self.params {
            let id = model
                .params
                .id(&p.name)
                .ok_or_else(|| BicError::Integrity(format!("unexpected parameter `{}`", p.name)))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != p.shape {
                return Err(BicError::Integrity(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    p.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(p.shape[0], p.shape[1], p.values.into_iter().map(R::lit).collect())?;
        }
        Ok(model)
    }
}

pub fn save_checkpoint<R: Real>(model: &BicModel<R>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint::from_model(model))?;
    std::fs::write(path, json).map_err(|e| BicError::io(path, e))
}

/// Reads and parses a checkpoint file without building the model.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| BicError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| BicError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<BicModel<R>> {
    read_checkpoint(path)?.into_model()
}
