use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

const FORMAT: &str = "arft-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<NamedTensor>,
}

/// Writes config and parameters as a JSON document. Floats are written in
/// shortest round-trip form, so loading reproduces every bit.
pub fn save_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let doc = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        config: config.clone(),
        tensors: params
            .named()
            .into_iter()
            .map(|(name, t)| NamedTensor { name, shape: t.shape().to_vec(), data: t.data().to_vec() })
            .collect(),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, &doc)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let doc: Checkpoint = serde_json::from_reader(file)?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(Error::schema(format!("unsupported checkpoint {} v{}", doc.format, doc.version)));
    }
    let mut params = ModelParams::zeros(&doc.config)?;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    if names.len() != doc.tensors.len() {
        return Err(Error::schema(format!(
            "checkpoint holds {} tensors, config implies {}",
            doc.tensors.len(),
            names.len()
        )));
    }
    for ((slot, name), stored) in params.values_mut().into_iter().zip(&names).zip(doc.tensors) {
        if &stored.name != name || stored.shape != slot.shape() {
            return Err(Error::schema(format!(
                "checkpoint tensor '{}' {:?} does not match expected '{name}' {:?}",
                stored.name,
                stored.shape,
                slot.shape()
            )));
        }
        *slot = Tensor::new(stored.shape, stored.data)?;
    }
    Ok((doc.config, params))
}
