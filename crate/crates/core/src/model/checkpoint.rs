use std::path::{Path, PathBuf};

use super::config::ModelConfig;
use super::params::ParameterSet;
use crate::container::{self, CHECKPOINT_MAGIC};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Writes every parameter as a 64-bit record, in sorted path order.
pub fn save<T: Element>(params: &ParameterSet<T>, path: &Path) -> Result<()> {
    let wide: Vec<Tensor<f64>> = params.tensors().iter().map(Tensor::cast).collect();
    let records: Vec<(&str, &Tensor<f64>)> = params.names().iter().map(String::as_str).zip(&wide).collect();
    container::write(path, CHECKPOINT_MAGIC, &records)
}

pub fn to_bytes<T: Element>(params: &ParameterSet<T>) -> Vec<u8> {
    let wide: Vec<Tensor<f64>> = params.tensors().iter().map(Tensor::cast).collect();
    let records: Vec<(&str, &Tensor<f64>)> = params.names().iter().map(String::as_str).zip(&wide).collect();
    container::encode(CHECKPOINT_MAGIC, &records)
}

pub fn load(path: &Path) -> Result<ParameterSet<f64>> {
    ParameterSet::from_entries(container::read(path, CHECKPOINT_MAGIC)?)
}

/// Location of the `key=value` model description stored beside a checkpoint.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

/// Saves the parameters and their model description side by side.
pub fn save_with_config<T: Element>(params: &ParameterSet<T>, config: &ModelConfig, path: &Path) -> Result<()> {
    save(params, path)?;
    let cfg = config_path(path);
    std::fs::write(&cfg, config.to_kv()).map_err(|e| Error::io(&cfg, e))
}

/// Loads a checkpoint with its model description and checks they agree.
pub fn load_with_config(path: &Path) -> Result<(ModelConfig, ParameterSet<f64>)> {
    let params = load(path)?;
    let cfg = config_path(path);
    let text = std::fs::read_to_string(&cfg).map_err(|e| Error::io(&cfg, e))?;
    let config = ModelConfig::from_kv(&text)?;
    params.check_layout(&config)?;
    Ok((config, params))
}
