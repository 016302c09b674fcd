//! Checkpoint directory layout:
//!
//! ```text
//! <dir>/checkpoint.toml          manifest: model config + tensor list
//! <dir>/tensors/<name>.toml      raster header per tensor (f64)
//! <dir>/tensors/<name>.bin
//! ```
//!
//! A tensor of shape `[r, c]` is stored as a `c × r × 1` raster; a vector of
//! length `n` as `n × 1 × 1`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::dataio::raster::{float_bytes, read_float_raster, write_raster};
use crate::dataio::DType;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MANIFEST_FILE: &str = "checkpoint.toml";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    header: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(params: &ModelParams, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let tdir = dir.join("tensors");
    fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    let mut entries = Vec::with_capacity(params.len());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        let (w, h) = match t.shape() {
            [n] => (*n, 1),
            [r, c] => (*c, *r),
            s => return Err(Error::Validation(format!("cannot store tensor {name} of shape {s:?}"))),
        };
        let rel = format!("tensors/{name}.toml");
        write_raster(&dir.join(&rel), w, h, 1, DType::F64, None, float_bytes(t.data(), DType::F64)?)?;
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            header: rel,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: params.config().clone(),
        tensors: entries,
    };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ModelParams> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::load(&path, format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::load(
            &path,
            format!("unsupported checkpoint version {}", manifest.format_version),
        ));
    }
    let mut named = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let (_, values) = read_float_raster(&dir.join(&entry.header))?;
        let t = Tensor::new(entry.shape, values).map_err(|e| Error::load(&path, e.to_string()))?;
        named.push((entry.name, t));
    }
    ModelParams::from_named(manifest.config, named).map_err(|e| Error::load(&path, e.to_string()))
}
