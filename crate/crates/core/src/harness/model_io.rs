//! Binary model files.
//!
//! Layout: the magic `FSDAMDL1`, a little-endian `u64` length followed by a
//! JSON manifest (encoder config plus tensor names and shapes), then every
//! trainable and running value as little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{EncoderConfig, ModelParams};

const MAGIC: &[u8; 8] = b"FSDAMDL1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: EncoderConfig,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn encode_model(model: &ModelParams) -> Result<Vec<u8>> {
    let tensors = model
        .trainable()
        .iter()
        .chain(model.running())
        .map(|n| (n.name.clone(), n.tensor.shape().to_vec()))
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        config: model.config().clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + 8 * model.num_trainable());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for v in model.flatten().into_iter().chain(model.flatten_running()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_model(path: &Path, model: &ModelParams) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn decode_model(path: &Path, bytes: &[u8]) -> Result<ModelParams> {
    let fail = |offset: usize, detail: &str| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        detail: detail.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fail(0, "missing model magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| fail(8, "manifest length exceeds file"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| fail(16, &e.to_string()))?;
    let template = ModelParams::init(&manifest.config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = template
        .trainable()
        .iter()
        .chain(template.running())
        .map(|n| (n.name.clone(), n.tensor.shape().to_vec()))
        .collect();
    if expected != manifest.tensors {
        return Err(fail(
            16,
            "tensor manifest does not match the encoder config",
        ));
    }
    let data = &bytes[body..];
    let n_train = template.num_trainable();
    let n_run = template.flatten_running().len();
    if data.len() != 8 * (n_train + n_run) {
        return Err(fail(body, "value payload has the wrong length"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = template.unflatten(&values[..n_train])?;
    model.set_running(&values[n_train..])?;
    Ok(model)
}

pub fn read_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|source| Error::Ingestion {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(path, &bytes)
}
