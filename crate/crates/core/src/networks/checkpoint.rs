//! Checkpoints: a JSON manifest next to a flat little-endian `f64` file.
//!
//! The manifest lists every named array with its shape and element offset
//! and carries a SHA-256 hash of the training config, which is checked on
//! load.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, TrainingConfig};
use crate::error::{Error, Result};
use crate::Scalar;

pub const CHECKPOINT_FORMAT: &str = "copsel-checkpoint-1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: TrainingConfig,
    config_hash: String,
    d: usize,
    n_classes: usize,
    data_file: String,
    arrays: Vec<Entry>,
}

/// Hex SHA-256 of the config's JSON serialisation.
pub fn config_hash(config: &TrainingConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serialises");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn named_arrays<T: Scalar>(model: &Model<T>) -> Vec<(String, ArrayD<T>)> {
    let mut out: Vec<(String, ArrayD<T>)> = model
        .params
        .names()
        .iter()
        .cloned()
        .zip(model.params.values().iter().cloned())
        .collect();
    for (i, st) in model.predict.norm_state.iter().enumerate() {
        out.push((format!("predict.norm{}.running_mean", i + 1), st.running_mean.clone().into_dyn()));
        out.push((format!("predict.norm{}.running_var", i + 1), st.running_var.clone().into_dyn()));
    }
    out
}

/// Writes `path` (manifest) and `path` with extension `.bin` (data).
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let data = data_path(path);
    let mut bytes = Vec::new();
    let mut arrays = Vec::new();
    let mut offset = 0;
    for (name, a) in named_arrays(model) {
        arrays.push(Entry {
            name,
            shape: a.shape().to_vec(),
            offset,
        });
        offset += a.len();
        for v in a.iter() {
            bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config.clone(),
        config_hash: config_hash(&model.config),
        d: model.d,
        n_classes: model.n_classes,
        data_file: data
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        arrays,
    };
    fs::write(&data, bytes)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        context: path.display().to_string(),
        detail: detail.into(),
    }
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(corrupt(path, format!("unknown format {:?}", manifest.format)));
    }
    if config_hash(&manifest.config) != manifest.config_hash {
        return Err(corrupt(path, "config hash does not match the stored config"));
    }
    let data_file = path.with_file_name(&manifest.data_file);
    let bytes = fs::read(&data_file)?;
    if bytes.len() % 8 != 0 {
        return Err(corrupt(&data_file, "length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = Model::<T>::new(&manifest.config, manifest.d, manifest.n_classes)?;
    let fetch = |name: &str, shape: &[usize]| -> Result<ArrayD<T>> {
        let e = manifest
            .arrays
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| corrupt(path, format!("missing array {name}")))?;
        if e.shape != shape {
            return Err(corrupt(path, format!("{name}: shape {:?}, expected {shape:?}", e.shape)));
        }
        let n: usize = shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| corrupt(&data_file, format!("{name} runs past the end of the data")))?;
        Ok(ArrayD::from_shape_vec(IxDyn(shape), slice.iter().map(|&v| T::lit(v)).collect())
            .expect("length checked"))
    };
    let names: Vec<String> = model.params.names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let shape = model.params.values()[i].shape().to_vec();
        model.params.values_mut()[i] = fetch(name, &shape)?;
    }
    for (i, st) in model.predict.norm_state.iter_mut().enumerate() {
        let h = st.running_mean.len();
        let to1 = |a: ArrayD<T>| -> Array1<T> { a.into_shape_with_order(h).expect("1-D").into_dimensionality().expect("1-D") };
        st.running_mean = to1(fetch(&format!("predict.norm{}.running_mean", i + 1), &[h])?);
        st.running_var = to1(fetch(&format!("predict.norm{}.running_var", i + 1), &[h])?);
    }
    Ok(model)
}
