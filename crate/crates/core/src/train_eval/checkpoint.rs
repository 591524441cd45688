//! Checkpoints are safetensors archives of `f32` parameters keyed by module
//! path. The header metadata holds a single `semcom` entry: a JSON object with
//! `config`, `fingerprint` and `step`. One key keeps the header byte-stable,
//! since safetensors writes metadata in hash-map order.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{serialize_to_file, Dtype, SafeTensors, TensorView};
use semcom_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn_core::ParamStore;
use crate::semantic_codec::ModelConfig;

const META_KEY: &str = "semcom";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    fingerprint: String,
    step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub fingerprint: String,
    pub step: usize,
    pub params: ParamStore<f32>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = ckpt
        .params
        .iter()
        .map(|(k, t)| (k.clone(), t.shape().to_vec(), t.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
        .collect();
    let views = bytes
        .iter()
        .map(|(k, s, b)| Ok((k.as_str(), TensorView::new(Dtype::F32, s.clone(), b)?)))
        .collect::<Result<Vec<_>, safetensors::SafeTensorError>>()
        .map_err(|e| TrainError::Format(e.to_string()))?;
    let header = Header { config: ckpt.config.clone(), fingerprint: ckpt.fingerprint.clone(), step: ckpt.step };
    let mut meta = HashMap::new();
    meta.insert(META_KEY.to_string(), serde_json::to_string(&header).map_err(|e| TrainError::Format(e.to_string()))?);
    serialize_to_file(views, Some(meta), path).map_err(|e| TrainError::Format(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let buf = std::fs::read(path)?;
    let bad = |m: String| TrainError::IncompatibleCheckpoint(format!("{}: {m}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(&buf).map_err(|e| bad(e.to_string()))?;
    let meta = meta.metadata().clone().ok_or_else(|| bad("no metadata".into()))?;
    let raw = meta.get(META_KEY).ok_or_else(|| bad(format!("metadata lacks {META_KEY}")))?;
    let Header { config, fingerprint, step } = serde_json::from_str(raw).map_err(|e| bad(e.to_string()))?;
    let st = SafeTensors::deserialize(&buf).map_err(|e| bad(e.to_string()))?;
    let mut params = ParamStore::new();
    let mut names = st.names();
    names.sort();
    for name in names {
        let view = st.tensor(name).map_err(|e| bad(e.to_string()))?;
        if view.dtype() != Dtype::F32 {
            return Err(bad(format!("{name} is {:?}, expected F32", view.dtype())));
        }
        let data = view.data().chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor::from_vec(view.shape(), data));
    }
    Ok(Checkpoint { config, fingerprint, step, params })
}
