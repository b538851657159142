//! Model checkpoints: `TDAMCKPT1`, `u64` manifest length, JSON manifest, then
//! all tensors as little-endian f32 in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tdam_core::model::{ModelConfig, ModelParams};
use tdam_core::survival::BinEdges;
use tdam_core::Matrix;

use crate::error::{CliError, Result};
use crate::runconfig::{model_from_pairs, model_pairs, Provenance};

pub const CKPT_MAGIC: &[u8; 9] = b"TDAMCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams<f32>,
    pub fold: usize,
    pub best_epoch: usize,
    pub best_cindex: f64,
    pub bin_edges: BinEdges,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    /// Offset into the blob, in elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorEntry>,
    model: BTreeMap<String, String>,
    fold: usize,
    best_epoch: usize,
    best_cindex: f64,
    bin_edges: [f64; 3],
    provenance: Provenance,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.params.validate(&ck.model)?;
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, m) in &ck.params.tensors {
        tensors.push(TensorEntry { name: name.clone(), shape: [m.rows(), m.cols()], dtype: "f32".into(), offset });
        offset += m.len();
        for v in m.as_slice() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        tensors,
        model: model_pairs(&ck.model),
        fold: ck.fold,
        best_epoch: ck.best_epoch,
        best_cindex: ck.best_cindex,
        bin_edges: ck.bin_edges.0,
        provenance: ck.provenance.clone(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| CliError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(CKPT_MAGIC.len() + 8 + json.len() + blob.len());
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let head = CKPT_MAGIC.len();
    if bytes.len() < head + 8 || &bytes[..head] != CKPT_MAGIC {
        return Err(CliError::Format("missing TDAMCKPT1 header".into()));
    }
    let len = u64::from_le_bytes(bytes[head..head + 8].try_into().expect("8 bytes")) as usize;
    let start = head + 8;
    let body = start.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        CliError::Truncated(format!("manifest of {len} bytes exceeds file of {} bytes", bytes.len()))
    })?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[start..body]).map_err(|e| CliError::Format(format!("checkpoint manifest: {e}")))?;
    let blob = &bytes[body..];
    let total: usize = manifest.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
    if blob.len() != 4 * total {
        return Err(CliError::Truncated(format!("tensor blob has {} bytes, manifest needs {}", blob.len(), 4 * total)));
    }
    let mut tensors = BTreeMap::new();
    for t in &manifest.tensors {
        if t.dtype != "f32" {
            return Err(CliError::Format(format!("tensor {} has unsupported dtype {}", t.name, t.dtype)));
        }
        let n = t.shape[0] * t.shape[1];
        let bytes = blob
            .get(4 * t.offset..4 * (t.offset + n))
            .ok_or_else(|| CliError::Format(format!("tensor {} lies outside the blob", t.name)))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.insert(t.name.clone(), Matrix::from_vec(t.shape[0], t.shape[1], data));
    }
    let model = model_from_pairs(&manifest.model)?;
    let params = ModelParams { tensors };
    params.validate(&model)?;
    Ok(Checkpoint {
        model,
        params,
        fold: manifest.fold,
        best_epoch: manifest.best_epoch,
        best_cindex: manifest.best_cindex,
        bin_edges: BinEdges(manifest.bin_edges),
        provenance: manifest.provenance,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_checkpoint(&bytes)
}
