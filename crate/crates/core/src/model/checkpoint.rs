//! Binary checkpoint: magic, little-endian u64 header length, JSON header,
//! then a little-endian f64 blob (parameters, then optimizer moments).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::transformer::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Array, OptimizerKind, OptimizerState, ParamSet};

const MAGIC: &[u8; 8] = b"KCGCCKPT";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub model: ModelConfig,
    pub vocab_hash: String,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub params: Vec<ParamEntry>,
    pub optimizer: Option<OptimizerHeader>,
    /// Free-form training metadata (objective settings and the like).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Everything restored from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    optimizer: Option<&OptimizerState>,
    vocab_hash: &str,
    step: u64,
    epoch: u64,
    extra: serde_json::Value,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob: Vec<f64> = Vec::with_capacity(model.params.numel() * 3);
    for (name, a) in model.params.iter() {
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: a.shape().to_vec(),
            offset: blob.len(),
        });
        blob.extend_from_slice(a.data());
    }
    if let Some(opt) = optimizer {
        if opt.first_moment.len() != entries.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        for m in opt.first_moment.iter().chain(&opt.second_moment) {
            blob.extend_from_slice(m);
        }
    }
    let header = CheckpointHeader {
        format: FORMAT,
        model: model.config().clone(),
        vocab_hash: vocab_hash.to_string(),
        step,
        epoch,
        params: entries,
        optimizer: optimizer.map(|o| OptimizerHeader {
            kind: o.kind,
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            step: o.step,
        }),
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + blob.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    // Write-then-rename so an interrupted save never clobbers a good file.
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path)?;
    Ok(split(&bytes)?.0)
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + n {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + n])?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {}", header.format)));
    }
    Ok((header, &bytes[16 + n..]))
}

/// Loads a checkpoint; `expected_vocab_hash` guards against pairing weights
/// with the wrong vocabulary.
pub fn load_checkpoint(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let (header, blob) = split(&bytes)?;
    if let Some(h) = expected_vocab_hash {
        if h != header.vocab_hash {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint {} vs {h}",
                header.vocab_hash
            )));
        }
    }
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint("blob is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let numel: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let expected = if header.optimizer.is_some() { numel * 3 } else { numel };
    if values.len() != expected {
        return Err(Error::Checkpoint(format!(
            "blob holds {} values, expected {expected}",
            values.len()
        )));
    }
    let mut params = ParamSet::new();
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Checkpoint(format!("parameter `{}` out of range", e.name)))?;
        params.push(e.name.clone(), Array::new(e.shape.clone(), data.to_vec())?);
    }
    let model = Model::from_params(header.model.clone(), params)?;
    let optimizer = header.optimizer.as_ref().map(|o| {
        let mut st = OptimizerState::new(o.kind, &model.params, o.learning_rate);
        st.beta1 = o.beta1;
        st.beta2 = o.beta2;
        st.eps = o.eps;
        st.step = o.step;
        let mut off = numel;
        for m in st.first_moment.iter_mut().chain(st.second_moment.iter_mut()) {
            let n = m.len();
            m.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        st
    });
    Ok(Checkpoint {
        header,
        model,
        optimizer,
    })
}
