use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, TrainConfig, TrainError};
use crate::data::BatchStream;
use crate::domain_chain::{build_chain, DiscriminatorPlan, ExperimentMode};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MCCANCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "mccan-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub dtype: String,
}

/// Everything in a checkpoint except the tensor payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub domain_names: Vec<String>,
    pub mode: ExperimentMode,
    pub plan: DiscriminatorPlan,
    pub step: u64,
    pub elapsed_s: f64,
    pub nonfinite: usize,
    pub dataset_fingerprint: u32,
    pub adam_steps: (u64, u64),
    pub streams: Vec<BatchStream>,
    pub buffer_rngs: Vec<ChaCha8Rng>,
    pub buffer_lens: Vec<usize>,
    pub tensors: Vec<TensorEntry>,
}

fn ckpt_err(path: &Path, msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint { path: path.display().to_string(), msg: msg.into() }
}

fn tensor_bytes(t: &Tensor) -> Result<(String, Vec<u8>), TrainError> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => ("f32".into(), flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        _ => ("f64".into(), flat.to_dtype(DType::F64)?.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
    })
}

/// Layout: magic, u32 version, u64 header length, JSON header, tensor
/// payloads in header order (little-endian), CRC32 of all preceding bytes.
/// The file is written to a sibling temporary and renamed into place.
pub fn write_archive(path: &Path, header: &mut CheckpointHeader, tensors: &[(String, Tensor)]) -> Result<(), TrainError> {
    let mut payload = Vec::new();
    header.tensors.clear();
    for (name, t) in tensors {
        let (dtype, bytes) = tensor_bytes(t)?;
        header.tensors.push(TensorEntry { name: name.clone(), dims: t.dims().to_vec(), dtype });
        payload.extend(bytes);
    }
    let json = serde_json::to_vec(header).map_err(|e| ckpt_err(path, e.to_string()))?;
    let mut out = Vec::with_capacity(24 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend(json);
    out.extend(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<(CheckpointHeader, BTreeMap<String, Tensor>), TrainError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 24 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ckpt_err(path, "not a checkpoint archive (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(path, format!("format version {version}, this build reads version {CHECKPOINT_VERSION}")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(ckpt_err(path, "checksum mismatch, archive is corrupted"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let json = body.get(20..20 + hlen).ok_or_else(|| ckpt_err(path, "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| ckpt_err(path, e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT || header.version != version {
        return Err(ckpt_err(path, format!("unexpected format tag {} v{}", header.format, header.version)));
    }
    let mut at = 20 + hlen;
    let mut tensors = BTreeMap::new();
    for e in &header.tensors {
        let n: usize = e.dims.iter().product();
        let t = match e.dtype.as_str() {
            "f32" => {
                let raw = body.get(at..at + 4 * n).ok_or_else(|| ckpt_err(path, "truncated payload"))?;
                at += 4 * n;
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, e.dims.as_slice(), &Device::Cpu)?
            }
            "f64" => {
                let raw = body.get(at..at + 8 * n).ok_or_else(|| ckpt_err(path, "truncated payload"))?;
                at += 8 * n;
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, e.dims.as_slice(), &Device::Cpu)?
            }
            other => return Err(ckpt_err(path, format!("unknown tensor dtype {other}"))),
        };
        tensors.insert(e.name.clone(), t);
    }
    if at != body.len() {
        return Err(ckpt_err(path, "trailing bytes after payload"));
    }
    Ok((header, tensors))
}

pub fn param_key(name: &str) -> String {
    format!("param.{name}")
}

/// Rebuilds the networks stored in a checkpoint.
pub fn load_model(path: &Path) -> Result<(Model, CheckpointHeader), TrainError> {
    let (header, tensors) = read_archive(path)?;
    let model = model_from(&header, &tensors, path)?;
    Ok((model, header))
}

pub(crate) fn model_from(
    header: &CheckpointHeader,
    tensors: &BTreeMap<String, Tensor>,
    path: &Path,
) -> Result<Model, TrainError> {
    let cfg = &header.config;
    let chain = build_chain(cfg.n_domains, Some(header.domain_names.clone()))?;
    let model = Model::new(
        chain,
        header.mode,
        &cfg.generator_spec(),
        &cfg.discriminator,
        cfg.precision.dtype(),
        cfg.window,
        cfg.seed,
    )?;
    if model.plan != header.plan {
        return Err(ckpt_err(path, "stored discriminator plan disagrees with the mode"));
    }
    for (name, var) in model.params() {
        let t = tensors.get(&param_key(&name)).ok_or_else(|| ckpt_err(path, format!("missing tensor {name}")))?;
        if t.dims() != var.dims() {
            return Err(ckpt_err(path, format!("tensor {name} has shape {:?}, expected {:?}", t.dims(), var.dims())));
        }
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    Ok(model)
}
