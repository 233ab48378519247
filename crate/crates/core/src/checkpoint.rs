//! Versioned tensor container used for checkpoints and pretrained weights.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SCPNTENS"
//! version    u32      1
//! meta_len   u32      length of the UTF-8 JSON metadata that follows
//! meta       bytes
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u32 × ndim)
//!   data     f32 × prod(dims)
//! ```
//!
//! Model checkpoints store the model config echo, input normalization and
//! step counter in the metadata; resumable training state adds optimizer
//! moments as tensors and the RNG state in the metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"SCPNTENS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.push((name.into(), Tensor { shape, data }));
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::other)?;
        out.write_all(&(meta.len() as u32).to_le_bytes())?;
        out.write_all(&meta)?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated tensor file: {e}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic; not a tensor container".into()));
        }
        let version = read_u32(input).map_err(fmt)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let meta_len = read_u32(input).map_err(fmt)? as usize;
        let mut meta = vec![0u8; meta_len];
        input.read_exact(&mut meta).map_err(fmt)?;
        let meta = serde_json::from_slice(&meta)?;
        let count = read_u32(input).map_err(fmt)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(input).map_err(fmt)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name).map_err(fmt)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = read_u32(input).map_err(fmt)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(input).map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(fmt)?;
            let len: usize = shape.iter().product();
            let mut raw = vec![0u8; len * 4];
            input.read_exact(&mut raw).map_err(fmt)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((name, Tensor { shape, data }));
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

fn read_u32(input: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Metadata carried by every model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub normalization: Normalization,
    pub step: u64,
    /// Resumable training state, absent in weight-only exports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<serde_json::Value>,
}

/// Packs the model's parameters and buffers with `meta`.
pub fn model_tensor_file(model: &Model, meta: &CheckpointMeta) -> Result<TensorFile> {
    let mut file = TensorFile {
        meta: serde_json::to_value(meta)?,
        tensors: Vec::new(),
    };
    for p in model.params() {
        file.push(p.name.clone(), p.shape.clone(), p.value.clone());
    }
    Ok(file)
}

pub fn save_model(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<()> {
    model_tensor_file(model, meta)?.write(path)
}

/// Rebuilds a model from a checkpoint. Every model tensor must be present.
pub fn load_model(path: &Path) -> Result<(Model, CheckpointMeta, TensorFile)> {
    let file = TensorFile::read(path)?;
    let (model, meta) = model_from_file(&file)?;
    Ok((model, meta, file))
}

pub fn model_from_file(file: &TensorFile) -> Result<(Model, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_value(file.meta.clone())?;
    let mut model = crate::model::build_model(meta.model.clone(), 0)?;
    let expected = model.params().len();
    let loaded = model.load_tensors(file, None)?;
    if loaded != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {loaded} of {expected} model tensors"
        )));
    }
    Ok((model, meta))
}
