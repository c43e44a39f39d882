//! Versioned binary checkpoint container.
//!
//! Byte layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EGLC"
//! 4       4     format version (u32, currently 1)
//! 8       4     header length N (u32)
//! 12      N     header JSON: { config, epoch, val_loss, seed }
//! ..      1     element type tag: 1 = f32, 2 = f64
//! ..      4     tensor count (u32)
//! per tensor:
//!         4     name length (u32), then the UTF-8 name
//!         4     rank (u32), then rank u32 dims
//!         ..    numel elements, little-endian
//! ```
//!
//! Tensors cover all parameters plus the batch-norm running buffers, in
//! the model's canonical naming order. Loading reconstructs the model from
//! the embedded config and fails with the offending names on any mismatch.

use crate::model::{Eagle, EagleConfig};
use crate::precision::Real;
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EGLC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tensor: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint/config mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub config: EagleConfig,
    pub epoch: u64,
    pub val_loss: f64,
    pub seed: u64,
}

fn dtype_tag<T: Real>() -> u8 {
    if std::mem::size_of::<T>() == 4 {
        1
    } else {
        2
    }
}

pub fn save<T: Real>(path: &Path, model: &Eagle<T>, header: &CheckpointHeader) -> Result<()> {
    let mut tensors = model.named_params();
    tensors.extend(model.named_buffers());

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let header_json = serde_json::to_vec(header)?;
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.push(dtype_tag::<T>());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let shape = tensor.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        tensor.with_data(|d| {
            for v in d {
                if dtype_tag::<T>() == 1 {
                    buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
                } else {
                    buf.extend_from_slice(&v.to_f64().to_le_bytes());
                }
            }
        });
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Parse header and named tensors without instantiating a model.
pub fn read_raw(path: &Path) -> Result<(CheckpointHeader, u8, Vec<(String, Vec<usize>, Vec<f64>)>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_bytes(&bytes)
}

/// Parse a checkpoint already resident in memory (embedded assets).
pub fn parse_bytes(bytes: &[u8]) -> Result<(CheckpointHeader, u8, Vec<(String, Vec<usize>, Vec<f64>)>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::Format("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!("unsupported format version {version}")));
    }
    let header_len = cur.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(cur.take(header_len)?)?;
    let dtype = cur.u8()?;
    if dtype != 1 && dtype != 2 {
        return Err(CheckpointError::Format(format!("unknown element tag {dtype}")));
    }
    let count = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let data: Vec<f64> = if dtype == 1 {
            cur.take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        } else {
            cur.take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        tensors.push((name, dims, data));
    }
    Ok((header, dtype, tensors))
}

/// Rebuild the model recorded in a checkpoint.
pub fn load<T: Real>(path: &Path) -> Result<(Eagle<T>, CheckpointHeader)> {
    let (header, dtype, tensors) = read_raw(path)?;
    restore(header, dtype, tensors)
}

/// Rebuild a model from an in-memory checkpoint.
pub fn load_from_bytes<T: Real>(bytes: &[u8]) -> Result<(Eagle<T>, CheckpointHeader)> {
    let (header, dtype, tensors) = parse_bytes(bytes)?;
    restore(header, dtype, tensors)
}

fn restore<T: Real>(
    header: CheckpointHeader,
    dtype: u8,
    tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
) -> Result<(Eagle<T>, CheckpointHeader)> {
    if dtype != dtype_tag::<T>() {
        return Err(CheckpointError::Mismatch(format!(
            "precision: checkpoint stores tag {dtype}, runtime expects tag {}",
            dtype_tag::<T>()
        )));
    }
    let model = Eagle::<T>::new(header.config.clone(), header.seed)
        .map_err(CheckpointError::Tensor)?;
    let mut expected: HashMap<String, Tensor<T>> = model.named_params().into_iter().collect();
    for (name, buffer) in model.named_buffers() {
        expected.insert(name, buffer);
    }
    let mut filled = std::collections::HashSet::new();
    for (name, dims, data) in tensors {
        let Some(target) = expected.get(&name) else {
            return Err(CheckpointError::Mismatch(format!("unexpected tensor '{name}'")));
        };
        if target.shape() != dims.as_slice() {
            return Err(CheckpointError::Mismatch(format!(
                "tensor '{name}': checkpoint shape {:?} vs model shape {:?}",
                dims,
                target.shape()
            )));
        }
        target.update_data(|dst| {
            for (d, v) in dst.iter_mut().zip(&data) {
                *d = T::from_f64(*v);
            }
        });
        filled.insert(name);
    }
    let missing: Vec<&String> = expected.keys().filter(|k| !filled.contains(*k)).collect();
    if !missing.is_empty() {
        let mut names: Vec<String> = missing.into_iter().cloned().collect();
        names.sort();
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint lacks {} tensors, first: {}",
            names.len(),
            names[0]
        )));
    }
    Ok((model, header))
}
