//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `SACKPT01`, a little-endian `u64` header
//! length, a JSON header holding the [`ModelConfig`] and a tensor table
//! (`name`, `shape`, element `offset`, element `len`), then every tensor's
//! values as little-endian `f64` in table order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, MultiStreamModel};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

const MAGIC: &[u8; 8] = b"SACKPT01";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

pub fn write_checkpoint<W: Write>(model: &MultiStreamModel, mut out: W) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in model.named_params() {
        tensors.push(Entry {
            name,
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
    }
    let header = Header {
        format: "sensoraudit-checkpoint".into(),
        version: 1,
        config: model.config().clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&header).map_err(io)?;
    for (_, t) in model.named_params() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<MultiStreamModel> {
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header).map_err(io)?;
    let header: Header =
        serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if header.version != 1 {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    let total: usize = header.tensors.iter().map(|e| e.len).sum();
    let mut raw = Vec::new();
    input.read_to_end(&mut raw).map_err(io)?;
    if raw.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} data bytes, found {}",
            total * 8,
            raw.len()
        )));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let mut named = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let end = e.offset.checked_add(e.len).filter(|&end| end <= total);
        let end = end.ok_or_else(|| Error::Checkpoint(format!("{}: range out of bounds", e.name)))?;
        let t = Tensor::new(&e.shape, values[e.offset..end].to_vec())?;
        named.push((e.name, t));
    }
    MultiStreamModel::from_named(header.config, named)
}

pub fn save_checkpoint(model: &MultiStreamModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<MultiStreamModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
