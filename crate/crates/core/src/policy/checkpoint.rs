//! Versioned binary checkpoints.
//!
//! ```text
//! magic      8 bytes  "SNAVCKPT"
//! version    u32 LE
//! count      u32 LE   number of tensors
//! count × { name_len u16 LE, name (UTF-8), ndim u8, ndim × u32 LE dims }
//! body       f64 LE values, tensors in header order, each row-major
//! ```
//!
//! A JSON sidecar (`<checkpoint>.json`) carries the network configuration,
//! the training config hash and the training step.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::network::{ActorCritic, NetConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SNAVCKPT";
pub const FORMAT_VERSION: u32 = 1;

const MAX_TENSORS: usize = 4096;
const MAX_NDIM: usize = 4;
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Vec<usize>)>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config_hash: String,
    pub step: u64,
    pub net: NetConfig,
}

impl CheckpointMeta {
    pub fn from_json(text: &str) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(text)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "sidecar format version {} is not supported (expected {FORMAT_VERSION})",
                meta.format_version
            )));
        }
        meta.net.validate()?;
        Ok(meta)
    }
}

pub fn encode(net: &ActorCritic, params: &[f64]) -> Result<Vec<u8>> {
    if params.len() != net.num_params() {
        return Err(Error::Shape(format!("expected {} parameters, got {}", net.num_params(), params.len())));
    }
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layout.tensors.len() as u32).to_le_bytes());
    for t in &net.layout.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes a checkpoint blob. Never panics on malformed input.
pub fn decode(data: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { data, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32("tensor count")? as usize;
    if count > MAX_TENSORS {
        return Err(Error::Checkpoint(format!("{count} tensors exceeds limit {MAX_TENSORS}")));
    }
    let mut tensors = Vec::with_capacity(count);
    let mut total = 0usize;
    for i in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let ndim = r.u8("rank")? as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::Checkpoint(format!("tensor `{name}` has rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut elems = 1usize;
        for _ in 0..ndim {
            let d = r.u32("dimension")? as usize;
            elems = elems
                .checked_mul(d)
                .filter(|&e| e <= MAX_ELEMENTS)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            shape.push(d);
        }
        total = total
            .checked_add(elems)
            .filter(|&t| t <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Checkpoint("checkpoint is too large".into()))?;
        tensors.push((name, shape));
    }
    let body = &data[r.pos..];
    if body.len() != total * 8 {
        return Err(Error::Checkpoint(format!("body holds {} bytes, header describes {} values", body.len(), total)));
    }
    let params: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    if let Some(i) = params.iter().position(|v| !v.is_finite()) {
        return Err(Error::Checkpoint(format!("non-finite weight at index {i}")));
    }
    Ok(Checkpoint { tensors, params })
}

impl Checkpoint {
    /// Checks that the header matches `net`'s layout exactly.
    pub fn matches(&self, net: &ActorCritic) -> Result<()> {
        let expected: Vec<(&str, &[usize])> = net.layout.tensors.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
        let found: Vec<(&str, &[usize])> = self.tensors.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
        if expected != found {
            let first = expected
                .iter()
                .zip(found.iter())
                .position(|(a, b)| a != b)
                .unwrap_or(expected.len().min(found.len()));
            return Err(Error::Checkpoint(format!(
                "layout mismatch at tensor {first}: network has {} tensors, checkpoint has {}",
                expected.len(),
                found.len()
            )));
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save(path: &Path, net: &ActorCritic, params: &[f64], meta: &CheckpointMeta) -> Result<()> {
    let blob = encode(net, params)?;
    std::fs::write(path, blob).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(&side, text).map_err(|e| Error::io(side, e))?;
    Ok(())
}

/// Loads a checkpoint and its sidecar, rebuilding the network.
pub fn load(path: &Path) -> Result<(ActorCritic, Vec<f64>, CheckpointMeta)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta = CheckpointMeta::from_json(&text)?;
    let blob = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode(&blob)?;
    let net = ActorCritic::new(meta.net.clone());
    ckpt.matches(&net)?;
    Ok((net, ckpt.params, meta))
}
