//! Binary checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "SVBR"            4 bytes
//! version           u16 (currently 1)
//! metadata length   u32, followed by that many bytes of UTF-8 JSON
//! per parameter:
//!   name length     u16, then the name bytes
//!   rank            u8, then `rank` u32 dims
//!   values          prod(dims) f32, row-major
//! ```
//!
//! Values are single precision. Networks keep their parameters rounded to
//! `f32`, so save followed by load reproduces them bit for bit.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, NetError, Result};
use crate::network::{Network, NetworkConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SVBR";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: NetworkConfig,
    /// Number of parameter records that follow.
    pub records: usize,
    /// Free-form provenance such as the training seed or epoch.
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

pub fn encode_checkpoint(net: &Network, notes: &BTreeMap<String, String>) -> Vec<u8> {
    let meta = CheckpointMeta {
        config: *net.config(),
        records: net.params().len(),
        notes: notes.clone(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in net.params().iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Network, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| CheckpointError::BadMetadata(e.to_string()))?;
    let mut net =
        Network::new(meta.config, 0).map_err(|e| CheckpointError::BadMetadata(e.to_string()))?;
    if meta.records != net.params().len() {
        return Err(CheckpointError::BadMetadata(format!(
            "{} records declared, the configuration has {} parameters",
            meta.records,
            net.params().len()
        ))
        .into());
    }

    let mut seen = HashSet::new();
    for _ in 0..meta.records {
        let name_len = r.u16("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| CheckpointError::BadMetadata("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("parameter rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter dims")? as usize);
        }
        let id = net
            .params()
            .find(&name)
            .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
        if !seen.insert(id) {
            return Err(CheckpointError::DuplicateParam(name).into());
        }
        let expected = net.params().get(id).shape.clone();
        if shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                actual: shape,
            }
            .into());
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n, "parameter values")?;
        let dst = net.params_mut().data_mut(id);
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(CheckpointError::NonFinite(name).into());
            }
            *d = v as f64;
        }
    }
    if r.remaining() > 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()).into());
    }
    // Records are unique and equal in number to the parameters, so none is
    // missing; the check stays for robustness against future formats.
    if let Some((_, p)) = net.params().iter().find(|(id, _)| !seen.contains(id)) {
        return Err(CheckpointError::MissingParam(p.name.clone()).into());
    }
    Ok((net, meta))
}

pub fn save_checkpoint(path: &Path, net: &Network, notes: &BTreeMap<String, String>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net, notes)).map_err(|e| NetError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| NetError::io(path, e))?;
    decode_checkpoint(&bytes)
}
