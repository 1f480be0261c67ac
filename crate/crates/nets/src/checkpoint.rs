//! Binary checkpoints: magic, format version, JSON header, then every
//! parameter and buffer as little-endian f64 in store order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tapsense_core::{Error, Result};

use crate::models::Network;

const MAGIC: &[u8; 8] = b"TSNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: String,
    pub arch_hash: String,
    pub epoch: usize,
    pub metric: f64,
    pub n_values: usize,
    /// Caller-defined metadata (normalization scale, class names, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn arch_hash<N: Network>(net: &N) -> String {
    let mut h = Sha256::new();
    h.update(net.arch().as_bytes());
    h.update(net.store().layout().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save<N: Network>(net: &N, path: &Path, epoch: usize, metric: f64, extra: serde_json::Value) -> Result<()> {
    let store = net.store();
    let values: Vec<f64> = store
        .values()
        .iter()
        .flat_map(|t| t.data.iter().copied())
        .chain(store.buffers.iter().flatten().copied())
        .collect();
    let header = CheckpointHeader {
        arch: net.arch(),
        arch_hash: arch_hash(net),
        epoch,
        metric,
        n_values: values.len(),
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    read(path).map(|(h, _)| h)
}

fn read(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::invalid(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?)?;
    let body = &bytes[16 + hlen..];
    if body.len() != 8 * header.n_values {
        return Err(bad("payload length disagrees with header"));
    }
    let values = body.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

/// Loads parameters into `net`, which must have the same architecture.
pub fn load_into<N: Network>(net: &mut N, path: &Path) -> Result<CheckpointHeader> {
    let (header, values) = read(path)?;
    if header.arch_hash != arch_hash(net) {
        return Err(Error::invalid(format!(
            "{}: checkpoint is for {:?}, network is {:?}",
            path.display(),
            header.arch,
            net.arch()
        )));
    }
    let store = net.store_mut();
    let mut it = values.into_iter();
    for t in store.values.iter_mut() {
        for v in t.data.iter_mut() {
            *v = it.next().expect("length checked");
        }
    }
    for b in store.buffers.iter_mut() {
        for v in b.iter_mut() {
            *v = it.next().expect("length checked");
        }
    }
    Ok(header)
}
