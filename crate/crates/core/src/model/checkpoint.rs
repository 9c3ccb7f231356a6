//! Binary checkpoints: 8-byte magic, little-endian `u64` header length, a JSON
//! header, then every parameter as little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ArchConfig;
use super::net::Network;
use crate::dataset::ChannelStats;
use crate::error::{FavcError, Result};
use crate::tensor::{ParamKind, ParameterSet, Tensor};

pub const MAGIC: &[u8; 8] = b"FAVCCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub arch: ArchConfig,
    pub stats: ChannelStats,
    pub montage: String,
    pub seed: u64,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    /// Hash of the experiment configuration that produced the run, when known.
    #[serde(default)]
    pub config_hash: Option<String>,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParameterSet,
}

fn format_err(msg: impl Into<String>) -> FavcError {
    FavcError::Format(msg.into())
}

impl Checkpoint {
    pub fn new(
        arch: ArchConfig,
        stats: ChannelStats,
        montage: String,
        seed: u64,
        epoch: usize,
        val_loss: Option<f64>,
        params: ParameterSet,
    ) -> Self {
        let entries = params
            .iter()
            .map(|(_, name, kind, t)| ParamEntry {
                name: name.to_string(),
                kind,
                shape: t.shape().to_vec(),
            })
            .collect();
        Self {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                arch,
                stats,
                montage,
                seed,
                epoch,
                val_loss,
                config_hash: None,
                params: entries,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let floats: usize = self.params.iter().map(|(_, _, _, t)| t.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, _, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Parses and validates against the parameter layout implied by the stored
    /// architecture; any mismatch is a [`FavcError::Format`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(format_err("not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| format_err("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| format_err(format!("bad header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(format_err(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        let net = Network::standard(header.arch.clone()).map_err(|e| format_err(format!("bad architecture: {e}")))?;
        let mut params = net.init(0)?;
        if params.len() != header.params.len() {
            return Err(format_err(format!(
                "{} parameters stored, architecture has {}",
                header.params.len(),
                params.len()
            )));
        }
        let mut at = 16 + hlen;
        for (i, entry) in header.params.iter().enumerate() {
            let expected = params.value(i).shape().to_vec();
            if entry.name != params.name(i) || entry.shape != expected || entry.kind != params.kind(i) {
                return Err(format_err(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    entry.name,
                    entry.shape,
                    params.name(i),
                    expected
                )));
            }
            let n: usize = expected.iter().product();
            let raw = bytes
                .get(at..at + 8 * n)
                .ok_or_else(|| format_err(format!("payload truncated at `{}`", entry.name)))?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(format_err(format!("non-finite values in `{}`", entry.name)));
            }
            *params.value_mut(i) = Tensor::new(expected, data)?;
            at += 8 * n;
        }
        if at != bytes.len() {
            return Err(format_err(format!("{} trailing bytes", bytes.len() - at)));
        }
        Ok(Self { header, params })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
