//! Single-file model archive.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, `u64` header
//! length, a JSON header, then raw little-endian `f32` payload in header
//! order: parameters, normalization buffers, and optionally the Adam first
//! and second moments.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamHyper};
use super::unet::{UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::tensor::NormStats;

pub const MAGIC: &[u8; 8] = b"SSDCONV\0";
pub const FORMAT_VERSION: u32 = 1;
pub const FORMAT_TAG: &str = "ssdeconv-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    network: UNetConfig,
    stats: NormStats,
    step: u64,
    param_lens: Vec<usize>,
    buffer_lens: Vec<usize>,
    optimizer: Option<OptimizerHeader>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    hyper: AdamHyper,
    t: u64,
}

/// Everything needed to run inference or resume training.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: UNet,
    pub stats: NormStats,
    /// Optimizer steps completed.
    pub step: u64,
    pub optimizer: Option<Adam>,
    /// Free-form metadata, e.g. the training configuration.
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: UNet, stats: NormStats, step: u64) -> Self {
        Self {
            model,
            stats,
            step,
            optimizer: None,
            extra: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let buffers = self.model.buffers();
        let header = Header {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            network: self.model.config().clone(),
            stats: self.stats,
            step: self.step,
            param_lens: params.iter().map(|p| p.len()).collect(),
            buffer_lens: buffers.iter().map(|b| b.len()).collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                hyper: o.hyper,
                t: o.t,
            }),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |v: &[f32]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        params.iter().for_each(|p| put(&p.value));
        buffers.iter().for_each(|b| put(b));
        if let Some(opt) = &self.optimizer {
            opt.m.iter().for_each(|m| put(m));
            opt.v.iter().for_each(|v| put(v));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        read_exact(&mut r, &mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mut len = [0u8; 8];
        read_exact(&mut r, &mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > r.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        r = &r[len..];
        if header.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!("unknown format tag {:?}", header.format)));
        }

        let mut model = UNet::new(header.network)?;
        let mut take = |n: usize| -> Result<Vec<f32>> {
            if r.len() < 4 * n {
                return Err(Error::Checkpoint("truncated payload".into()));
            }
            let (head, rest) = r.split_at(4 * n);
            r = rest;
            Ok(head
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };
        {
            let params = model.params_mut();
            if params.len() != header.param_lens.len() {
                return Err(Error::Checkpoint("parameter list does not match the network".into()));
            }
            for (p, &n) in params.into_iter().zip(&header.param_lens) {
                if p.len() != n {
                    return Err(Error::Checkpoint("parameter size does not match the network".into()));
                }
                p.value = take(n)?;
            }
        }
        {
            let buffers = model.buffers_mut();
            if buffers.len() != header.buffer_lens.len() {
                return Err(Error::Checkpoint("buffer list does not match the network".into()));
            }
            for (b, &n) in buffers.into_iter().zip(&header.buffer_lens) {
                if b.len() != n {
                    return Err(Error::Checkpoint("buffer size does not match the network".into()));
                }
                *b = take(n)?;
            }
        }
        let optimizer = match header.optimizer {
            Some(o) => {
                let m = header.param_lens.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                let v = header.param_lens.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                Some(Adam {
                    hyper: o.hyper,
                    t: o.t,
                    m,
                    v,
                })
            }
            None => None,
        };
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            model,
            stats: header.stats,
            step: header.step,
            optimizer,
            extra: header.extra,
        })
    }

    /// Writes via a temporary file and rename, so an interrupted save never
    /// leaves a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))
}
