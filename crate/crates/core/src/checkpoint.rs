//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `FSDGCKPT`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header, then every tensor as
//! little-endian `f64` in header order (parameters, then Adam first and
//! second moments when present). Raw floats make reloads bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency_views::GaussianParams;
use crate::network::{CoupledNetwork, ModelConfig};
use crate::nn::Tensor;
use crate::optim::{Adam, AdamConfig};

const MAGIC: &[u8; 8] = b"FSDGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    seed: u64,
    /// Number of completed epochs.
    epoch: usize,
    val_dice: Option<f64>,
    anchor: GaussianParams,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: CoupledNetwork,
    pub seed: u64,
    pub epoch: usize,
    pub val_dice: Option<f64>,
    /// View parameters the network expects its inputs in.
    pub anchor: GaussianParams,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let net = &self.network;
        let header = Header {
            model: net.config().clone(),
            seed: self.seed,
            epoch: self.epoch,
            val_dice: self.val_dice,
            anchor: self.anchor,
            tensors: net
                .param_names()
                .iter()
                .zip(net.params())
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape(),
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut write_all = |ts: &[Tensor]| {
            for t in ts {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        write_all(net.params());
        if let Some(o) = &self.optimizer {
            write_all(&o.m);
            write_all(&o.v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut cursor = 20 + hlen;
        let mut read = |shape: [usize; 4]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let raw = bytes
                .get(cursor..cursor + 8 * n)
                .ok_or_else(|| bad("truncated tensor data"))?;
            cursor += 8 * n;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_vec(shape, data)
        };
        let mut named = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            named.push((e.name.clone(), read(e.shape)?));
        }
        let optimizer = match &header.optimizer {
            Some(o) => {
                let m = header.tensors.iter().map(|e| read(e.shape)).collect::<Result<Vec<_>>>()?;
                let v = header.tensors.iter().map(|e| read(e.shape)).collect::<Result<Vec<_>>>()?;
                Some(Adam {
                    config: o.config,
                    step: o.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let mut network = CoupledNetwork::zeroed(header.model)?;
        network.load_params(named)?;
        Ok(Self {
            network,
            seed: header.seed,
            epoch: header.epoch,
            val_dice: header.val_dice,
            anchor: header.anchor,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
