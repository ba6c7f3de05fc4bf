//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes   "DIMVLCKP"
//! version    u32 LE    1
//! header_len u64 LE    byte length of the header
//! header     JSON      {fingerprint, config, epoch, step, tensors: [{name, shape}], optimizer}
//! payload    f64 LE    every tensor in directory order; when `optimizer` is
//!                      present, all first moments then all second moments
//!                      in the same order
//! checksum   32 bytes  SHA-256 of every preceding byte
//! ```

use std::path::Path;

use dimvl_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::{GradMap, Model, ModelConfig, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIMVLCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
    pub epoch: usize,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    step: u64,
    config: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    config: ModelConfig,
    epoch: usize,
    step: u64,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Tensor::new(shape.to_vec(), data)?)
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, optimizer: Option<&AdamState>, epoch: usize, step: u64) -> Self {
        Self {
            config: model.config.clone(),
            params: model.params.clone(),
            optimizer: optimizer.cloned(),
            epoch,
            step,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.config.clone(), self.params.clone())
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            fingerprint: self.fingerprint(),
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerEntry { step: o.step, config: o.config }),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(64 + header.len() + 8 * self.params.scalar_count() * 3);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |t: &Tensor| t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (_, t) in self.params.iter() {
            put(t);
        }
        if let Some(opt) = &self.optimizer {
            for buffers in [&opt.m, &opt.v] {
                for name in self.params.names() {
                    let t = buffers
                        .get(name)
                        .ok_or_else(|| Error::Contract(format!("optimizer has no moments for {name}")))?;
                    put(t);
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 8 + 32 {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, at: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let header_len = usize::try_from(header_len).map_err(|_| Error::Format("header too large".into()))?;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let found = header.config.fingerprint();
        if header.fingerprint != found {
            return Err(Error::Fingerprint { expected: header.fingerprint, found });
        }
        let mut params = ParamStore::new();
        for e in &header.tensors {
            params.insert(e.name.clone(), r.tensor(&e.shape)?);
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(o) => {
                let read_all = |r: &mut Reader| -> Result<GradMap> {
                    header.tensors.iter().map(|e| Ok((e.name.clone(), r.tensor(&e.shape)?))).collect()
                };
                let m = read_all(&mut r)?;
                let v = read_all(&mut r)?;
                Some(AdamState { config: o.config, step: o.step, m, v })
            }
        };
        if r.at != body.len() {
            return Err(Error::Format(format!("{} trailing bytes after payload", body.len() - r.at)));
        }
        Ok(Self { config: header.config, params, optimizer, epoch: header.epoch, step: header.step })
    }

    /// Hex SHA-256 over the serialized checkpoint.
    pub fn checksum(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(bytes[bytes.len() - 32..].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and checks the stored configuration against `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        ckpt.expect_fingerprint(&expected.fingerprint())?;
        Ok(ckpt)
    }

    pub fn expect_fingerprint(&self, expected: &str) -> Result<()> {
        let found = self.fingerprint();
        if found != expected {
            return Err(Error::Fingerprint { expected: expected.to_string(), found });
        }
        Ok(())
    }
}

pub const DEFAULT_AVERAGE_K: usize = 20;

/// Arithmetic mean of each parameter over all given checkpoints. Optimizer
/// state is dropped; epoch and step come from the last checkpoint.
pub fn average_checkpoints(ckpts: &[Checkpoint]) -> Result<Checkpoint> {
    let last = ckpts.last().ok_or_else(|| Error::Contract("no checkpoints to average".into()))?;
    let fp = last.fingerprint();
    for c in ckpts {
        c.expect_fingerprint(&fp)?;
    }
    // Running mean: exact when every checkpoint holds the same value.
    let mut params = ckpts[0].params.clone();
    for (i, c) in ckpts.iter().enumerate().skip(1) {
        let n = (i + 1) as f64;
        for (name, t) in params.iter_mut() {
            let src = c.params.get(name)?;
            if src.len() != t.len() {
                return Err(Error::Dimension(format!("parameter {name} differs in size between checkpoints")));
            }
            for (a, &s) in t.data_mut().iter_mut().zip(src.data()) {
                *a += (s - *a) / n;
            }
        }
    }
    Ok(Checkpoint { config: last.config.clone(), params, optimizer: None, epoch: last.epoch, step: last.step })
}

/// Averages the last `k` checkpoints (all of them if fewer exist).
pub fn average_last(ckpts: &[Checkpoint], k: usize) -> Result<Checkpoint> {
    if k == 0 {
        return Err(Error::Config("checkpoint averaging needs k >= 1".into()));
    }
    average_checkpoints(&ckpts[ckpts.len().saturating_sub(k)..])
}
