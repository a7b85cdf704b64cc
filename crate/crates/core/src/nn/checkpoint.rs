//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic          8 bytes  "N2SRCKPT"
//! format_version u32
//! header_len     u64
//! header         canonical JSON (sorted keys): config, step, metric, optimizer
//! array_count    u32
//! per array:     name_len u32, name (UTF-8), ndim u32, dims u64 x ndim,
//!                data f32 x prod(dims)
//! ```
//!
//! Parameters come first in network order, followed by optimizer moments
//! named `adam.m.<param>` and `adam.v.<param>` when present.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamState};
use super::model::{Model, ModelConfig, SrDenoiser};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"N2SRCKPT";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Trained parameters plus everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub parameters: Vec<NamedArray>,
    pub training_step: u64,
    /// Validation PSNR (dB) recorded with this checkpoint, if any.
    pub validation_metric: Option<f64>,
    pub optimizer: Option<(AdamState, Vec<NamedArray>)>,
    /// Free-form trainer state (learning-rate schedule, best metric).
    pub trainer_state: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    training_step: u64,
    validation_metric: Option<f64>,
    optimizer: Option<AdamState>,
    trainer_state: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, training_step: u64, validation_metric: Option<f64>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            parameters: model
                .params()
                .into_iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.value.clone(),
                })
                .collect(),
            training_step,
            validation_metric,
            optimizer: None,
            trainer_state: None,
        }
    }

    pub fn with_optimizer(mut self, model: &Model, adam: &Adam) -> Self {
        let params = model.params();
        let mut arrays = Vec::with_capacity(2 * params.len());
        for (prefix, moments) in [("adam.m.", &adam.first_moment), ("adam.v.", &adam.second_moment)] {
            for (p, m) in params.iter().zip(moments) {
                arrays.push(NamedArray {
                    name: format!("{prefix}{}", p.name),
                    shape: p.shape.clone(),
                    data: m.clone(),
                });
            }
        }
        self.optimizer = Some((adam.state(), arrays));
        self
    }

    /// Rebuilds the network, checking every array against the shapes the
    /// config implies.
    pub fn model(&self) -> Result<Model> {
        let mut model = SrDenoiser::<f32>::new(self.config.clone())?;
        let params = model.params_mut();
        if params.len() != self.parameters.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameter arrays, config implies {}",
                self.parameters.len(),
                params.len()
            )));
        }
        for (p, a) in params.into_iter().zip(&self.parameters) {
            if p.name != a.name || p.shape != a.shape {
                return Err(Error::Data(format!(
                    "checkpoint array {} {:?} does not match expected {} {:?}",
                    a.name, a.shape, p.name, p.shape
                )));
            }
            p.value.copy_from_slice(&a.data);
        }
        Ok(model)
    }

    /// Restores the optimizer, or a fresh one when the checkpoint has none.
    pub fn optimizer_for(&self, model: &Model) -> Result<Adam> {
        let params = model.params();
        let mut adam = Adam::new(&params);
        let Some((state, arrays)) = &self.optimizer else {
            return Ok(adam);
        };
        if arrays.len() != 2 * params.len() {
            return Err(Error::Data("optimizer moment count mismatch".into()));
        }
        adam.beta1 = state.beta1;
        adam.beta2 = state.beta2;
        adam.eps = state.eps;
        adam.step = state.step;
        let (m, v) = arrays.split_at(params.len());
        for (i, p) in params.iter().enumerate() {
            if m[i].shape != p.shape || v[i].shape != p.shape {
                return Err(Error::Data(format!("optimizer moment shape mismatch for {}", p.name)));
            }
            adam.first_moment[i].copy_from_slice(&m[i].data);
            adam.second_moment[i].copy_from_slice(&v[i].data);
        }
        Ok(adam)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            training_step: self.training_step,
            validation_metric: self.validation_metric,
            optimizer: self.optimizer.as_ref().map(|(s, _)| s.clone()),
            trainer_state: self.trainer_state.clone(),
        };
        let header = serde_json::to_vec(&serde_json::to_value(&header)?)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let moments = self.optimizer.iter().flat_map(|(_, a)| a);
        let arrays: Vec<&NamedArray> = self.parameters.iter().chain(moments).collect();
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for a in arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint format version {version}")));
        }
        let header_len = read_u64(&mut r)? as usize;
        if header_len > r.len() {
            return Err(Error::Data("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..header_len])?;
        r = &r[header_len..];
        let count = read_u32(&mut r)? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > r.len() {
                return Err(Error::Data("truncated array name".into()));
            }
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Data("array name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .map(|bytes| bytes / 4)
                .ok_or_else(|| Error::Data(format!("array {name} too large")))?;
            if len * 4 > r.len() {
                return Err(Error::Data(format!("truncated array {name}")));
            }
            let data = r[..len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            r = &r[len * 4..];
            arrays.push(NamedArray { name, shape, data });
        }
        if !r.is_empty() {
            return Err(Error::Data(format!("{} trailing bytes after checkpoint", r.len())));
        }
        let n_moments = arrays.iter().filter(|a| a.name.starts_with("adam.")).count();
        let moments = arrays.split_off(arrays.len() - n_moments);
        let optimizer = match (header.optimizer, moments.is_empty()) {
            (Some(state), _) => Some((state, moments)),
            (None, true) => None,
            (None, false) => return Err(Error::Data("optimizer moments without optimizer state".into())),
        };
        let ckpt = Checkpoint {
            config: header.config,
            parameters: arrays,
            training_step: header.training_step,
            validation_metric: header.validation_metric,
            optimizer,
            trainer_state: header.trainer_state,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("create {}", tmp.display()), e))?;
        f.write_all(&bytes)
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(format!("write {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("rename to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Data("truncated checkpoint".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
