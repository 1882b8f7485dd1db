//! Tensor checkpoint container shared by the cleaner and the classifier.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        b"GCNC"
//! version      u32 (= 1)
//! config       u32 byte length, then UTF-8 JSON {"kind": ..., "config": ...}
//! count        u32 number of tensors
//! per tensor:
//!   name       u32 byte length, then UTF-8 bytes
//!   rank       u32
//!   dims       rank x u64
//!   data       prod(dims) x f64, row-major
//! ```
//!
//! Optimizer moments are not stored; a restored model starts a fresh
//! optimizer.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::Cursor;
use crate::classifier::{BuiltinClassifier, BuiltinClassifierConfig, BuiltinWeights};
use crate::cleaner::{CleanerConfig, CleanerParams, CleanerWeights};
use crate::error::{Error, Result};
use crate::optim::Optimizer;

pub const MAGIC: &[u8; 4] = b"GCNC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<NamedTensor>,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    super::put_string(&mut out, &ckpt.config_json);
    out.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for t in &ckpt.tensors {
        super::put_string(&mut out, &t.name);
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor::new(buf);
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic: not a GCNC checkpoint".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let config_json = c.string("config block")?;
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let name = c.string("tensor name")?;
        let rank = c.u32("tensor rank")?;
        let mut dims = Vec::with_capacity(rank.min(8) as usize);
        for _ in 0..rank {
            dims.push(c.u64("tensor dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| c.error("tensor size overflows"))?;
        let data = c
            .take(numel, "tensor data")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    if c.remaining() != 0 {
        return Err(c.error(format!("{} trailing bytes", c.remaining())));
    }
    Ok(Checkpoint { config_json, tensors })
}

pub fn save(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
enum ModelConfig {
    Cleaner(CleanerConfig),
    BuiltinClassifier(BuiltinClassifierConfig),
}

fn take_tensor(tensors: &mut Vec<NamedTensor>, name: &str, dims: &[usize]) -> Result<Vec<f64>> {
    let pos = tensors
        .iter()
        .position(|t| t.name == name)
        .ok_or_else(|| Error::validation(format!("checkpoint is missing tensor {name}")))?;
    let t = tensors.remove(pos);
    if t.dims != dims {
        return Err(Error::shape(
            "checkpoint tensor",
            format!("{name}{dims:?}"),
            format!("{name}{:?}", t.dims),
        ));
    }
    Ok(t.data)
}

fn matrix(data: Vec<f64>, dims: &[usize]) -> Array2<f64> {
    Array2::from_shape_vec((dims[0], dims[1]), data).expect("dims checked")
}

pub fn cleaner_to_checkpoint(params: &CleanerParams) -> Result<Checkpoint> {
    let config_json = serde_json::to_string(&ModelConfig::Cleaner(params.config.clone()))?;
    let tensors = params
        .weights
        .layout()
        .into_iter()
        .zip(params.weights.slices())
        .map(|((name, dims), data)| NamedTensor {
            name,
            dims,
            data: data.to_vec(),
        })
        .collect();
    Ok(Checkpoint { config_json, tensors })
}

pub fn cleaner_from_checkpoint(ckpt: &Checkpoint) -> Result<CleanerParams> {
    let ModelConfig::Cleaner(config) = serde_json::from_str(&ckpt.config_json)? else {
        return Err(Error::validation("checkpoint does not hold a cleaner"));
    };
    config.validate()?;
    let mut weights = CleanerWeights::zeros(&config);
    let mut tensors = ckpt.tensors.clone();
    let layout = weights.layout();
    for ((name, dims), slot) in layout.iter().zip(weights.slices_mut()) {
        slot.copy_from_slice(&take_tensor(&mut tensors, name, dims)?);
    }
    if let Some(extra) = tensors.first() {
        return Err(Error::validation(format!(
            "unexpected tensor {} in cleaner checkpoint",
            extra.name
        )));
    }
    Ok(CleanerParams {
        optimizer: Optimizer::new(config.optimizer),
        config,
        weights,
    })
}

pub fn classifier_to_checkpoint(classifier: &BuiltinClassifier) -> Result<Checkpoint> {
    let config_json = serde_json::to_string(&ModelConfig::BuiltinClassifier(classifier.config().clone()))?;
    let tensors = classifier
        .weights()
        .named()
        .into_iter()
        .map(|(name, dims, data)| NamedTensor {
            name: format!("classifier.{name}"),
            dims,
            data: data.to_vec(),
        })
        .collect();
    Ok(Checkpoint { config_json, tensors })
}

pub fn classifier_from_checkpoint(ckpt: &Checkpoint) -> Result<BuiltinClassifier> {
    let ModelConfig::BuiltinClassifier(config) = serde_json::from_str(&ckpt.config_json)? else {
        return Err(Error::validation("checkpoint does not hold a classifier"));
    };
    let mut tensors = ckpt.tensors.clone();
    let dims_of = |name: &str| -> Result<Vec<usize>> {
        ckpt.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.dims.clone())
            .ok_or_else(|| Error::validation(format!("checkpoint is missing tensor {name}")))
    };
    let (d1, d2) = (dims_of("classifier.w1")?, dims_of("classifier.w2")?);
    if d1.len() != 2 || d2.len() != 2 {
        return Err(Error::validation("classifier weight matrices must have rank 2"));
    }
    let (b1_len, b2_len) = (d1[1], if config.hidden_width == 0 { 0 } else { 1 });
    let weights = BuiltinWeights {
        w1: matrix(take_tensor(&mut tensors, "classifier.w1", &d1)?, &d1),
        b1: Array1::from(take_tensor(&mut tensors, "classifier.b1", &[b1_len])?),
        w2: matrix(take_tensor(&mut tensors, "classifier.w2", &d2)?, &d2),
        b2: Array1::from(take_tensor(&mut tensors, "classifier.b2", &[b2_len])?),
    };
    BuiltinClassifier::from_weights(config, weights)
}
