//! Binary checkpoint format.
//!
//! Layout: the 8 magic bytes `CSJSCC01`, a little-endian `u32` byte count,
//! that many bytes of UTF-8 JSON header, then the tensor data as raw
//! little-endian `f32`. The header carries the format version, the
//! architecture, the step counter, Adam hyperparameters and a manifest of
//! `(name, role, shape, offset)` entries; offsets are in bytes from the start
//! of the data section. Unknown header fields are ignored.

use std::fs;
use std::path::Path;

use csjscc_core::autodiff::AdamConfig;
use csjscc_core::{AdamState, ArchitectureConfig, JsccModel, ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CSJSCC01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed header: {0}")]
    Header(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: ArchitectureConfig,
    pub step: u64,
    /// SNR the model was trained at; infinite for noiseless training.
    pub snr_train_db: f64,
    pub params: ParameterStore<f32>,
    pub adam: AdamState<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    AdamFirst,
    AdamSecond,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    offset: u64,
    #[serde(default = "yes")]
    trainable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    architecture: ArchitectureConfig,
    step: u64,
    /// `null` encodes an infinite (noiseless) training SNR.
    snr_train_db: Option<f64>,
    adam: AdamHeader,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: &str, role, trainable, t: &Tensor<f32>, data: &mut Vec<u8>| {
            tensors.push(TensorEntry {
                name: name.to_owned(),
                role,
                shape: t.shape().to_vec(),
                offset: data.len() as u64,
                trainable,
            });
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        };
        for p in self.params.iter() {
            push(&p.name, Role::Param, p.trainable, &p.value, &mut data);
        }
        for (p, (m, v)) in self
            .params
            .iter()
            .zip(self.adam.first.iter().zip(&self.adam.second))
        {
            push(&p.name, Role::AdamFirst, true, m, &mut data);
            push(&p.name, Role::AdamSecond, true, v, &mut data);
        }
        let header = Header {
            version: FORMAT_VERSION,
            architecture: self.architecture.clone(),
            step: self.step,
            snr_train_db: self.snr_train_db.is_finite().then_some(self.snr_train_db),
            adam: AdamHeader {
                beta1: self.adam.config.beta1,
                beta2: self.adam.config.beta2,
                eps: self.adam.config.eps,
                step: self.adam.step,
            },
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                CheckpointError::Truncated("file ends inside the magic bytes".into())
            } else {
                CheckpointError::BadMagic
            });
        }
        if &bytes[..8] != MAGIC {
            // Same family, other revision.
            if &bytes[..6] == b"CSJSCC" {
                let rev = std::str::from_utf8(&bytes[6..8])
                    .ok()
                    .and_then(|s| s.parse().ok());
                return Err(CheckpointError::UnsupportedVersion(rev.unwrap_or(0)));
            }
            return Err(CheckpointError::BadMagic);
        }
        let len_bytes: [u8; 4] = bytes
            .get(8..12)
            .ok_or_else(|| CheckpointError::Truncated("file ends inside the header length".into()))?
            .try_into()
            .unwrap();
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let json = bytes.get(12..12 + header_len).ok_or_else(|| {
            CheckpointError::Truncated(format!(
                "header needs {header_len} bytes, {} present",
                bytes.len() - 12
            ))
        })?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(header.version));
        }
        let data = &bytes[12 + header_len..];

        let model = JsccModel::new(header.architecture.clone())
            .map_err(|e| CheckpointError::Header(format!("invalid architecture: {e}")))?;
        let expected = header.architecture.parameter_shapes();
        let mut params = ParameterStore::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 4 * count;
            let raw = data.get(start..end).ok_or_else(|| {
                CheckpointError::Truncated(format!(
                    "tensor `{}` needs bytes {start}..{end} of a {}-byte data section",
                    entry.name,
                    data.len()
                ))
            })?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(&entry.shape, values)
                .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
            match entry.role {
                Role::Param => {
                    params
                        .insert(&entry.name, tensor, entry.trainable)
                        .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
                }
                Role::AdamFirst => first.push((entry.name.clone(), tensor)),
                Role::AdamSecond => second.push((entry.name.clone(), tensor)),
            }
        }
        model
            .check_params(&params)
            .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
        let moments = |list: Vec<(String, Tensor<f32>)>,
                       what: &str|
         -> Result<Vec<Tensor<f32>>, CheckpointError> {
            if list.is_empty() {
                return Ok(Vec::new());
            }
            if list.len() != expected.len() {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "{} Adam {what} moments for {} parameters",
                    list.len(),
                    expected.len()
                )));
            }
            list.into_iter()
                .zip(&expected)
                .map(|((name, t), (want, shape))| {
                    if name != *want || t.shape() != &shape[..] {
                        Err(CheckpointError::ShapeMismatch(format!(
                            "Adam {what} moment `{name}` {:?}, expected `{want}` {shape:?}",
                            t.shape()
                        )))
                    } else {
                        Ok(t)
                    }
                })
                .collect()
        };
        let first = moments(first, "first")?;
        let second = moments(second, "second")?;
        if first.len() != second.len() {
            return Err(CheckpointError::ShapeMismatch(
                "Adam moment lists differ in length".into(),
            ));
        }
        let adam = AdamState {
            config: AdamConfig {
                beta1: header.adam.beta1,
                beta2: header.adam.beta2,
                eps: header.adam.eps,
            },
            step: header.adam.step,
            first,
            second,
        };
        Ok(Checkpoint {
            architecture: header.architecture,
            step: header.step,
            snr_train_db: header.snr_train_db.unwrap_or(f64::INFINITY),
            params,
            adam,
        })
    }

    /// Write via a temporary sibling and rename, so readers never see a
    /// partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(Error::io(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Checkpoint::from_bytes(&bytes).map_err(|source| Error::Checkpoint {
            path: path.to_owned(),
            source,
        })
    }

    pub fn model(&self) -> Result<JsccModel> {
        Ok(JsccModel::new(self.architecture.clone())?)
    }
}
