//! JSON checkpoints: configuration, vocabularies and named parameter
//! tensors.
//!
//! Values are stored as `f64`, which holds every `f32` exactly, and JSON
//! numbers are parsed with full round-trip precision, so loading a saved
//! model reproduces its outputs bit for bit.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use x2parser_core::corpus::Vocabs;
use x2parser_core::harness::{AnyParser, ModelConfig};
use x2parser_core::model::{ModelError, ModelFamily};
use x2parser_core::neural::{Module, Scalar};

use crate::io::{create, open, IoError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("vocabulary hash mismatch: stored {stored}, computed {computed}")]
    VocabHash { stored: String, computed: String },
    #[error("parameter mismatch at `{name}`: {reason}")]
    Params { name: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub family: ModelFamily,
    pub config: ModelConfig,
    pub vocabs: Vocabs,
    /// SHA-256 of the vocabularies' JSON encoding.
    pub vocab_hash: String,
    pub params: Vec<TensorRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn vocab_hash(vocabs: &Vocabs) -> String {
    sha256_hex(serde_json::to_string(vocabs).expect("vocabularies serialize").as_bytes())
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(model: &AnyParser<F>) -> Self {
        use x2parser_core::model::Parser;
        let mut params = Vec::new();
        model.visit(&mut |p| {
            params.push(TensorRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|v| v.as_f64()).collect(),
            })
        });
        Checkpoint {
            format_version: FORMAT_VERSION,
            family: model.family(),
            config: model.config(),
            vocabs: model.vocabs().clone(),
            vocab_hash: vocab_hash(model.vocabs()),
            params,
        }
    }

    /// Rebuilds the model and overwrites every parameter with the stored
    /// values. Names, shapes and count must match exactly.
    pub fn into_model<F: Scalar>(self) -> Result<AnyParser<F>, CheckpointError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version(self.format_version));
        }
        let computed = vocab_hash(&self.vocabs);
        if computed != self.vocab_hash {
            return Err(CheckpointError::VocabHash { stored: self.vocab_hash, computed });
        }
        if self.config.family() != self.family {
            return Err(CheckpointError::Params {
                name: "family".into(),
                reason: format!("header says {} but the config is {}", self.family, self.config.family()),
            });
        }
        let mut model = self.config.build::<F>(self.vocabs)?;
        let mut stored = self.params.into_iter();
        let mut error = None;
        model.visit_mut(&mut |p| {
            if error.is_some() {
                return;
            }
            match stored.next() {
                None => error = Some((p.name.clone(), "missing from the checkpoint".to_string())),
                Some(t) if t.name != p.name => error = Some((p.name.clone(), format!("found `{}`", t.name))),
                Some(t) if t.shape != p.value.shape() || t.data.len() != p.value.len() => {
                    error = Some((p.name.clone(), format!("shape {:?}, expected {:?}", t.shape, p.value.shape())))
                }
                Some(t) => {
                    for (dst, src) in p.value.data_mut().iter_mut().zip(&t.data) {
                        *dst = F::from_f64(*src);
                    }
                }
            }
        });
        if let Some(extra) = stored.next() {
            error.get_or_insert((extra.name, "not a parameter of this model".into()));
        }
        match error {
            Some((name, reason)) => Err(CheckpointError::Params { name, reason }),
            None => Ok(model),
        }
    }
}

pub fn save<F: Scalar>(model: &AnyParser<F>, path: &Path) -> Result<(), CheckpointError> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &Checkpoint::from_model(model))?;
    w.flush().map_err(|source| IoError::File { path: path.into(), source })?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<AnyParser<F>, CheckpointError> {
    let checkpoint: Checkpoint = serde_json::from_reader(open(path)?)?;
    checkpoint.into_model()
}
