//! JSON tensor dumps.
//!
//! Every tensor is stored as `{name, shape: [rows, cols], data: [f64...]}`
//! in row-major order. Values are written as shortest round-trip decimals,
//! so `f64` and `f32` tensors reload bit-identically.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linearize::Vocab;
use crate::nn::{ModelConfig, ParamStore, Seq2Seq};
use crate::scalar::Scalar;
use crate::selfval::Validator;
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Ordered named tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TensorDump {
    pub tensors: Vec<TensorRecord>,
}

impl TensorDump {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        Self::from_named(store.iter())
    }

    pub fn from_named<'a, T: Scalar + 'a>(items: impl Iterator<Item = (&'a str, &'a Matrix<T>)>) -> Self {
        Self {
            tensors: items
                .map(|(name, m)| TensorRecord {
                    name: name.to_string(),
                    shape: [m.rows(), m.cols()],
                    data: m.data().iter().map(|x| x.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_store<T: Scalar>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for m in self.to_matrices()? {
            store.add(m.0, m.1);
        }
        Ok(store)
    }

    pub fn to_matrices<T: Scalar>(&self) -> Result<Vec<(String, Matrix<T>)>> {
        self.tensors
            .iter()
            .map(|t| {
                let [r, c] = t.shape;
                if r * c != t.data.len() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} declares {r}x{c} but holds {} values",
                        t.name,
                        t.data.len()
                    )));
                }
                if t.data.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("checkpoint tensor {}", t.name)));
                }
                Ok((t.name.clone(), Matrix::from_vec(r, c, t.data.iter().map(|&x| T::of(x)).collect())))
            })
            .collect()
    }
}

/// A frozen or trainable encoder-decoder with the vocabulary it was built on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub frozen: bool,
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub params: TensorDump,
}

impl ModelCheckpoint {
    pub const FORMAT: &'static str = "fsner-model";

    pub fn from_validator<T: Scalar>(v: &Validator<T>, vocab: &Vocab) -> Self {
        Self {
            format: Self::FORMAT.into(),
            version: FORMAT_VERSION,
            frozen: v.frozen,
            model: *v.model.config(),
            vocab: vocab.tokens().to_vec(),
            params: TensorDump::from_store(v.model.params()),
        }
    }

    pub fn to_validator<T: Scalar>(&self) -> Result<(Validator<T>, Vocab)> {
        if self.format != Self::FORMAT || self.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        let model = Seq2Seq::from_params(self.model, self.params.to_store()?)?;
        let vocab = Vocab::from_words(self.vocab.iter().skip(7));
        if vocab.tokens() != self.vocab.as_slice() {
            return Err(Error::Checkpoint("vocabulary does not start with the special tokens".into()));
        }
        Ok((
            Validator {
                model,
                frozen: self.frozen,
            },
            vocab,
        ))
    }
}

pub fn save_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of a value's canonical JSON.
pub fn content_hash<S: Serialize>(value: &S) -> String {
    let text = serde_json::to_vec(value).expect("value serializes");
    Sha256::digest(&text).iter().map(|b| format!("{b:02x}")).collect()
}
