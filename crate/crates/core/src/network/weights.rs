//! Named weight sets, initialisation and the `CNWT` weights file.
//!
//! File layout: magic `CNWT`, format version (u16 LE), manifest length
//! (u32 LE), UTF-8 JSON manifest `{hyperparams, tensors: [{name, shape,
//! offset}]}`, then the tensors as little-endian f32 in manifest order.
//! Offsets are in bytes from the start of the payload.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::HyperParams;
use crate::error::{Error, Result, WeightsError};
use crate::tensor::{Scalar, Tensor};

pub const WEIGHTS_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"CNWT";
const CLS_STD: f64 = 0.02;

/// Every tensor of a model, addressable by name, in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T: Scalar = f64> {
    pub hyper: HyperParams,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ModelWeights<T> {
    /// Assembles a weight set, checking it against the layout implied by `hyper`.
    pub fn from_named(hyper: HyperParams, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        hyper.validate()?;
        let mut given: HashMap<String, Tensor<T>> = named.into_iter().collect();
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in hyper.layout() {
            let t = given
                .remove(&name)
                .ok_or_else(|| WeightsError::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(WeightsError::ShapeMismatch {
                    name,
                    expected: shape,
                    found: t.shape().to_vec(),
                }
                .into());
            }
            if !t.is_finite() {
                return Err(WeightsError::NonFinite(name).into());
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some(extra) = given.keys().next() {
            return Err(WeightsError::Manifest(format!("unexpected tensor `{extra}`")).into());
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            hyper,
            names,
            tensors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Panics on unknown names; the layout is closed, so a miss is a bug.
    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.tensors[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = self.index[name];
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            hyper: self.hyper.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Copy with every tensor replaced, keeping names and order.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let named = self.names.iter().cloned().zip(tensors).collect();
        Self::from_named(self.hyper.clone(), named)
    }
}

/// Fan-in scaled uniform kernels, zero biases, unit layer-norm gains and a
/// small normal classification token. Reproducible from `seed`.
pub fn init_weights(hyper: &HyperParams, seed: u64) -> Result<ModelWeights> {
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, CLS_STD).expect("valid normal");
    let named = hyper
        .layout()
        .into_iter()
        .map(|(name, shape)| {
            let t = if name == "cls" {
                Tensor::from_fn(shape, |_| normal.sample(&mut rng))
            } else if name.ends_with(".g") {
                Tensor::full(shape, 1.0)
            } else if !super::decays(&name) {
                Tensor::zeros(shape)
            } else {
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
            };
            (name, t)
        })
        .collect();
    ModelWeights::from_named(hyper.clone(), named)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    hyperparams: HyperParams,
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Serialises to the `CNWT` format (values rounded to f32).
pub fn weights_to_bytes<T: Scalar>(w: &ModelWeights<T>) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut records = Vec::with_capacity(w.len());
    for (name, t) in w.iter() {
        if !t.is_finite() {
            return Err(WeightsError::NonFinite(name.to_string()).into());
        }
        records.push(TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 4 * t.len();
    }
    let manifest = serde_json::to_vec(&Manifest {
        hyperparams: w.hyper.clone(),
        tensors: records,
    })?;
    let mut out = Vec::with_capacity(10 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in w.tensors() {
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'b>(bytes: &'b [u8], at: usize, n: usize) -> Result<&'b [u8]> {
    bytes.get(at..at + n).ok_or_else(|| {
        WeightsError::Truncated {
            needed: at + n,
            available: bytes.len(),
        }
        .into()
    })
}

/// Parses a `CNWT` image. When `expected` is given, every tensor must have
/// the shape that configuration implies.
pub fn weights_from_bytes(bytes: &[u8], expected: Option<&HyperParams>) -> Result<ModelWeights> {
    let magic = take(bytes, 0, 4)?;
    if magic != MAGIC {
        return Err(WeightsError::BadMagic {
            found: magic.try_into().unwrap(),
        }
        .into());
    }
    let version = u16::from_le_bytes(take(bytes, 4, 2)?.try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::UnsupportedVersion {
            found: version,
            supported: WEIGHTS_VERSION,
        }
        .into());
    }
    let mlen = u32::from_le_bytes(take(bytes, 6, 4)?.try_into().unwrap()) as usize;
    let manifest: Manifest = serde_json::from_slice(take(bytes, 10, mlen)?)
        .map_err(|e| WeightsError::Manifest(e.to_string()))?;
    let payload = &bytes[10 + mlen..];

    if let Some(want) = expected {
        let found: HashMap<&str, &Vec<usize>> = manifest.tensors.iter().map(|r| (r.name.as_str(), &r.shape)).collect();
        for (name, shape) in want.layout() {
            match found.get(name.as_str()) {
                None => return Err(WeightsError::MissingTensor(name).into()),
                Some(s) if **s != shape => {
                    return Err(WeightsError::ShapeMismatch {
                        name,
                        expected: shape,
                        found: (*s).clone(),
                    }
                    .into())
                }
                _ => {}
            }
        }
        if *want != manifest.hyperparams {
            return Err(WeightsError::Manifest(format!(
                "file hyperparameters {:?} differ from the configured {:?}",
                manifest.hyperparams, want
            ))
            .into());
        }
    }

    let needed = manifest
        .tensors
        .iter()
        .map(|r| r.offset + 4 * r.shape.iter().product::<usize>())
        .max()
        .unwrap_or(0);
    if payload.len() < needed {
        return Err(WeightsError::Truncated {
            needed: 10 + mlen + needed,
            available: bytes.len(),
        }
        .into());
    }
    let named = manifest
        .tensors
        .into_iter()
        .map(|r| {
            let n: usize = r.shape.iter().product();
            let data = payload[r.offset..r.offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Ok((r.name, Tensor::new(r.shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelWeights::from_named(manifest.hyperparams, named)
}

pub fn save_weights<T: Scalar>(path: impl AsRef<Path>, w: &ModelWeights<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_bytes(w)?).map_err(|e| Error::io(path, e))
}

/// Loads a weights file with whatever hyperparameters it declares.
pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    weights_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?, None)
}

/// Loads a weights file that must match the given configuration.
pub fn load_weights_expecting(path: impl AsRef<Path>, hyper: &HyperParams) -> Result<ModelWeights> {
    let path = path.as_ref();
    weights_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?, Some(hyper))
}
