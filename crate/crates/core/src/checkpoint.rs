//! Self-describing JSON checkpoints.
//!
//! ```text
//! {"format_version": 1, "config": {...}, "trained_epochs": 100,
//!  "params": [{"name": "layers.0.weight", "value": [[...], ...]}, ...],
//!  "optimizer": null | {"step": .., "beta1": .., "beta2": .., "eps": ..,
//!                       "m": [...], "v": [...]}}
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Tensor};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NestedArray {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

impl NestedArray {
    fn from_tensor(t: &Tensor) -> Self {
        if t.shape().len() == 2 {
            NestedArray::Matrix(t.to_rows())
        } else {
            NestedArray::Vector(t.data().to_vec())
        }
    }

    fn into_tensor(self) -> Result<Tensor> {
        match self {
            NestedArray::Matrix(rows) => Tensor::from_rows(&rows),
            NestedArray::Vector(v) => Tensor::new(vec![v.len()], v),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    value: NestedArray,
}

#[derive(Serialize, Deserialize)]
struct OptimizerDoc {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<NestedArray>,
    v: Vec<NestedArray>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    config: ModelConfig,
    #[serde(default)]
    trained_epochs: usize,
    params: Vec<NamedArray>,
    #[serde(default)]
    optimizer: Option<OptimizerDoc>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub trained_epochs: usize,
    pub optimizer: Option<AdamState>,
}

pub fn save_checkpoint(m: &Model, path: &Path) -> Result<()> {
    write_checkpoint(m, 0, None, path)
}

/// Writes the checkpoint to a sibling temporary file, then renames it into
/// place so a reader never sees a partial document.
pub fn write_checkpoint(
    m: &Model,
    trained_epochs: usize,
    optimizer: Option<&AdamState>,
    path: &Path,
) -> Result<()> {
    let doc = CheckpointDoc {
        format_version: FORMAT_VERSION,
        config: m.config.clone(),
        trained_epochs,
        params: m
            .named_params()
            .into_iter()
            .map(|(name, t)| NamedArray {
                name,
                value: NestedArray::from_tensor(t),
            })
            .collect(),
        optimizer: optimizer.filter(|s| s.step > 0).map(|s| OptimizerDoc {
            step: s.step,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.eps,
            m: s.first_moments()
                .iter()
                .map(NestedArray::from_tensor)
                .collect(),
            v: s.second_moments()
                .iter()
                .map(NestedArray::from_tensor)
                .collect(),
        }),
    };
    let text = serde_json::to_string(&doc).expect("checkpoint serializes");
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(text.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    Ok(read_checkpoint(path)?.model)
}

/// Loads a checkpoint and checks its architecture against `expected`
/// (every field except the seed).
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let found = ModelConfig {
        seed: expected.seed,
        ..model.config.clone()
    };
    if &found != expected {
        return Err(Error::ConfigMismatch(format!(
            "expected {expected:?}, found {:?}",
            model.config
        )));
    }
    Ok(model)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema = |e: serde_json::Error| Error::Schema {
        line: e.line(),
        message: e.to_string(),
    };
    let probe: VersionProbe = serde_json::from_str(&text).map_err(schema)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version(probe.format_version));
    }
    let doc: CheckpointDoc = serde_json::from_str(&text).map_err(schema)?;
    let corrupt = |message: String| Error::Schema { line: 1, message };

    // Rebuild the layout from the config, then fill it in by name.
    let mut model = Model::init(doc.config.clone())?;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != doc.params.len() {
        return Err(corrupt(format!(
            "config implies {} parameter tensors, file has {}",
            expected.len(),
            doc.params.len()
        )));
    }
    let mut values = Vec::with_capacity(expected.len());
    for ((name, shape), stored) in expected.iter().zip(doc.params) {
        if &stored.name != name {
            return Err(corrupt(format!(
                "expected parameter {name}, found {}",
                stored.name
            )));
        }
        let t = stored.value.into_tensor()?;
        if t.shape() != shape.as_slice() {
            return Err(corrupt(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        values.push(t);
    }
    for (slot, v) in model.params_mut().into_iter().zip(values) {
        *slot = v;
    }

    let optimizer = match doc.optimizer {
        None => None,
        Some(o) => {
            let m =
                o.m.into_iter()
                    .map(NestedArray::into_tensor)
                    .collect::<Result<Vec<_>>>()?;
            let v =
                o.v.into_iter()
                    .map(NestedArray::into_tensor)
                    .collect::<Result<Vec<_>>>()?;
            let shapes_ok = m.len() == expected.len()
                && v.len() == expected.len()
                && expected
                    .iter()
                    .zip(m.iter().zip(&v))
                    .all(|((_, s), (a, b))| a.shape() == s.as_slice() && b.shape() == s.as_slice());
            if !shapes_ok {
                return Err(corrupt(
                    "optimizer moments do not match the parameters".into(),
                ));
            }
            Some(AdamState::from_parts(o.beta1, o.beta2, o.eps, o.step, m, v))
        }
    };
    Ok(Checkpoint {
        model,
        trained_epochs: doc.trained_epochs,
        optimizer,
    })
}
