//! Versioned JSON checkpoints holding shaped, row-major weight arrays.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        TensorRecord { shape, data }
    }

    pub(crate) fn check(&self, name: &str, shape: &[usize]) -> Result<()> {
        if self.shape != shape || self.data.len() != shape.iter().product::<usize>() {
            return Err(Error::validation(format!(
                "tensor {name}: expected shape {shape:?}, found {:?} with {} values",
                self.shape,
                self.data.len()
            )));
        }
        if let Some(v) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("tensor {name}: non-finite value {v}")));
        }
        Ok(())
    }
}

/// Common envelope: `{format_version, model, tensors, meta}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile<M> {
    pub format_version: u32,
    pub model: String,
    pub meta: M,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl<M: Serialize + DeserializeOwned> CheckpointFile<M> {
    pub fn new(model: &str, meta: M, tensors: BTreeMap<String, TensorRecord>) -> Self {
        CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: model.to_string(),
            meta,
            tensors,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, expected_model: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint format_version {}",
                file.format_version
            )));
        }
        if file.model != expected_model {
            return Err(Error::validation(format!(
                "checkpoint holds a {:?} model, expected {expected_model:?}",
                file.model
            )));
        }
        Ok(file)
    }

    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&TensorRecord> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::validation(format!("checkpoint missing tensor {name}")))?;
        t.check(name, shape)?;
        Ok(t)
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
