//! Named trainable tensors and their JSON checkpoint format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            tensors: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, m)| NamedTensor {
                    name: n.clone(),
                    rows: m.rows,
                    cols: m.cols,
                    data: m.data.clone(),
                })
                .collect(),
        }
    }

    /// Overwrites every tensor from `ckpt`, which must list exactly the same
    /// names and shapes.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint, config_hash: Option<&str>) -> Result<()> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if let Some(h) = config_hash {
            if h != ckpt.config_hash {
                return Err(Error::Checkpoint(format!(
                    "config hash mismatch: checkpoint {} vs current {h}",
                    ckpt.config_hash
                )));
            }
        }
        if ckpt.tensors.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                ckpt.tensors.len(),
                self.values.len()
            )));
        }
        for (t, (name, m)) in ckpt.tensors.iter().zip(self.names.iter().zip(&self.values)) {
            if &t.name != name || t.rows != m.rows || t.cols != m.cols || t.data.len() != t.rows * t.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {} [{}x{}] does not match expected {name} [{}x{}]",
                    t.name, t.rows, t.cols, m.rows, m.cols
                )));
            }
        }
        for (t, m) in ckpt.tensors.iter().zip(self.values.iter_mut()) {
            m.data.copy_from_slice(&t.data);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParamStore::new();
        let a = s.add("a", Matrix::from_vec(1, 2, vec![0.1, 1.0 / 3.0]));
        s.add("b", Matrix::zeros(2, 2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        s.to_checkpoint("abc").write(&path).unwrap();

        let mut t = s.clone();
        t.get_mut(a).data[0] = 9.0;
        t.load_checkpoint(&Checkpoint::read(&path).unwrap(), Some("abc")).unwrap();
        assert_eq!(t, s);
    }

    #[test]
    fn checkpoint_shape_mismatch() {
        let mut s = ParamStore::new();
        s.add("a", Matrix::zeros(1, 2));
        let mut other = ParamStore::new();
        other.add("a", Matrix::zeros(2, 1));
        let ck = other.to_checkpoint("h");
        assert!(matches!(s.load_checkpoint(&ck, None), Err(Error::Checkpoint(_))));
        assert!(matches!(s.load_checkpoint(&s.to_checkpoint("x"), Some("y")), Err(Error::Checkpoint(_))));
    }
}
