//! Named-tensor checkpoint files.
//!
//! A checkpoint is one JSON document:
//!
//! ```json
//! {"format": "landmatch-tensors", "version": 1,
//!  "tensors": [{"name": "gnn.l0.w", "shape": [32, 32], "data": [ ... ]}]}
//! ```
//!
//! `data` is row-major. Floats are written in shortest round-trip form, so a
//! save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "landmatch-tensors";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet) -> Self {
        let tensors = params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            tensors,
        }
    }

    /// Overwrites every tensor of `params` with the same-named checkpoint
    /// entry. Missing names or shape changes are errors.
    pub fn restore_into(&self, params: &mut ParamSet) -> Result<()> {
        let mut missing = Vec::new();
        for id in 0..params.len() {
            let name = params.name(id).to_string();
            match self.tensors.iter().find(|t| t.name == name) {
                Some(nt) => {
                    let t = Tensor::new(nt.shape.clone(), nt.data.clone())?;
                    if t.shape() != params.get(id).shape() {
                        return Err(Error::shape(
                            "checkpoint",
                            format!("{name}: {:?} vs model {:?}", t.shape(), params.get(id).shape()),
                        ));
                    }
                    *params.get_mut(id) = t;
                }
                None => missing.push(name),
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "checkpoint lacks tensors: {}",
                missing.join(", ")
            )))
        }
    }
}

pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    let ck = Checkpoint::from_params(params);
    let text = serde_json::to_string(&ck).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::format(path, format!("unknown format {:?}", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", ck.version)));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ParamSet::new();
        p.add("a", Tensor::matrix(2, 2, vec![0.1, 1.0 / 3.0, -2e-300, 7.0]).unwrap());
        p.add("b", Tensor::row(vec![std::f64::consts::PI]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&path, &p).unwrap();
        let mut q = p.clone();
        q.get_mut(0).data_mut().fill(0.0);
        load_checkpoint(&path).unwrap().restore_into(&mut q).unwrap();
        assert_eq!(p, q);
    }
}
