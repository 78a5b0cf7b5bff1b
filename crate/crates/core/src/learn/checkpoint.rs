//! Versioned parameter snapshots: a JSON manifest naming each tensor and an
//! adjacent little-endian `f64` blob holding their values in manifest order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scoring::{f64s_to_le_bytes, le_bytes_to_f64s};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    /// Last completed stage; 0 for an untrained initialization.
    pub stage: u8,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    seed: u64,
    stage: u8,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// `stage2.json` → `stage2.f64`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("f64")
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, seed: u64, stage: u8) -> Self {
        Checkpoint {
            seed,
            stage,
            tensors: params.tensors().into_iter().map(|(n, _, t)| (n, t.clone())).collect(),
        }
    }

    pub fn params(&self, cfg: &ModelConfig, categories: usize) -> Result<ModelParams> {
        ModelParams::from_named(cfg, categories, self.tensors.clone())
    }

    pub fn manifest_json(&self) -> String {
        let m = Manifest {
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            stage: self.stage,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&m).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn blob_bytes(&self) -> Vec<u8> {
        let values: Vec<f64> = self.tensors.iter().flat_map(|(_, t)| t.data().iter().copied()).collect();
        f64s_to_le_bytes(&values)
    }

    /// Writes the manifest and its blob, creating the parent directory.
    pub fn save(&self, manifest: &Path) -> Result<()> {
        crate::pnm::create_parent(manifest)?;
        std::fs::write(manifest, self.manifest_json()).map_err(|e| Error::io(manifest, e))?;
        let blob = blob_path(manifest);
        std::fs::write(&blob, self.blob_bytes()).map_err(|e| Error::io(&blob, e))
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest, e))?;
        if m.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: version {} (expected {CHECKPOINT_VERSION})",
                manifest.display(),
                m.version
            )));
        }
        if m.stage > 3 {
            return Err(Error::Checkpoint(format!("{}: stage {} outside 0..=3", manifest.display(), m.stage)));
        }
        let blob = blob_path(manifest);
        let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let expected: usize = m.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if bytes.len() != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "{}: {} bytes for {expected} values",
                blob.display(),
                bytes.len()
            )));
        }
        let values = le_bytes_to_f64s(&bytes);
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(m.tensors.len());
        for entry in m.tensors {
            let n: usize = entry.shape.iter().product();
            let t = Tensor::new(entry.shape, values[offset..offset + n].to_vec())
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", entry.name)))?;
            offset += n;
            tensors.push((entry.name, t));
        }
        Ok(Checkpoint { seed: m.seed, stage: m.stage, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::default();
        let p = ModelParams::init(&cfg, 2, 11).unwrap();
        let ck = Checkpoint::from_params(&p, 11, 2);
        let a = dir.path().join("a.json");
        ck.save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        assert_eq!(loaded, ck);
        assert_eq!(loaded.params(&cfg, 2).unwrap(), p);
        let b = dir.path().join("b.json");
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(std::fs::read(blob_path(&a)).unwrap(), std::fs::read(blob_path(&b)).unwrap());
    }

    #[test]
    fn rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let ck = Checkpoint::from_params(&ModelParams::init(&ModelConfig::default(), 2, 1).unwrap(), 1, 1);
        ck.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replacen("\"version\": 1", "\"version\": 2", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
