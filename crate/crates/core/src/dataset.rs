//! Procedural train/test splits of normal textures and forged anomalies, and
//! their on-disk layout.
//!
//! A split directory holds `manifest.json` plus one image and one mask PGM
//! per sample. Paths in the manifest are relative to the split directory.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::grid::GridCell;
use crate::numerics::Tensor;
use crate::synth::{nsa_generate, Label, SynthConfig, SynthSample};
use crate::texture::{self, TextureConfig};
use crate::{pnm, rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// `(H, W)`.
    pub image_size: (usize, usize),
    pub texture: TextureConfig,
    pub synth: SynthConfig,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            n_train: 400,
            n_test: 100,
            image_size: (64, 64),
            texture: TextureConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::Train => 1 << 40,
            Split::Test => 2 << 40,
        }
    }
}

/// Rounds every value to the nearest 8-bit level so that the in-memory
/// sample equals what a PGM round trip yields.
fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| pnm::quantize(v) as f64 / 255.0)
}

/// Forges sample `index` of a split. Odd indices are abnormal.
pub fn forge_sample(cfg: &ForgeConfig, seed: u64, split: Split, index: usize) -> Result<SynthSample> {
    let (h, w) = cfg.image_size;
    let mut r = rng::stream(seed, split.salt() | index as u64);
    let base = texture::render(&cfg.texture, h, w, &mut r);
    if index.is_multiple_of(2) {
        return Ok(SynthSample::normal(quantize(&base)));
    }
    let donor = texture::render(&cfg.texture, h, w, &mut r);
    let nsa_seed: u64 = r.random();
    let mut s = nsa_generate(nsa_seed, &[base, donor], &cfg.synth)?;
    s.image = quantize(&s.image);
    Ok(s)
}

pub fn forge_split(cfg: &ForgeConfig, seed: u64, split: Split) -> Result<Vec<SynthSample>> {
    let n = match split {
        Split::Train => cfg.n_train,
        Split::Test => cfg.n_test,
    };
    (0..n).into_par_iter().map(|i| forge_sample(cfg, seed, split, i)).collect()
}

/// Normal images only, rendered from a dedicated stream; used as few-shot
/// reference pools.
pub fn forge_normals(cfg: &ForgeConfig, seed: u64, n: usize) -> Vec<Tensor> {
    let (h, w) = cfg.image_size;
    (0..n)
        .map(|i| quantize(&texture::render(&cfg.texture, h, w, &mut rng::stream(seed, (3 << 40) | i as u64))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub mask: String,
    pub label: Label,
    pub cells: Vec<GridCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub split: Split,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes a split into `dir` and returns its manifest.
pub fn write_split(dir: &Path, seed: u64, split: Split, samples: &[SynthSample]) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = format!("img_{i:05}.pgm");
        let mask = format!("mask_{i:05}.pgm");
        pnm::write(dir.join(&image), &s.image)?;
        pnm::write(dir.join(&mask), &s.gt_mask)?;
        entries.push(ManifestEntry { image, mask, label: s.label, cells: s.position_cells.clone() });
    }
    let manifest = Manifest { version: 1, seed, split, samples: entries };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Loads every sample of a split directory.
pub fn read_split(dir: &Path) -> Result<Vec<SynthSample>> {
    let manifest = read_manifest(dir)?;
    manifest
        .samples
        .par_iter()
        .map(|e| {
            let image = pnm::read(dir.join(&e.image))?;
            let mask_img = pnm::read(dir.join(&e.mask))?;
            let (h, w, _) = mask_img.dims3("read_split")?;
            let gt_mask = Tensor::new(vec![h, w], mask_img.data().iter().map(|&v| (v > 0.5) as u8 as f64).collect())?;
            if e.label.is_abnormal() == (gt_mask.sum() == 0.0) || (e.label.is_abnormal() && e.cells.is_empty()) {
                return Err(Error::Input(format!("{}: label and mask disagree", dir.join(&e.image).display())));
            }
            Ok(SynthSample { image, gt_mask, label: e.label, position_cells: e.cells.clone() })
        })
        .collect()
}

/// Every `.pgm`/`.ppm` file directly inside `dir`, sorted by file name.
pub fn read_image_dir(dir: &Path) -> Result<Vec<(PathBuf, Tensor)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("pgm") | Some("ppm")))
        .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("mask_")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| pnm::read(&p).map(|t| (p, t)))
        .collect()
}
