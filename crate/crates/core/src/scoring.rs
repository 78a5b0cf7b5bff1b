//! Anomaly maps from the two localization paths: the trained prompt decoder
//! and the training-free memory bank.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoders::{ImageEncoder, PatchFeatureStack, LEVELS};
use crate::error::{Error, Result};
use crate::numerics::ops::{self, bilinear_upsample, bilinear_upsample_vjp};
use crate::numerics::Tensor;
use crate::prompt_bank::PromptMatrix;
use crate::rng;

/// Per-level linear maps `C3 → C2` aligning patch features with prompt
/// embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    /// `C3×C2` each.
    pub weights: [Tensor; LEVELS],
    /// `C2` each.
    pub biases: [Tensor; LEVELS],
}

impl DecoderParams {
    pub fn init(c3: usize, c2: usize, rng: &mut rng::StreamRng) -> Self {
        let scale = 2.0 / (c3 as f64).sqrt();
        DecoderParams {
            weights: std::array::from_fn(|_| Tensor::randn(vec![c3, c2], scale, rng)),
            biases: std::array::from_fn(|_| Tensor::zeros(vec![c2])),
        }
    }

    pub fn zeros_like(&self) -> Self {
        DecoderParams {
            weights: std::array::from_fn(|l| Tensor::zeros(self.weights[l].shape().to_vec())),
            biases: std::array::from_fn(|l| Tensor::zeros(self.biases[l].shape().to_vec())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in 0..LEVELS {
            let (_, c2) = self.weights[l].dims2("decoder")?;
            if self.biases[l].shape() != [c2] {
                return Err(Error::dim("decoder", format!("level {} bias {:?} vs width {c2}", l + 1, self.biases[l].shape())));
            }
            if !self.weights[l].is_finite() || !self.biases[l].is_finite() {
                return Err(Error::Input(format!("decoder level {} has non-finite entries", l + 1)));
            }
        }
        Ok(())
    }
}

/// Native-resolution level maps and their fused, upsampled mean.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyMapSet {
    /// `H×W`.
    pub fused: Tensor,
    /// `h_l×w_l`.
    pub levels: [Tensor; LEVELS],
}

impl AnomalyMapSet {
    /// Fuses level maps by averaging their bilinear upsamplings to
    /// `out_size`.
    pub fn from_levels(levels: [Tensor; LEVELS], out_size: (usize, usize)) -> Result<Self> {
        let mut fused = Tensor::zeros(vec![out_size.0, out_size.1]);
        for m in &levels {
            fused.axpy(0.25, &bilinear_upsample(m, out_size.0, out_size.1)?)?;
        }
        Ok(AnomalyMapSet { fused, levels })
    }
}

/// Intermediate values of one decoder pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct DecoderTrace {
    pub maps: AnomalyMapSet,
    inputs: [Tensor; LEVELS],
    probs: [Tensor; LEVELS],
}

fn check_stack(stack: &PatchFeatureStack, params: &DecoderParams, pm: &PromptMatrix) -> Result<()> {
    pm.check_scorable()?;
    for l in 0..LEVELS {
        let (c3, c2) = params.weights[l].dims2("decode_map")?;
        let feat = stack.levels[l].shape()[2];
        if feat != c3 || c2 != pm.width() {
            return Err(Error::dim(
                "decode_map",
                format!(
                    "level {}: features of width {feat}, decoder {c3}→{c2}, prompts of width {}",
                    l + 1,
                    pm.width()
                ),
            ));
        }
    }
    Ok(())
}

/// Decoder forward pass retaining what the backward pass needs.
pub fn decode_map_traced(
    stack: &PatchFeatureStack,
    pm: &PromptMatrix,
    params: &DecoderParams,
    out_size: (usize, usize),
) -> Result<DecoderTrace> {
    check_stack(stack, params, pm)?;
    let text_t = ops::transpose(&pm.embeddings)?;
    let mut maps = Vec::with_capacity(LEVELS);
    let mut inputs = Vec::with_capacity(LEVELS);
    let mut probs = Vec::with_capacity(LEVELS);
    for l in 0..LEVELS {
        let (gh, gw) = stack.grid(l);
        let x = stack.level_matrix(l);
        let z = ops::add_bias(&ops::matmul(&x, &params.weights[l])?, &params.biases[l])?;
        let p = ops::softmax_rows(&ops::matmul(&z, &text_t)?)?;
        // a / (a + b) rather than a alone: the rounded row sum can exceed 1.
        let scores: Vec<f64> = (0..gh * gw)
            .map(|i| {
                let (mut a, mut b) = (0.0, 0.0);
                for (v, &m) in p.row(i).iter().zip(&pm.abnormal_mask) {
                    if m {
                        a += v;
                    } else {
                        b += v;
                    }
                }
                a / (a + b)
            })
            .collect();
        maps.push(Tensor::from_parts(vec![gh, gw], scores));
        inputs.push(x);
        probs.push(p);
    }
    let levels: [Tensor; LEVELS] = maps.try_into().expect("four levels");
    Ok(DecoderTrace {
        maps: AnomalyMapSet::from_levels(levels, out_size)?,
        inputs: inputs.try_into().expect("four levels"),
        probs: probs.try_into().expect("four levels"),
    })
}

/// Prompt-ensemble anomaly maps.
///
/// Per level: project patch features, take inner products with the prompt
/// embeddings, softmax over prompts, and score each patch by the probability
/// mass on abnormal-tagged prompts. Levels are upsampled and averaged.
pub fn decode_map(
    stack: &PatchFeatureStack,
    pm: &PromptMatrix,
    params: &DecoderParams,
    out_size: (usize, usize),
) -> Result<AnomalyMapSet> {
    decode_map_traced(stack, pm, params, out_size).map(|t| t.maps)
}

/// Cotangent of each native level map given a cotangent of the fused map.
pub fn fused_vjp(levels: &[Tensor; LEVELS], d_fused: &Tensor) -> Result<[Tensor; LEVELS]> {
    let quarter = d_fused.scale(0.25);
    let mut out = Vec::with_capacity(LEVELS);
    for m in levels {
        out.push(bilinear_upsample_vjp(m.shape(), &quarter)?);
    }
    Ok(out.try_into().expect("four levels"))
}

/// Parameter cotangents given cotangents of the native level maps.
pub fn decode_map_vjp(
    trace: &DecoderTrace,
    pm: &PromptMatrix,
    params: &DecoderParams,
    d_levels: &[Tensor; LEVELS],
) -> Result<DecoderParams> {
    let mut grads = params.zeros_like();
    for l in 0..LEVELS {
        let p = &trace.probs[l];
        let (n, cols) = p.dims2("decode_map_vjp")?;
        let ds = d_levels[l].data();
        let dp = Tensor::from_fn(vec![n, cols], |k| if pm.abnormal_mask[k % cols] { ds[k / cols] } else { 0.0 });
        let d_logits = ops::softmax_rows_vjp(p, &dp)?;
        let dz = ops::matmul(&d_logits, &pm.embeddings)?;
        grads.weights[l] = ops::matmul(&ops::transpose(&trace.inputs[l])?, &dz)?;
        grads.biases[l] = ops::add_bias_vjp(&dz);
    }
    Ok(grads)
}

/// Per-level stores of unit-norm normal patch features.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    /// `N_l×C3` each.
    pub levels: [Tensor; LEVELS],
    pub k: usize,
    pub seed: u64,
}

/// Order in which normal images are drawn for a bank; independent of `k`,
/// so smaller banks are prefixes of larger ones.
pub fn shot_order(pool: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool).collect();
    idx.shuffle(&mut rng::stream(seed, 0xba2c));
    idx
}

/// Encodes `k` seeded picks from `normals` and stacks their patch features.
/// Duplicate images contribute duplicate rows.
pub fn build_memory_bank(normals: &[Tensor], encoder: &dyn ImageEncoder, k: usize, seed: u64) -> Result<MemoryBank> {
    if k == 0 || k > normals.len() {
        return Err(Error::Input(format!("shot count {k} outside 1..={}", normals.len())));
    }
    let mut levels: [Vec<f64>; LEVELS] = Default::default();
    let mut rows = [0usize; LEVELS];
    let c3 = encoder.image_config().c3;
    for &i in shot_order(normals.len(), seed).iter().take(k) {
        let feats = encoder.encode_image(&normals[i])?;
        for l in 0..LEVELS {
            levels[l].extend_from_slice(feats.patches.levels[l].data());
            rows[l] += feats.patches.levels[l].numel() / c3;
        }
    }
    Ok(MemoryBank {
        levels: std::array::from_fn(|l| Tensor::from_parts(vec![rows[l], c3], std::mem::take(&mut levels[l]))),
        k,
        seed,
    })
}

/// Memory-bank anomaly maps: `clamp(1 − max_r ⟨x, b_r⟩, 0, 1)` per patch,
/// fused like [`decode_map`].
pub fn fewshot_map(stack: &PatchFeatureStack, bank: &MemoryBank, out_size: (usize, usize)) -> Result<AnomalyMapSet> {
    let mut maps = Vec::with_capacity(LEVELS);
    for l in 0..LEVELS {
        let (gh, gw) = stack.grid(l);
        let x = stack.level_matrix(l);
        let (_, c3) = x.dims2("fewshot_map")?;
        let (rows, bc3) = bank.levels[l].dims2("fewshot_map")?;
        if c3 != bc3 || rows == 0 {
            return Err(Error::dim(
                "fewshot_map",
                format!("level {}: query width {c3}, bank {:?}", l + 1, bank.levels[l].shape()),
            ));
        }
        let scores = (0..gh * gw)
            .map(|i| {
                let q = x.row(i);
                let best = (0..rows)
                    .map(|r| q.iter().zip(bank.levels[l].row(r)).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                (1.0 - best).clamp(0.0, 1.0)
            })
            .collect();
        maps.push(Tensor::from_parts(vec![gh, gw], scores));
    }
    AnomalyMapSet::from_levels(maps.try_into().expect("four levels"), out_size)
}

/// Image-level score: the maximum of the fused map.
pub fn image_score(maps: &AnomalyMapSet) -> f64 {
    maps.fused.max()
}

pub const BANK_FILE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankManifest {
    version: u32,
    k: usize,
    seed: u64,
    levels: Vec<BankLevel>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankLevel {
    rows: usize,
    c3: usize,
}

/// Blob path for level `l` next to a bank manifest: `bank.json` →
/// `bank.level0.f64`.
pub fn bank_blob_path(manifest: &Path, level: usize) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.level{level}.f64"))
}

pub(crate) fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn le_bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect()
}

impl MemoryBank {
    pub fn save(&self, manifest: &Path) -> Result<()> {
        let m = BankManifest {
            version: BANK_FILE_VERSION,
            k: self.k,
            seed: self.seed,
            levels: self
                .levels
                .iter()
                .map(|t| BankLevel { rows: t.shape()[0], c3: t.shape()[1] })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| Error::json(manifest, e))?;
        text.push('\n');
        crate::pnm::create_parent(manifest)?;
        std::fs::write(manifest, text).map_err(|e| Error::io(manifest, e))?;
        for (l, t) in self.levels.iter().enumerate() {
            let p = bank_blob_path(manifest, l);
            std::fs::write(&p, f64s_to_le_bytes(t.data())).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: BankManifest = serde_json::from_str(&text).map_err(|e| Error::json(manifest, e))?;
        if m.version != BANK_FILE_VERSION || m.levels.len() != LEVELS {
            return Err(Error::Input(format!(
                "{}: unsupported memory bank (version {}, {} levels)",
                manifest.display(),
                m.version,
                m.levels.len()
            )));
        }
        let mut levels = Vec::with_capacity(LEVELS);
        for (l, lv) in m.levels.iter().enumerate() {
            let p = bank_blob_path(manifest, l);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if bytes.len() != lv.rows * lv.c3 * 8 {
                return Err(Error::Input(format!(
                    "{}: expected {} rows × {} values, found {} bytes",
                    p.display(),
                    lv.rows,
                    lv.c3,
                    bytes.len()
                )));
            }
            levels.push(Tensor::new(vec![lv.rows, lv.c3], le_bytes_to_f64s(&bytes))?);
        }
        Ok(MemoryBank { levels: levels.try_into().expect("four levels"), k: m.k, seed: m.seed })
    }
}
