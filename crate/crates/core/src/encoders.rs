//! Deterministic stand-ins for frozen image and text backbones.
//!
//! The image encoder summarizes each grid cell by local intensity and
//! difference statistics computed from that cell's pixels only, then maps
//! them through a fixed seeded random-feature layer (`ReLU(P·s + q)`) and
//! unit-normalizes. The text encoder hashes character trigrams into buckets
//! and projects the counts through a fixed seeded matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{normalize_or_basis, Tensor};
use crate::rng;

pub const LEVELS: usize = 4;

/// Per-cell statistics vector width.
const CELL_STATS: usize = 10;
const TEXT_BUCKETS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub seed: u64,
    /// `(H, W)`.
    pub image_size: (usize, usize),
    pub level_grids: [(usize, usize); LEVELS],
    /// Global feature width.
    pub c1: usize,
    /// Text embedding width.
    pub c2: usize,
    /// Patch feature width.
    pub c3: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            seed: 0x5eed,
            image_size: (64, 64),
            level_grids: [(16, 16), (8, 8), (8, 8), (4, 4)],
            c1: 32,
            c2: 32,
            c3: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || self.c1 == 0 || self.c2 == 0 || self.c3 == 0 {
            return Err(Error::Input(format!("encoder extents must be positive: {self:?}")));
        }
        for (l, &(gh, gw)) in self.level_grids.iter().enumerate() {
            if gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
                return Err(Error::Input(format!(
                    "level {} grid {gh}×{gw} does not evenly divide image {h}×{w}",
                    l + 1
                )));
            }
        }
        Ok(())
    }

    /// Pixel offset used for difference statistics at each level. Levels 3 and
    /// 4 look at coarser structure.
    fn level_step(level: usize) -> usize {
        if level >= 2 {
            2
        } else {
            1
        }
    }
}

/// Patch features for the four levels, each `h_l×w_l×C3` with unit-norm
/// vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchFeatureStack {
    pub levels: [Tensor; LEVELS],
}

impl PatchFeatureStack {
    /// Level `l` as an `(h_l·w_l)×C3` matrix.
    pub fn level_matrix(&self, l: usize) -> Tensor {
        let (h, w, c) = self.levels[l].dims3("level_matrix").expect("levels are rank 3");
        Tensor::from_parts(vec![h * w, c], self.levels[l].data().to_vec())
    }

    pub fn grid(&self, l: usize) -> (usize, usize) {
        (self.levels[l].shape()[0], self.levels[l].shape()[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    /// `1×C1`, unit norm.
    pub global: Tensor,
    pub patches: PatchFeatureStack,
}

pub trait ImageEncoder: Send + Sync {
    fn image_config(&self) -> &EncoderConfig;
    fn encode_image(&self, img: &Tensor) -> Result<ImageFeatures>;
}

pub trait TextEncoder: Send + Sync {
    fn text_width(&self) -> usize;
    /// Returns a `1×C2` unit-norm embedding.
    fn encode_text(&self, prompt: &str) -> Result<Tensor>;
}

/// Fixed random-feature layer `x ↦ normalize(ReLU(P·x + q))`.
#[derive(Clone, Debug)]
struct RandomFeatures {
    weights: Tensor,
    bias: Vec<f64>,
}

impl RandomFeatures {
    fn new(seed: u64, salt: u64, inputs: usize, outputs: usize, bias_scale: f64) -> Self {
        let mut rng = rng::stream(seed, salt);
        let weights = Tensor::randn(vec![outputs, inputs], 1.0 / (inputs as f64).sqrt(), &mut rng);
        let bias = Tensor::randn(vec![outputs], bias_scale, &mut rng).into_data();
        RandomFeatures { weights, bias }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.data().chunks(x.len()).zip(&self.bias)) {
            let z: f64 = row.iter().zip(x).map(|(p, v)| p * v).sum::<f64>() + b;
            *o = z.max(0.0);
        }
        normalize_or_basis(out);
    }
}

/// Seeded toy encoder implementing both encoder traits.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    cfg: EncoderConfig,
    levels: Vec<RandomFeatures>,
    global: RandomFeatures,
    text: Tensor,
}

const SALT_LEVEL: u64 = 0x1000;
const SALT_GLOBAL: u64 = 0x2000;
const SALT_TEXT: u64 = 0x3000;

impl ToyEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let levels = (0..LEVELS)
            .map(|l| RandomFeatures::new(cfg.seed, SALT_LEVEL + l as u64, CELL_STATS, cfg.c3, 0.3))
            .collect();
        let global = RandomFeatures::new(cfg.seed, SALT_GLOBAL, 3 * CELL_STATS, cfg.c1, 0.3);
        let mut rng = rng::stream(cfg.seed, SALT_TEXT);
        let text = Tensor::randn(vec![cfg.c2, TEXT_BUCKETS], 1.0, &mut rng);
        Ok(ToyEncoder { cfg, levels, global, text })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn grayscale(&self, img: &Tensor) -> Result<Vec<f64>> {
        let (h, w) = self.cfg.image_size;
        let dims = img.dims3("encode_image")?;
        if (dims.0, dims.1) != (h, w) {
            return Err(Error::dim(
                "encode_image",
                format!("image {:?} does not match configured size {h}×{w}", img.shape()),
            ));
        }
        let c = dims.2;
        Ok(img
            .data()
            .chunks(c)
            .map(|px| px.iter().sum::<f64>() / c as f64)
            .collect())
    }
}

/// Intensity and difference statistics of one cell.
///
/// Order: centred mean, standard deviation, RMS of horizontal, vertical and
/// both diagonal differences, RMS of horizontal and vertical second
/// differences, range, and mean horizontal×vertical difference product.
fn cell_stats(gray: &[f64], width: usize, top: usize, left: usize, ch: usize, cw: usize, step: usize) -> [f64; CELL_STATS] {
    let at = |y: usize, x: usize| gray[(top + y) * width + left + x];
    let n = (ch * cw) as f64;
    let (mut sum, mut sq, mut lo, mut hi) = (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..ch {
        for x in 0..cw {
            let v = at(y, x);
            sum += v;
            sq += v * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);

    let rms = |acc: f64, count: usize| if count == 0 { 0.0 } else { (acc / count as f64).sqrt() };
    let (mut gx, mut gy, mut d1, mut d2, mut cross) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut nx, mut ny, mut nd, mut nc) = (0, 0, 0, 0);
    let (mut lxx, mut lyy, mut nlx, mut nly) = (0.0, 0.0, 0, 0);
    for y in 0..ch {
        for x in 0..cw {
            let v = at(y, x);
            let dx = (x + step < cw).then(|| at(y, x + step) - v);
            let dy = (y + step < ch).then(|| at(y + step, x) - v);
            if let Some(d) = dx {
                gx += d * d;
                nx += 1;
            }
            if let Some(d) = dy {
                gy += d * d;
                ny += 1;
            }
            if let (Some(a), Some(b)) = (dx, dy) {
                cross += a * b;
                nc += 1;
                let e1 = at(y + step, x + step) - v;
                let e2 = at(y + step, x) - at(y, x + step);
                d1 += e1 * e1;
                d2 += e2 * e2;
                nd += 1;
            }
            if x >= step && x + step < cw {
                let s = at(y, x + step) - 2.0 * v + at(y, x - step);
                lxx += s * s;
                nlx += 1;
            }
            if y >= step && y + step < ch {
                let s = at(y + step, x) - 2.0 * v + at(y - step, x);
                lyy += s * s;
                nly += 1;
            }
        }
    }
    const GAIN: f64 = 4.0;
    let mut s = [
        mean - 0.5,
        var.sqrt(),
        rms(gx, nx),
        rms(gy, ny),
        rms(d1, nd),
        rms(d2, nd),
        rms(lxx, nlx),
        rms(lyy, nly),
        hi - lo,
        if nc == 0 { 0.0 } else { cross / nc as f64 },
    ];
    s.iter_mut().for_each(|v| *v *= GAIN);
    s
}

impl ImageEncoder for ToyEncoder {
    fn image_config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn encode_image(&self, img: &Tensor) -> Result<ImageFeatures> {
        let gray = self.grayscale(img)?;
        let (h, w) = self.cfg.image_size;
        let c3 = self.cfg.c3;
        let mut level1_stats: Vec<[f64; CELL_STATS]> = Vec::new();
        let levels: Vec<Tensor> = (0..LEVELS)
            .map(|l| {
                let (gh, gw) = self.cfg.level_grids[l];
                let (ch, cw) = (h / gh, w / gw);
                let step = EncoderConfig::level_step(l);
                let mut data = vec![0.0; gh * gw * c3];
                for gy in 0..gh {
                    for gx in 0..gw {
                        let s = cell_stats(&gray, w, gy * ch, gx * cw, ch, cw, step);
                        let o = (gy * gw + gx) * c3;
                        self.levels[l].apply(&s, &mut data[o..o + c3]);
                        if l == 0 {
                            level1_stats.push(s);
                        }
                    }
                }
                Tensor::from_parts(vec![gh, gw, c3], data)
            })
            .collect();

        // Global summary: mean, max and spread of the finest cell statistics.
        let n = level1_stats.len() as f64;
        let mut summary = vec![0.0; 3 * CELL_STATS];
        for k in 0..CELL_STATS {
            let vals = level1_stats.iter().map(|s| s[k]);
            let mean = vals.clone().sum::<f64>() / n;
            let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            summary[k] = mean;
            summary[CELL_STATS + k] = max;
            summary[2 * CELL_STATS + k] = 2.0 * var.sqrt();
        }
        let mut global = vec![0.0; self.cfg.c1];
        self.global.apply(&summary, &mut global);

        let levels: [Tensor; LEVELS] = levels.try_into().expect("four levels");
        Ok(ImageFeatures {
            global: Tensor::from_parts(vec![1, self.cfg.c1], global),
            patches: PatchFeatureStack { levels },
        })
    }
}

impl TextEncoder for ToyEncoder {
    fn text_width(&self) -> usize {
        self.cfg.c2
    }

    fn encode_text(&self, prompt: &str) -> Result<Tensor> {
        if prompt.is_empty() {
            return Err(Error::Input("cannot encode an empty prompt".into()));
        }
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(prompt.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut counts = [0.0f64; TEXT_BUCKETS];
        let mut buf = [0u8; 12];
        for tri in chars.windows(3) {
            let mut len = 0;
            for c in tri {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            counts[(rng::fnv1a(&buf[..len]) % TEXT_BUCKETS as u64) as usize] += 1.0;
        }
        let mut out: Vec<f64> = self
            .text
            .data()
            .chunks(TEXT_BUCKETS)
            .map(|row| row.iter().zip(&counts).map(|(p, c)| p * c).sum())
            .collect();
        normalize_or_basis(&mut out);
        Ok(Tensor::from_parts(vec![1, self.cfg.c2], out))
    }
}

/// Encodes one image with a freshly built toy encoder.
pub fn encode_image(img: &Tensor, cfg: &EncoderConfig) -> Result<ImageFeatures> {
    ToyEncoder::new(cfg.clone())?.encode_image(img)
}

/// Encodes one prompt with a freshly built toy encoder.
pub fn encode_text(prompt: &str, cfg: &EncoderConfig) -> Result<Tensor> {
    ToyEncoder::new(cfg.clone())?.encode_text(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn random_image(seed: u64) -> Tensor {
        Tensor::uniform(vec![64, 64, 1], 0.0, 1.0, &mut stream(seed, 0))
    }

    fn norms_ok(t: &Tensor, width: usize) {
        for v in t.data().chunks(width) {
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9, "norm {n}");
        }
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let enc = ToyEncoder::new(EncoderConfig::default()).unwrap();
        let img = random_image(1);
        let a = enc.encode_image(&img).unwrap();
        let b = encode_image(&img, &EncoderConfig::default()).unwrap();
        assert_eq!(a, b);
        norms_ok(&a.global, 32);
        for l in 0..LEVELS {
            norms_ok(&a.patches.levels[l], 16);
        }
        assert_eq!(a.patches.levels[0].shape(), &[16, 16, 16]);
        assert_eq!(a.patches.levels[3].shape(), &[4, 4, 16]);
    }

    #[test]
    fn edit_inside_one_fine_cell_is_local() {
        let enc = ToyEncoder::new(EncoderConfig::default()).unwrap();
        let img = random_image(2);
        let mut edited = img.clone();
        // Cell (2, 5) of the 16×16 grid spans rows 8..12, cols 20..24.
        for y in 8..12 {
            for x in 20..24 {
                edited.data_mut()[y * 64 + x] = 1.0 - img.data()[y * 64 + x];
            }
        }
        let a = enc.encode_image(&img).unwrap().patches.levels[0].clone();
        let b = enc.encode_image(&edited).unwrap().patches.levels[0].clone();
        for cell in 0..256 {
            let (va, vb) = (&a.data()[cell * 16..(cell + 1) * 16], &b.data()[cell * 16..(cell + 1) * 16]);
            if cell == 2 * 16 + 5 {
                assert_ne!(va, vb);
            } else {
                assert_eq!(va, vb, "cell {cell} changed");
            }
        }
    }

    #[test]
    fn constant_zero_image_is_finite() {
        let enc = ToyEncoder::new(EncoderConfig::default()).unwrap();
        let f = enc.encode_image(&Tensor::zeros(vec![64, 64, 1])).unwrap();
        assert!(f.global.is_finite());
        for l in 0..LEVELS {
            assert!(f.patches.levels[l].is_finite());
            norms_ok(&f.patches.levels[l], 16);
        }
    }

    #[test]
    fn size_mismatch_is_dimension_error() {
        let enc = ToyEncoder::new(EncoderConfig::default()).unwrap();
        assert!(matches!(
            enc.encode_image(&Tensor::zeros(vec![32, 64, 1])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn text_encoder_examples() {
        let cfg = EncoderConfig::default();
        let a = encode_text("abc", &cfg).unwrap();
        assert_eq!(a, encode_text("abc", &cfg).unwrap());
        let b = encode_text("abd", &cfg).unwrap();
        assert_ne!(a, b);
        norms_ok(&a, 32);
        assert!(encode_text("", &cfg).is_err());
    }

    #[test]
    fn rejects_uneven_grids() {
        let cfg = EncoderConfig {
            level_grids: [(16, 16), (8, 8), (8, 8), (5, 5)],
            ..EncoderConfig::default()
        };
        assert!(ToyEncoder::new(cfg).is_err());
    }
}
