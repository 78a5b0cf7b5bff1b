//! Synthetic anomalies: patch transplantation with optional Poisson
//! normal-clone blending, border-eroded ground-truth masks, and grid
//! positions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::grid::{position_cells, GridCell, DEFAULT_COVERAGE};
use crate::numerics::{cg_solve, Tensor};
use crate::rng;

/// `(top, left, height, width)` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    CutPaste,
    PoissonNormalClone,
}

/// Appearance change applied to the source patch before pasting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchTransform {
    /// Swap rows and columns (the pasted region has transposed extents).
    pub transpose: bool,
    /// Contrast gain about the patch mean, per channel.
    pub gain: f64,
}

impl Default for PatchTransform {
    fn default() -> Self {
        PatchTransform { transpose: false, gain: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub src_rect: Rect,
    /// `(row, col)` of the pasted region's midpoint in the destination.
    pub dst_center: (usize, usize),
    pub blend: Blend,
    #[serde(default)]
    pub transform: PatchTransform,
}

impl PatchSpec {
    /// Extents of the region written into the destination.
    pub fn pasted_extent(&self) -> (usize, usize) {
        let r = self.src_rect;
        if self.transform.transpose {
            (r.width, r.height)
        } else {
            (r.height, r.width)
        }
    }
}

/// Top-left corner that puts a `h×w` region's midpoint at `center`.
fn placement(center: (usize, usize), h: usize, w: usize, dst_h: usize, dst_w: usize) -> Result<(usize, usize)> {
    let top = center.0 as isize - (h / 2) as isize;
    let left = center.1 as isize - (w / 2) as isize;
    if top < 0 || left < 0 || top as usize + h > dst_h || left as usize + w > dst_w {
        return Err(Error::Bounds(format!(
            "{h}×{w} region centred at {center:?} leaves the {dst_h}×{dst_w} destination"
        )));
    }
    Ok((top as usize, left as usize))
}

fn extract(src: &Tensor, rect: Rect) -> Result<Tensor> {
    let (h, w, c) = src.dims3("cut_paste")?;
    if rect.height == 0 || rect.width == 0 || rect.top + rect.height > h || rect.left + rect.width > w {
        return Err(Error::Bounds(format!("source rect {rect:?} outside {h}×{w} image")));
    }
    let mut out = Vec::with_capacity(rect.height * rect.width * c);
    for y in rect.top..rect.top + rect.height {
        let s = (y * w + rect.left) * c;
        out.extend_from_slice(&src.data()[s..s + rect.width * c]);
    }
    Ok(Tensor::from_parts(vec![rect.height, rect.width, c], out))
}

fn apply_transform(patch: Tensor, t: PatchTransform) -> Tensor {
    let (h, w, c) = patch.dims3("transform").expect("patch is rank 3");
    let mut patch = if t.transpose {
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                let (s, d) = ((y * w + x) * c, (x * h + y) * c);
                out[d..d + c].copy_from_slice(&patch.data()[s..s + c]);
            }
        }
        Tensor::from_parts(vec![w, h, c], out)
    } else {
        patch
    };
    if t.gain != 1.0 {
        let n = (h * w) as f64;
        for ch in 0..c {
            let mean = patch.data().iter().skip(ch).step_by(c).sum::<f64>() / n;
            for v in patch.data_mut().iter_mut().skip(ch).step_by(c) {
                *v = mean + t.gain * (*v - mean);
            }
        }
    }
    patch
}

/// Ground truth for a pasted `h×w` region at `(top, left)`: the region with
/// its one-pixel border zeroed.
fn eroded_rect_mask(dst_h: usize, dst_w: usize, top: usize, left: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(vec![dst_h, dst_w], |i| {
        let (y, x) = (i / dst_w, i % dst_w);
        let inside = y > top && y + 1 < top + h && x > left && x + 1 < left + w;
        if inside {
            1.0
        } else {
            0.0
        }
    })
}

/// Pastes the spec's source patch into `dst` and returns `(image, gt_mask)`.
///
/// Pixels outside the pasted rectangle equal `dst` bit for bit in both blend
/// modes.
pub fn cut_paste(src: &Tensor, dst: &Tensor, spec: &PatchSpec) -> Result<(Tensor, Tensor)> {
    let (dh, dw, dc) = dst.dims3("cut_paste")?;
    if src.dims3("cut_paste")?.2 != dc {
        return Err(Error::dim("cut_paste", format!("channel mismatch {:?} vs {:?}", src.shape(), dst.shape())));
    }
    let patch = apply_transform(extract(src, spec.src_rect)?, spec.transform);
    let (ph, pw) = spec.pasted_extent();
    let (top, left) = placement(spec.dst_center, ph, pw, dh, dw)?;
    let image = match spec.blend {
        Blend::CutPaste => {
            let mut out = dst.clone();
            for y in 0..ph {
                let d = ((top + y) * dw + left) * dc;
                let s = y * pw * dc;
                out.data_mut()[d..d + pw * dc].copy_from_slice(&patch.data()[s..s + pw * dc]);
            }
            out
        }
        Blend::PoissonNormalClone => {
            let region = Tensor::full(vec![ph, pw], 1.0);
            poisson_normal_clone(&patch, dst, &region, spec.dst_center)?
        }
    };
    Ok((image, eroded_rect_mask(dh, dw, top, left, ph, pw)))
}

/// Unclamped Poisson solution with solver statistics.
#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub image: Tensor,
    /// Destination-space mask of the solved (interior) pixels.
    pub interior: Tensor,
    pub iterations: usize,
}

/// Relative CG tolerance for the Poisson systems.
pub const POISSON_TOL: f64 = 1e-13;

/// Solves `Δf = div ∇src` on the interior of `region_mask` (placed so its
/// midpoint sits at `center`), with `f = dst` on the region border.
///
/// Interior pixels are region pixels whose four neighbours are also in the
/// region; everything else keeps the destination value. No clamping.
pub fn poisson_solve(src_patch: &Tensor, dst: &Tensor, region_mask: &Tensor, center: (usize, usize)) -> Result<PoissonSolution> {
    let (ph, pw, pc) = src_patch.dims3("poisson_normal_clone")?;
    let (dh, dw, dc) = dst.dims3("poisson_normal_clone")?;
    if region_mask.shape() != [ph, pw] || pc != dc {
        return Err(Error::dim(
            "poisson_normal_clone",
            format!(
                "patch {:?}, mask {:?}, destination {:?} disagree",
                src_patch.shape(),
                region_mask.shape(),
                dst.shape()
            ),
        ));
    }
    let (top, left) = placement(center, ph, pw, dh, dw)?;
    let in_region = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < ph && (x as usize) < pw && region_mask.data()[y as usize * pw + x as usize] > 0.5
    };
    const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    // Unknown index per patch pixel.
    let mut index = vec![usize::MAX; ph * pw];
    let mut cells = Vec::new();
    for y in 0..ph {
        for x in 0..pw {
            let (yi, xi) = (y as isize, x as isize);
            if in_region(yi, xi) && NEIGHBOURS.iter().all(|(dy, dx)| in_region(yi + dy, xi + dx)) {
                index[y * pw + x] = cells.len();
                cells.push((y, x));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Input("region mask has an empty interior".into()));
    }
    let n = cells.len();
    let neighbours: Vec<[Option<usize>; 4]> = cells
        .iter()
        .map(|&(y, x)| {
            NEIGHBOURS.map(|(dy, dx)| {
                let (ny, nx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                let k = index[ny * pw + nx];
                (k != usize::MAX).then_some(k)
            })
        })
        .collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        for (i, nb) in neighbours.iter().enumerate() {
            let mut acc = 4.0 * v[i];
            for k in nb.iter().flatten() {
                acc -= v[*k];
            }
            out[i] = acc;
        }
    };

    let mut image = dst.clone();
    let mut iterations = 0;
    let (src, dstd) = (src_patch.data(), dst.data());
    for ch in 0..dc {
        let mut rhs = vec![0.0; n];
        for (i, &(y, x)) in cells.iter().enumerate() {
            let sp = src[(y * pw + x) * pc + ch];
            let mut b = 0.0;
            for (j, (dy, dx)) in NEIGHBOURS.iter().enumerate() {
                let (ny, nx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                b += sp - src[(ny * pw + nx) * pc + ch];
                if neighbours[i][j].is_none() {
                    b += dstd[((top + ny) * dw + left + nx) * dc + ch];
                }
            }
            rhs[i] = b;
        }
        let sol = cg_solve(apply, &rhs, POISSON_TOL, 20 * n + 100)?;
        iterations += sol.iterations;
        for (i, &(y, x)) in cells.iter().enumerate() {
            image.data_mut()[((top + y) * dw + left + x) * dc + ch] = sol.x[i];
        }
    }
    let mut interior = Tensor::zeros(vec![dh, dw]);
    for &(y, x) in &cells {
        interior.data_mut()[(top + y) * dw + left + x] = 1.0;
    }
    Ok(PoissonSolution { image, interior, iterations })
}

/// Poisson normal-clone blend: [`poisson_solve`] followed by clamping the
/// solved pixels to `[0, 1]`.
pub fn poisson_normal_clone(src_patch: &Tensor, dst: &Tensor, region_mask: &Tensor, center: (usize, usize)) -> Result<Tensor> {
    let sol = poisson_solve(src_patch, dst, region_mask, center)?;
    let mut image = sol.image;
    let c = dst.shape()[2];
    for (i, &m) in sol.interior.data().iter().enumerate() {
        if m > 0.5 {
            for v in &mut image.data_mut()[i * c..(i + 1) * c] {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(image)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }

    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: Tensor,
    pub gt_mask: Tensor,
    pub label: Label,
    pub position_cells: Vec<GridCell>,
}

impl SynthSample {
    pub fn normal(image: Tensor) -> Self {
        let (h, w, _) = image.dims3("sample").expect("images are rank 3");
        SynthSample { image, gt_mask: Tensor::zeros(vec![h, w]), label: Label::Normal, position_cells: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Patch side bounds as fractions of the image side.
    pub rect_min_frac: f64,
    pub rect_max_frac: f64,
    /// Accepted ground-truth area as a fraction of the image area.
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    pub blend: Blend,
    pub transpose: bool,
    /// Contrast gain drawn uniformly from this range.
    pub gain: (f64, f64),
    pub coverage_threshold: f64,
    pub max_attempts: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rect_min_frac: 1.0 / 8.0,
            rect_max_frac: 1.0 / 3.0,
            min_area_frac: 0.01,
            max_area_frac: 0.25,
            blend: Blend::PoissonNormalClone,
            transpose: true,
            gain: (1.5, 2.5),
            coverage_threshold: DEFAULT_COVERAGE,
            max_attempts: 64,
        }
    }
}

fn sample_spec(rng: &mut rng::StreamRng, h: usize, w: usize, cfg: &SynthConfig) -> PatchSpec {
    let side = |n: usize, rng: &mut rng::StreamRng| {
        let lo = ((n as f64 * cfg.rect_min_frac).round() as usize).max(1);
        let hi = ((n as f64 * cfg.rect_max_frac).round() as usize).clamp(lo, n);
        rng.random_range(lo..=hi)
    };
    // Pasted extents first; the source rect is their transpose when the
    // patch is rotated.
    let (ph, pw) = (side(h, rng), side(w, rng));
    let (sh, sw) = if cfg.transpose { (pw, ph) } else { (ph, pw) };
    let (sh, sw) = (sh.min(h), sw.min(w));
    let src_rect = Rect {
        top: rng.random_range(0..=h - sh),
        left: rng.random_range(0..=w - sw),
        height: sh,
        width: sw,
    };
    let transform = PatchTransform {
        transpose: cfg.transpose,
        gain: if cfg.gain.0 < cfg.gain.1 { rng.random_range(cfg.gain.0..cfg.gain.1) } else { cfg.gain.0 },
    };
    let (ph, pw) = if cfg.transpose { (sw, sh) } else { (sh, sw) };
    let top = rng.random_range(0..=h - ph);
    let left = rng.random_range(0..=w - pw);
    PatchSpec { src_rect, dst_center: (top + ph / 2, left + pw / 2), blend: cfg.blend, transform }
}

/// Forges one abnormal sample from a pool of normal images.
///
/// Attempt `a` draws from stream `(seed, a)`; attempts whose ground truth is
/// empty after border erosion, or whose area falls outside the configured
/// bounds, are re-rolled.
pub fn nsa_generate(seed: u64, normals: &[Tensor], cfg: &SynthConfig) -> Result<SynthSample> {
    let first = normals.first().ok_or_else(|| Error::Input("nsa_generate needs at least one normal image".into()))?;
    let (h, w, _) = first.dims3("nsa_generate")?;
    if let Some(bad) = normals.iter().find(|n| n.shape() != first.shape()) {
        return Err(Error::dim("nsa_generate", format!("normal pool mixes {:?} and {:?}", first.shape(), bad.shape())));
    }
    let area = (h * w) as f64;
    for attempt in 0..cfg.max_attempts {
        let mut rng = rng::stream(seed, attempt);
        let dst_idx = rng.random_range(0..normals.len());
        let src_idx = if normals.len() >= 2 {
            (dst_idx + rng.random_range(1..normals.len())) % normals.len()
        } else {
            dst_idx
        };
        let spec = sample_spec(&mut rng, h, w, cfg);
        let (image, gt_mask) = cut_paste(&normals[src_idx], &normals[dst_idx], &spec)?;
        let frac = gt_mask.sum() / area;
        if frac == 0.0 || frac < cfg.min_area_frac || frac > cfg.max_area_frac {
            continue;
        }
        let position_cells = position_cells(&gt_mask, cfg.coverage_threshold)?;
        return Ok(SynthSample { image, gt_mask, label: Label::Abnormal, position_cells });
    }
    Err(Error::Input(format!(
        "no admissible anomaly after {} attempts; check the synth area bounds",
        cfg.max_attempts
    )))
}
