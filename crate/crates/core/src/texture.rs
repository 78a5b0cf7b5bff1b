//! Procedural grayscale textures used as the bundled normal data.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Oriented sinusoidal stripes with a faint blob overlay.
    Stripes,
    /// Random Gaussian bumps on a mid-gray background.
    Blobs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    pub kind: TextureKind,
    /// Stripe orientation in degrees; each image jitters it by up to
    /// `angle_jitter` either way.
    pub angle: f64,
    pub angle_jitter: f64,
    /// Stripe period in pixels.
    pub period: f64,
    pub amplitude: f64,
    pub noise: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        TextureConfig {
            kind: TextureKind::Stripes,
            angle: 0.0,
            angle_jitter: 6.0,
            period: 8.0,
            amplitude: 0.22,
            noise: 0.03,
        }
    }
}

/// Renders one `h×w×1` texture with values in `[0, 1]`.
pub fn render(cfg: &TextureConfig, h: usize, w: usize, rng: &mut StreamRng) -> Tensor {
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite noise scale");
    let mut img = vec![0.5; h * w];
    let blobs = match cfg.kind {
        TextureKind::Stripes => {
            let theta = (cfg.angle + rng.random_range(-cfg.angle_jitter..=cfg.angle_jitter)).to_radians();
            let period = cfg.period * rng.random_range(0.92..1.08);
            let phase = rng.random_range(0.0..2.0 * PI);
            let (ct, st) = (theta.cos(), theta.sin());
            for y in 0..h {
                for x in 0..w {
                    let u = x as f64 * ct + y as f64 * st;
                    img[y * w + x] += cfg.amplitude * (2.0 * PI * u / period + phase).sin();
                }
            }
            (h * w / 512, 0.04)
        }
        TextureKind::Blobs => (h * w / 48, cfg.amplitude),
    };
    let (count, amp) = blobs;
    for _ in 0..count {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let sigma: f64 = rng.random_range(2.0..4.0);
        let a = if rng.random_bool(0.5) { amp } else { -amp };
        let reach = (3.0 * sigma).ceil() as isize;
        for y in (cy as isize - reach).max(0)..(cy as isize + reach + 1).min(h as isize) {
            for x in (cx as isize - reach).max(0)..(cx as isize + reach + 1).min(w as isize) {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                img[y as usize * w + x as usize] += a * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for v in &mut img {
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    Tensor::from_parts(vec![h, w, 1], img)
}
