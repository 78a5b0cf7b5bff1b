//! Cross-entropy, focal, and soft-Dice losses with their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Lower clamp applied to probabilities before taking logarithms.
pub const LOG_EPS: f64 = 1e-12;
pub const DICE_EPS: f64 = 1e-7;

fn check_one_hot(probs: &Tensor, targets: &Tensor) -> Result<(usize, usize)> {
    let (n, k) = probs.dims2("cross_entropy")?;
    probs.expect_same_shape(targets, "cross_entropy")?;
    for (r, row) in targets.data().chunks(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::Input(format!("target row {r} is not one-hot: {row:?}")));
        }
    }
    Ok((n, k))
}

/// Mean over rows of `−Σ y log max(p, ε)`.
pub fn cross_entropy(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    let (n, _) = check_one_hot(probs, targets)?;
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .filter(|(_, &y)| y == 1.0)
        .map(|(&p, _)| -p.max(LOG_EPS).ln())
        .sum();
    Ok(total / n as f64)
}

/// Gradient of [`cross_entropy`] with respect to `probs`.
pub fn cross_entropy_vjp(probs: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let (n, _) = check_one_hot(probs, targets)?;
    let g = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &y)| if y == 1.0 && p > LOG_EPS { -1.0 / (p * n as f64) } else { 0.0 })
        .collect();
    Tensor::new(probs.shape().to_vec(), g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Input(format!("focal parameters out of range: {self:?}")));
        }
        Ok(())
    }
}

fn check_map(pred: &Tensor, gt: &Tensor, op: &'static str) -> Result<()> {
    pred.dims2(op)?;
    pred.expect_same_shape(gt, op)?;
    if let Some(v) = pred.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("{op}: prediction {v} outside [0, 1]")));
    }
    Ok(())
}

/// `p_t` for one pixel and the sign of `∂p_t/∂pred`.
fn p_t(pred: f64, gt: f64) -> (f64, f64) {
    if gt > 0.5 {
        (pred, 1.0)
    } else {
        (1.0 - pred, -1.0)
    }
}

/// `−(1/n) Σ α (1−p_t)^γ log p_t`, with `p_t` clamped below at ε.
pub fn focal_loss(pred: &Tensor, gt: &Tensor, cfg: &FocalConfig) -> Result<f64> {
    check_map(pred, gt, "focal_loss")?;
    cfg.validate()?;
    let n = pred.numel() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let pt = p_t(p, g).0.max(LOG_EPS);
            -cfg.alpha * (1.0 - pt).powf(cfg.gamma) * pt.ln()
        })
        .sum();
    Ok(sum / n)
}

pub fn focal_loss_vjp(pred: &Tensor, gt: &Tensor, cfg: &FocalConfig) -> Result<Tensor> {
    check_map(pred, gt, "focal_loss")?;
    cfg.validate()?;
    let n = pred.numel() as f64;
    let g = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let (pt, sign) = p_t(p, g);
            if pt < LOG_EPS {
                return 0.0;
            }
            let q = 1.0 - pt;
            let modulation = if q == 0.0 || cfg.gamma == 0.0 {
                0.0
            } else {
                cfg.gamma * q.powf(cfg.gamma - 1.0) * pt.ln()
            };
            let d_pt = cfg.alpha * (modulation - q.powf(cfg.gamma) / pt);
            sign * d_pt / n
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), g)
}

/// `1 − (2Σpg + ε) / (Σp² + Σg² + ε)`.
pub fn dice_loss(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_map(pred, gt, "dice_loss")?;
    let (inter, denom) = dice_terms(pred, gt);
    Ok(1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS))
}

fn dice_terms(pred: &Tensor, gt: &Tensor) -> (f64, f64) {
    let mut inter = 0.0;
    let mut denom = 0.0;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += p * g;
        denom += p * p + g * g;
    }
    (inter, denom)
}

pub fn dice_loss_vjp(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_map(pred, gt, "dice_loss")?;
    let (inter, denom) = dice_terms(pred, gt);
    let num = 2.0 * inter + DICE_EPS;
    let den = denom + DICE_EPS;
    let g = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| -(2.0 * g * den - num * 2.0 * p) / (den * den))
        .collect();
    Tensor::new(pred.shape().to_vec(), g)
}
