//! Staged plain gradient descent.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::model::{sample_gradient, EncodedSample, Losses, ModelConfig, ModelParams, PromptContext};
use super::plan::StagePlan;
use super::schedule::lr_at;
use crate::error::{Error, Result};
use crate::rng;

const SALT_SHUFFLE: u64 = 0x5000;

/// One optimisation step: batch-mean losses before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    /// 1-based within the stage.
    pub step: usize,
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub losses: Losses,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// One per completed stage, in order.
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogRow>,
}

/// Steps in a stage and how many of them warm up.
pub fn stage_steps(plan: &StagePlan, n_samples: usize) -> (usize, usize) {
    let total = plan.epochs * n_samples.div_ceil(plan.batch_size);
    let warmup = ((total as f64 * plan.warmup_frac).round() as usize).min(total.saturating_sub(1));
    (total, warmup)
}

/// Runs one stage. Parameters outside the plan's trainable set are never
/// written.
pub fn train_stage(
    mut params: ModelParams,
    samples: &[EncodedSample],
    ctx: &PromptContext,
    cfg: &ModelConfig,
    plan: &StagePlan,
    seed: u64,
    log: &mut Vec<LogRow>,
) -> Result<ModelParams> {
    plan.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let (total, warmup) = stage_steps(plan, samples.len());
    let mut step = 0;
    for epoch in 0..plan.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let salt = SALT_SHUFFLE + ((plan.stage as u64) << 32) + epoch as u64;
        order.shuffle(&mut rng::stream(seed, salt));
        for batch in order.chunks(plan.batch_size) {
            step += 1;
            let lr = lr_at(step, total, warmup, plan.base_lr)?;
            let results: Vec<Result<(Losses, ModelParams)>> = batch
                .par_iter()
                .map(|&i| sample_gradient(&params, ctx, &samples[i], cfg, plan))
                .collect();
            let inv = 1.0 / batch.len() as f64;
            let mut losses = Losses::default();
            let mut grad = params.zeros_like();
            for r in results {
                let (l, g) = r?;
                losses += l;
                grad.axpy(inv, &g)?;
            }
            let losses = losses.scale(inv);
            let total_loss = losses.total(plan);
            if !total_loss.is_finite() {
                return Err(Error::Divergence { stage: plan.stage, step, loss: total_loss });
            }
            for ((_, group, p), (_, _, g)) in params.tensors_mut().into_iter().zip(grad.tensors()) {
                if plan.trains(group) {
                    p.axpy(-lr, g)?;
                }
            }
            if !params.is_finite() {
                return Err(Error::Divergence { stage: plan.stage, step, loss: f64::NAN });
            }
            log.push(LogRow { step, stage: plan.stage, epoch: epoch + 1, lr, losses });
        }
    }
    Ok(params)
}

/// Runs the three stages in order from `init`, snapshotting after each.
pub fn train(
    samples: &[EncodedSample],
    ctx: &PromptContext,
    cfg: &ModelConfig,
    plans: &[StagePlan],
    seed: u64,
    init: ModelParams,
) -> Result<TrainOutcome> {
    for (i, p) in plans.iter().enumerate() {
        if p.stage as usize != i + 1 {
            return Err(Error::Input(format!("stage {} planned in position {}", p.stage, i + 1)));
        }
    }
    let mut params = init;
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    for plan in plans {
        params = train_stage(params, samples, ctx, cfg, plan, seed, &mut log)?;
        checkpoints.push(Checkpoint::from_params(&params, seed, plan.stage));
    }
    Ok(TrainOutcome { params, checkpoints, log })
}

/// Mean of `L_f + L_d` over the steps of one epoch of one stage.
pub fn epoch_map_loss(log: &[LogRow], stage: u8, epoch: usize) -> Option<f64> {
    let rows: Vec<&LogRow> = log.iter().filter(|r| r.stage == stage && r.epoch == epoch).collect();
    if rows.is_empty() {
        return None;
    }
    Some(rows.iter().map(|r| r.losses.focal + r.losses.dice).sum::<f64>() / rows.len() as f64)
}
