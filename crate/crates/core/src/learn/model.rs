//! The full trainable model: decoder linears, text-guided enhancer,
//! multi-mask fusion, and answer head, with a hand-written backward pass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::head::{AnswerHead, CELL_LOGITS};
use super::losses::{self, FocalConfig};
use super::plan::{ParamGroup, StagePlan};
use crate::encoders::{EncoderConfig, ImageFeatures, TextEncoder, LEVELS};
use crate::error::{Error, Result};
use crate::eval::grid::GridCell;
use crate::mmf::{self, MmfParams};
use crate::numerics::ops;
use crate::numerics::Tensor;
use crate::prompt_bank::{build_prompt_matrix, ClassPrompts, PromptMatrix};
use crate::rng;
use crate::scoring::{self, AnomalyMapSet, DecoderParams};
use crate::synth::Label;
use crate::tge::{self, GateWeights, TgeParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Fusion tokens per level map, as a side of the pooling grid.
    pub pool_grid: usize,
    /// Number of trainable base embedding rows.
    pub base_rows: usize,
    pub head_hidden: usize,
    pub focal: FocalConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            pool_grid: 2,
            base_rows: 4,
            head_hidden: 32,
            focal: FocalConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn c_emb(&self) -> usize {
        LEVELS * self.encoder.c3
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.focal.validate()?;
        if self.pool_grid == 0 || self.base_rows == 0 || self.head_hidden == 0 {
            return Err(Error::Input(format!("model extents must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Text-side inputs shared by every sample of a class.
#[derive(Clone, Debug)]
pub struct PromptContext {
    pub prompts: PromptMatrix,
    /// Per-category mean template embeddings, normal first.
    pub f_win_cat: Tensor,
}

impl PromptContext {
    pub fn new(cp: &ClassPrompts, encoder: &dyn TextEncoder) -> Result<Self> {
        let prompts = build_prompt_matrix(cp, encoder)?;
        prompts.check_scorable()?;
        let f_win_cat = prompts.win_category_means();
        Ok(PromptContext { prompts, f_win_cat })
    }
}

/// Encoded image with its supervision.
#[derive(Clone, Debug)]
pub struct EncodedSample {
    pub features: ImageFeatures,
    pub gt: Tensor,
    pub label: Label,
    pub cells: Vec<GridCell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub decoder: DecoderParams,
    pub tge: TgeParams,
    pub mmf: MmfParams,
    pub head: AnswerHead,
}

const SALT_INIT: u64 = 0x4000;

macro_rules! named_tensors {
    ($p:expr, $iter:ident, $($m:tt)?) => {{
        let ModelParams { decoder, tge, mmf, head } = $p;
        let mut out = Vec::new();
        for (l, (w, b)) in decoder.weights.$iter().zip(decoder.biases.$iter()).enumerate() {
            out.push((format!("decoder.level{l}.weight"), ParamGroup::Decoder, w));
            out.push((format!("decoder.level{l}.bias"), ParamGroup::Decoder, b));
        }
        out.push(("tge.attn.wq".to_string(), ParamGroup::Tge, & $($m)? tge.attn.wq));
        out.push(("tge.attn.wk".to_string(), ParamGroup::Tge, & $($m)? tge.attn.wk));
        out.push(("tge.attn.wv".to_string(), ParamGroup::Tge, & $($m)? tge.attn.wv));
        out.push(("tge.win.weight".to_string(), ParamGroup::Tge, & $($m)? tge.win_w));
        out.push(("tge.win.bias".to_string(), ParamGroup::Tge, & $($m)? tge.win_b));
        for (i, e) in tge.experts.$iter().enumerate() {
            out.push((format!("tge.expert{i}.attn.wq"), ParamGroup::Tge, & $($m)? e.attn.wq));
            out.push((format!("tge.expert{i}.attn.wk"), ParamGroup::Tge, & $($m)? e.attn.wk));
            out.push((format!("tge.expert{i}.attn.wv"), ParamGroup::Tge, & $($m)? e.attn.wv));
            out.push((format!("tge.expert{i}.ffn1.weight"), ParamGroup::Tge, & $($m)? e.w1));
            out.push((format!("tge.expert{i}.ffn1.bias"), ParamGroup::Tge, & $($m)? e.b1));
            out.push((format!("tge.expert{i}.ffn2.weight"), ParamGroup::Tge, & $($m)? e.w2));
            out.push((format!("tge.expert{i}.ffn2.bias"), ParamGroup::Tge, & $($m)? e.b2));
        }
        for (l, mcb) in mmf.mcbs.$iter().enumerate() {
            for (j, c) in mcb.general_convs.$iter().enumerate() {
                out.push((format!("mmf.mcb{l}.conv{j}.kernel"), ParamGroup::Mmf, & $($m)? c.kernel));
                out.push((format!("mmf.mcb{l}.conv{j}.bias"), ParamGroup::Mmf, & $($m)? c.bias));
            }
            out.push((format!("mmf.mcb{l}.depthwise"), ParamGroup::Mmf, & $($m)? mcb.depth));
            out.push((format!("mmf.mcb{l}.pointwise"), ParamGroup::Mmf, & $($m)? mcb.point));
            out.push((format!("mmf.mcb{l}.pointwise.bias"), ParamGroup::Mmf, & $($m)? mcb.point_bias));
        }
        out.push(("mmf.base".to_string(), ParamGroup::Mmf, & $($m)? mmf.e_base));
        out.push(("head.fc1.weight".to_string(), ParamGroup::Head, & $($m)? head.w1));
        out.push(("head.fc1.bias".to_string(), ParamGroup::Head, & $($m)? head.b1));
        out.push(("head.fc2.weight".to_string(), ParamGroup::Head, & $($m)? head.w2));
        out.push(("head.fc2.bias".to_string(), ParamGroup::Head, & $($m)? head.b2));
        out
    }};
}

impl ModelParams {
    /// Seeded initialization; `categories` is the number of text categories
    /// (and experts).
    pub fn init(cfg: &ModelConfig, categories: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let e = &cfg.encoder;
        let mut r = rng::stream(seed, SALT_INIT);
        Ok(ModelParams {
            decoder: DecoderParams::init(e.c3, e.c2, &mut r),
            tge: TgeParams::init(e.c1, e.c2, cfg.c_emb(), categories, &mut r)?,
            mmf: MmfParams::init(e.c3, cfg.pool_grid, cfg.base_rows, &mut r),
            head: AnswerHead::init(cfg.c_emb(), cfg.head_hidden, &mut r),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            decoder: self.decoder.zeros_like(),
            tge: self.tge.zeros_like(),
            mmf: self.mmf.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Every parameter tensor with a stable name and its group, in a fixed
    /// order.
    pub fn tensors(&self) -> Vec<(String, ParamGroup, &Tensor)> {
        named_tensors!(self, iter,)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ParamGroup, &mut Tensor)> {
        named_tensors!(self, iter_mut, mut)
    }

    pub fn group(&self, g: ParamGroup) -> Vec<&Tensor> {
        self.tensors().into_iter().filter(|(_, pg, _)| *pg == g).map(|(_, _, t)| t).collect()
    }

    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.numel()).sum()
    }

    /// Rebuilds parameters from named tensors, requiring exactly the names
    /// and shapes that `cfg` implies.
    pub fn from_named(cfg: &ModelConfig, categories: usize, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut params = ModelParams::init(cfg, categories, 0)?;
        let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, t) in named {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("tensor `{name}` appears twice")));
            }
        }
        for (name, _, slot) in params.tensors_mut() {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(params)
    }

    /// Adds `scale · other` to every tensor.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) -> Result<()> {
        for ((_, _, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(scale, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.is_finite())
    }
}

/// Model outputs for one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub maps: AnomalyMapSet,
    pub anomaly_logit: f64,
    pub cell_logits: [f64; CELL_LOGITS],
    pub gate: GateWeights,
}

impl Prediction {
    pub fn is_abnormal(&self) -> bool {
        self.anomaly_logit > 0.0
    }

    /// Cells attaining the largest position logit, in ascending order.
    pub fn predicted_cells(&self) -> Vec<GridCell> {
        let best = self.cell_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        GridCell::all().filter(|c| self.cell_logits[c.id() as usize] == best).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Losses {
    pub ce: f64,
    pub focal: f64,
    pub dice: f64,
}

impl std::ops::AddAssign for Losses {
    fn add_assign(&mut self, o: Losses) {
        self.ce += o.ce;
        self.focal += o.focal;
        self.dice += o.dice;
    }
}

impl Losses {
    pub fn scale(self, s: f64) -> Losses {
        Losses { ce: self.ce * s, focal: self.focal * s, dice: self.dice * s }
    }

    pub fn total(&self, plan: &StagePlan) -> f64 {
        plan.total_loss(self.ce, self.focal, self.dice)
    }
}

struct Forward {
    decoder: scoring::DecoderTrace,
    tge: tge::TgeTrace,
    mmf: Option<(mmf::MmfTrace, usize)>,
    head: super::head::HeadTrace,
    logits: Tensor,
}

fn forward(params: &ModelParams, ctx: &PromptContext, features: &ImageFeatures, out_size: (usize, usize), use_expert: bool) -> Result<Forward> {
    let decoder = scoring::decode_map_traced(&features.patches, &ctx.prompts, &params.decoder, out_size)?;
    let (e_img, tge) = tge::tge_forward(&features.global, &ctx.f_win_cat, &params.tge)?;
    let (expert_mean, mmf) = if use_expert {
        let (ek, trace) = mmf::mmf_forward(&decoder.maps.levels, &params.mmf)?;
        (ek.mean_row(), Some((trace, ek.e.shape()[0])))
    } else {
        (Tensor::zeros(e_img.shape().to_vec()), None)
    };
    let (logits, head) = params.head.forward(&e_img, &expert_mean)?;
    Ok(Forward { decoder, tge, mmf, head, logits })
}

/// Inference with the expert-knowledge path enabled.
pub fn predict(params: &ModelParams, ctx: &PromptContext, features: &ImageFeatures, out_size: (usize, usize)) -> Result<Prediction> {
    let f = forward(params, ctx, features, out_size, true)?;
    let l = f.logits.data();
    Ok(Prediction {
        anomaly_logit: l[0],
        cell_logits: l[1..].try_into().expect("nine cell logits"),
        gate: f.tge.weights.clone(),
        maps: f.decoder.maps,
    })
}

/// Rows of the answer cross-entropy: a two-way presence row, plus one
/// nine-way row per ground-truth cell for abnormal samples.
struct AnswerRows {
    presence: Tensor,
    presence_target: Tensor,
    cells: Option<(Tensor, Tensor)>,
}

impl AnswerRows {
    fn new(logits: &Tensor, sample: &EncodedSample) -> Result<Self> {
        let l = logits.data();
        let presence = ops::softmax_rows(&Tensor::new(vec![1, 2], vec![0.0, l[0]])?)?;
        let abnormal = sample.label.is_abnormal();
        let presence_target = Tensor::new(vec![1, 2], if abnormal { vec![0.0, 1.0] } else { vec![1.0, 0.0] })?;
        let cells = if abnormal {
            if sample.cells.is_empty() {
                return Err(Error::Input("abnormal sample without position cells".into()));
            }
            let m = sample.cells.len();
            let p = ops::softmax_rows(&Tensor::new(vec![1, CELL_LOGITS], l[1..].to_vec())?)?;
            let probs = Tensor::from_fn(vec![m, CELL_LOGITS], |i| p.data()[i % CELL_LOGITS]);
            let targets = Tensor::from_fn(vec![m, CELL_LOGITS], |i| {
                (sample.cells[i / CELL_LOGITS].id() as usize == i % CELL_LOGITS) as u8 as f64
            });
            Some((probs, targets))
        } else {
            None
        };
        Ok(AnswerRows { presence, presence_target, cells })
    }

    fn rows(&self) -> usize {
        1 + self.cells.as_ref().map_or(0, |(p, _)| p.shape()[0])
    }

    fn loss(&self) -> Result<f64> {
        let mut sum = losses::cross_entropy(&self.presence, &self.presence_target)?;
        if let Some((p, t)) = &self.cells {
            sum += p.shape()[0] as f64 * losses::cross_entropy(p, t)?;
        }
        Ok(sum / self.rows() as f64)
    }

    /// Cotangent of the `1×10` logits given `∂L/∂L_c = scale`.
    fn logits_vjp(&self, scale: f64) -> Result<Tensor> {
        let r = self.rows() as f64;
        let mut out = vec![0.0; 1 + CELL_LOGITS];
        let dp = losses::cross_entropy_vjp(&self.presence, &self.presence_target)?.scale(scale / r);
        out[0] = ops::softmax_rows_vjp(&self.presence, &dp)?.data()[1];
        if let Some((p, t)) = &self.cells {
            let m = p.shape()[0] as f64;
            let dp = losses::cross_entropy_vjp(p, t)?.scale(scale * m / r);
            let dl = ops::softmax_rows_vjp(p, &dp)?;
            for (i, v) in dl.data().iter().enumerate() {
                out[1 + i % CELL_LOGITS] += v;
            }
        }
        Tensor::new(vec![1, 1 + CELL_LOGITS], out)
    }
}

/// Per-sample losses under a stage plan (forward only).
pub fn sample_losses(params: &ModelParams, ctx: &PromptContext, sample: &EncodedSample, cfg: &ModelConfig, plan: &StagePlan) -> Result<Losses> {
    let out_size = sample.gt.dims2("sample_losses")?;
    let f = forward(params, ctx, &sample.features, out_size, plan.uses_expert())?;
    Ok(Losses {
        ce: AnswerRows::new(&f.logits, sample)?.loss()?,
        focal: losses::focal_loss(&f.decoder.maps.fused, &sample.gt, &cfg.focal)?,
        dice: losses::dice_loss(&f.decoder.maps.fused, &sample.gt)?,
    })
}

/// Per-sample losses and the gradient of the plan's total loss. Groups
/// outside the plan's trainable set receive exact zeros.
pub fn sample_gradient(
    params: &ModelParams,
    ctx: &PromptContext,
    sample: &EncodedSample,
    cfg: &ModelConfig,
    plan: &StagePlan,
) -> Result<(Losses, ModelParams)> {
    let out_size = sample.gt.dims2("sample_gradient")?;
    let f = forward(params, ctx, &sample.features, out_size, plan.uses_expert())?;
    let rows = AnswerRows::new(&f.logits, sample)?;
    let fused = &f.decoder.maps.fused;
    let l = Losses {
        ce: rows.loss()?,
        focal: losses::focal_loss(fused, &sample.gt, &cfg.focal)?,
        dice: losses::dice_loss(fused, &sample.gt)?,
    };
    let mut grads = params.zeros_like();
    let lam = plan.lambdas;

    let d_logits = rows.logits_vjp(lam.ce)?;
    let (d_head, d_img, d_expert) = params.head.vjp(&f.head, &d_logits)?;
    if plan.trains(ParamGroup::Head) {
        grads.head = d_head;
    }
    if plan.trains(ParamGroup::Tge) {
        grads.tge = tge::tge_vjp(&f.tge, &params.tge, &d_img)?;
    }

    let mut d_levels: [Tensor; LEVELS] =
        std::array::from_fn(|i| Tensor::zeros(f.decoder.maps.levels[i].shape().to_vec()));
    if let Some((trace, n_rows)) = &f.mmf {
        let c = d_expert.numel();
        let d_e = Tensor::from_fn(vec![*n_rows, c], |i| d_expert.data()[i % c] / *n_rows as f64);
        let (d_maps, d_mmf) = mmf::mmf_vjp(trace, &params.mmf, &d_e)?;
        if plan.trains(ParamGroup::Mmf) {
            grads.mmf = d_mmf;
        }
        d_levels = d_maps;
    }

    if plan.trains(ParamGroup::Decoder) {
        let mut d_fused = Tensor::zeros(fused.shape().to_vec());
        if lam.focal != 0.0 {
            d_fused.axpy(lam.focal, &losses::focal_loss_vjp(fused, &sample.gt, &cfg.focal)?)?;
        }
        if lam.dice != 0.0 {
            d_fused.axpy(lam.dice, &losses::dice_loss_vjp(fused, &sample.gt)?)?;
        }
        let from_fused = scoring::fused_vjp(&f.decoder.maps.levels, &d_fused)?;
        for (d, extra) in d_levels.iter_mut().zip(&from_fused) {
            d.axpy(1.0, extra)?;
        }
        grads.decoder = scoring::decode_map_vjp(&f.decoder, &ctx.prompts, &params.decoder, &d_levels)?;
    }
    Ok((l, grads))
}
