//! Text-guided enhancer: gate weights from the interaction between the
//! global image feature and category text embeddings, and a gated mixture of
//! expert transforms.

use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::Tensor;
use crate::rng::StreamRng;

/// Single-head self-attention with residual: `X + softmax(QKᵀ/√C)·V`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Clone, Debug)]
pub struct AttentionTrace {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Tensor,
}

impl AttentionParams {
    pub fn init(c: usize, rng: &mut StreamRng) -> Self {
        let s = 1.0 / (c as f64).sqrt();
        AttentionParams {
            wq: Tensor::randn(vec![c, c], s, rng),
            wk: Tensor::randn(vec![c, c], s, rng),
            wv: Tensor::randn(vec![c, c], s, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        AttentionParams {
            wq: Tensor::zeros(self.wq.shape().to_vec()),
            wk: Tensor::zeros(self.wk.shape().to_vec()),
            wv: Tensor::zeros(self.wv.shape().to_vec()),
        }
    }

    /// `x` is an `n×C` token sequence.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, AttentionTrace)> {
        let (_, c) = x.dims2("attention")?;
        let q = ops::matmul(x, &self.wq)?;
        let k = ops::matmul(x, &self.wk)?;
        let v = ops::matmul(x, &self.wv)?;
        let scores = ops::matmul(&q, &ops::transpose(&k)?)?.scale(1.0 / (c as f64).sqrt());
        let probs = ops::softmax_rows(&scores)?;
        let mut out = ops::matmul(&probs, &v)?;
        out.axpy(1.0, x)?;
        Ok((out, AttentionTrace { x: x.clone(), q, k, v, probs }))
    }

    /// Returns the input cotangent and the parameter cotangents.
    pub fn vjp(&self, t: &AttentionTrace, grad: &Tensor) -> Result<(Tensor, AttentionParams)> {
        let c = t.x.shape()[1];
        let inv = 1.0 / (c as f64).sqrt();
        let (d_probs, dv) = ops::matmul_vjp(&t.probs, &t.v, grad)?;
        let d_scores = ops::softmax_rows_vjp(&t.probs, &d_probs)?.scale(inv);
        let dq = ops::matmul(&d_scores, &t.k)?;
        let dk = ops::matmul(&ops::transpose(&d_scores)?, &t.q)?;
        let xt = ops::transpose(&t.x)?;
        let grads = AttentionParams {
            wq: ops::matmul(&xt, &dq)?,
            wk: ops::matmul(&xt, &dk)?,
            wv: ops::matmul(&xt, &dv)?,
        };
        let mut dx = grad.clone();
        dx.axpy(1.0, &ops::matmul(&dq, &ops::transpose(&self.wq)?)?)?;
        dx.axpy(1.0, &ops::matmul(&dk, &ops::transpose(&self.wk)?)?)?;
        dx.axpy(1.0, &ops::matmul(&dv, &ops::transpose(&self.wv)?)?)?;
        Ok((dx, grads))
    }
}

/// Attention block followed by `ReLU(a·W1 + b1)·W2 + b2`, hidden width `2·C1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertParams {
    pub attn: AttentionParams,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug)]
pub struct ExpertTrace {
    attn: AttentionTrace,
    a: Tensor,
    pre: Tensor,
    hidden: Tensor,
}

impl ExpertParams {
    pub fn init(c1: usize, c_emb: usize, rng: &mut StreamRng) -> Self {
        let hidden = 2 * c1;
        ExpertParams {
            attn: AttentionParams::init(c1, rng),
            w1: Tensor::randn(vec![c1, hidden], (2.0 / c1 as f64).sqrt(), rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: Tensor::randn(vec![hidden, c_emb], (1.0 / hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(vec![c_emb]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ExpertParams {
            attn: self.attn.zeros_like(),
            w1: Tensor::zeros(self.w1.shape().to_vec()),
            b1: Tensor::zeros(self.b1.shape().to_vec()),
            w2: Tensor::zeros(self.w2.shape().to_vec()),
            b2: Tensor::zeros(self.b2.shape().to_vec()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ExpertTrace)> {
        let (a, attn) = self.attn.forward(x)?;
        let pre = ops::add_bias(&ops::matmul(&a, &self.w1)?, &self.b1)?;
        let hidden = ops::relu(&pre);
        let out = ops::add_bias(&ops::matmul(&hidden, &self.w2)?, &self.b2)?;
        Ok((out, ExpertTrace { attn, a, pre, hidden }))
    }

    /// Parameter cotangents; the input is a frozen feature.
    pub fn vjp(&self, t: &ExpertTrace, grad: &Tensor) -> Result<ExpertParams> {
        let (d_hidden, dw2) = ops::matmul_vjp(&t.hidden, &self.w2, grad)?;
        let d_pre = ops::relu_vjp(&t.pre, &d_hidden)?;
        let (da, dw1) = ops::matmul_vjp(&t.a, &self.w1, &d_pre)?;
        let (_, attn) = self.attn.vjp(&t.attn, &da)?;
        Ok(ExpertParams {
            attn,
            w1: dw1,
            b1: ops::add_bias_vjp(&d_pre),
            w2: dw2,
            b2: ops::add_bias_vjp(grad),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TgeParams {
    /// Attention applied to the image feature before gating.
    pub attn: AttentionParams,
    /// `C2×C1` map aligning category text embeddings with image features.
    pub win_w: Tensor,
    pub win_b: Tensor,
    /// One per text category.
    pub experts: Vec<ExpertParams>,
}

impl TgeParams {
    pub fn init(c1: usize, c2: usize, c_emb: usize, categories: usize, rng: &mut StreamRng) -> Result<Self> {
        if categories < 2 {
            return Err(Error::Input(format!("need at least two expert categories, got {categories}")));
        }
        Ok(TgeParams {
            attn: AttentionParams::init(c1, rng),
            win_w: Tensor::randn(vec![c2, c1], 1.0 / (c2 as f64).sqrt(), rng),
            win_b: Tensor::zeros(vec![c1]),
            experts: (0..categories).map(|_| ExpertParams::init(c1, c_emb, rng)).collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        TgeParams {
            attn: self.attn.zeros_like(),
            win_w: Tensor::zeros(self.win_w.shape().to_vec()),
            win_b: Tensor::zeros(self.win_b.shape().to_vec()),
            experts: self.experts.iter().map(ExpertParams::zeros_like).collect(),
        }
    }
}

/// A point on the probability simplex, one weight per expert.
#[derive(Clone, Debug, PartialEq)]
pub struct GateWeights {
    pub w: Vec<f64>,
}

impl GateWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if w.is_empty() || w.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("gate weights {w:?} are not on the simplex")));
        }
        Ok(GateWeights { w })
    }
}

#[derive(Clone, Debug)]
pub struct TgeTrace {
    attn: AttentionTrace,
    query: Tensor,
    aligned: Tensor,
    f_win_cat: Tensor,
    pub weights: GateWeights,
    experts: Vec<(Tensor, ExpertTrace)>,
}

fn check_inputs(f_img: &Tensor, f_win_cat: &Tensor, p: &TgeParams) -> Result<()> {
    let (rows, c1) = f_img.dims2("gate")?;
    let (cats, c2) = f_win_cat.dims2("gate")?;
    let (wc2, wc1) = p.win_w.dims2("gate")?;
    if rows != 1 || wc1 != c1 || wc2 != c2 || p.attn.wq.shape() != [c1, c1] {
        return Err(Error::dim(
            "gate",
            format!(
                "image feature {:?}, category embeddings {:?}, alignment {:?}",
                f_img.shape(),
                f_win_cat.shape(),
                p.win_w.shape()
            ),
        ));
    }
    if cats != p.experts.len() {
        return Err(Error::dim("gate", format!("{cats} categories for {} experts", p.experts.len())));
    }
    Ok(())
}

/// `W_e = softmax(attn(F_img) · (F_win_cat·W + b)ᵀ)`.
pub fn gate(f_img: &Tensor, f_win_cat: &Tensor, p: &TgeParams) -> Result<GateWeights> {
    check_inputs(f_img, f_win_cat, p)?;
    let (query, _) = p.attn.forward(f_img)?;
    let aligned = ops::add_bias(&ops::matmul(f_win_cat, &p.win_w)?, &p.win_b)?;
    gate_from(&query, &aligned)
}

fn gate_from(query: &Tensor, aligned: &Tensor) -> Result<GateWeights> {
    let logits = ops::matmul(query, &ops::transpose(aligned)?)?;
    Ok(GateWeights { w: ops::softmax_rows(&logits)?.into_data() })
}

/// `E_img = Σ_i w_i · Expert_i(F_img)`.
pub fn enhance(f_img: &Tensor, w: &GateWeights, p: &TgeParams) -> Result<Tensor> {
    if w.w.len() != p.experts.len() {
        return Err(Error::dim("enhance", format!("{} weights for {} experts", w.w.len(), p.experts.len())));
    }
    let mut out: Option<Tensor> = None;
    for (wi, e) in w.w.iter().zip(&p.experts) {
        let (y, _) = e.forward(f_img)?;
        match &mut out {
            None => out = Some(y.scale(*wi)),
            Some(acc) => acc.axpy(*wi, &y)?,
        }
    }
    Ok(out.expect("at least one expert"))
}

/// Gate and enhance in one pass, retaining intermediates for [`tge_vjp`].
pub fn tge_forward(f_img: &Tensor, f_win_cat: &Tensor, p: &TgeParams) -> Result<(Tensor, TgeTrace)> {
    check_inputs(f_img, f_win_cat, p)?;
    let (query, attn) = p.attn.forward(f_img)?;
    let aligned = ops::add_bias(&ops::matmul(f_win_cat, &p.win_w)?, &p.win_b)?;
    let weights = gate_from(&query, &aligned)?;
    let experts = p
        .experts
        .iter()
        .map(|e| e.forward(f_img))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Tensor::zeros(experts[0].0.shape().to_vec());
    for (wi, (y, _)) in weights.w.iter().zip(&experts) {
        out.axpy(*wi, y)?;
    }
    Ok((
        out,
        TgeTrace { attn, query, aligned, f_win_cat: f_win_cat.clone(), weights, experts },
    ))
}

/// Parameter cotangents of `E_img` given its cotangent.
pub fn tge_vjp(t: &TgeTrace, p: &TgeParams, grad: &Tensor) -> Result<TgeParams> {
    let w = &t.weights.w;
    // d/dw_i of Σ w_i·y_i is ⟨grad, y_i⟩.
    let dw: Vec<f64> = t.experts.iter().map(|(y, _)| grad.dot(y)).collect();
    let probs = Tensor::from_parts(vec![1, w.len()], w.clone());
    let d_logits = ops::softmax_rows_vjp(&probs, &Tensor::from_parts(vec![1, w.len()], dw))?;
    // logits = query·alignedᵀ
    let d_query = ops::matmul(&d_logits, &t.aligned)?;
    let d_aligned = ops::matmul(&ops::transpose(&d_logits)?, &t.query)?;
    let (_, attn) = p.attn.vjp(&t.attn, &d_query)?;
    let win_w = ops::matmul(&ops::transpose(&t.f_win_cat)?, &d_aligned)?;
    let win_b = ops::add_bias_vjp(&d_aligned);
    let experts = p
        .experts
        .iter()
        .zip(&t.experts)
        .zip(w)
        .map(|((e, (_, tr)), wi)| e.vjp(tr, &grad.scale(*wi)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TgeParams { attn, win_w, win_b, experts })
}
