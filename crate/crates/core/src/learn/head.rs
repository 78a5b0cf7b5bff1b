use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::Tensor;
use crate::rng::StreamRng;

/// Number of position-cell logits.
pub const CELL_LOGITS: usize = 9;

/// Two-layer map from `concat(E_img, mean(E_expert))` to one anomaly logit
/// followed by nine position-cell logits.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug)]
pub struct HeadTrace {
    x: Tensor,
    pre: Tensor,
    hidden: Tensor,
}

impl AnswerHead {
    pub fn init(c_emb: usize, hidden: usize, rng: &mut StreamRng) -> Self {
        let inputs = 2 * c_emb;
        AnswerHead {
            w1: Tensor::randn(vec![inputs, hidden], (2.0 / inputs as f64).sqrt(), rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: Tensor::randn(vec![hidden, 1 + CELL_LOGITS], (1.0 / hidden as f64).sqrt(), rng),
            b2: Tensor::zeros(vec![1 + CELL_LOGITS]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        AnswerHead {
            w1: Tensor::zeros(self.w1.shape().to_vec()),
            b1: Tensor::zeros(self.b1.shape().to_vec()),
            w2: Tensor::zeros(self.w2.shape().to_vec()),
            b2: Tensor::zeros(self.b2.shape().to_vec()),
        }
    }

    /// Returns `1×10` logits.
    pub fn forward(&self, e_img: &Tensor, expert_mean: &Tensor) -> Result<(Tensor, HeadTrace)> {
        if e_img.shape() != expert_mean.shape() || e_img.rank() != 2 || e_img.shape()[0] != 1 {
            return Err(Error::dim(
                "answer_head",
                format!("image embedding {:?}, expert summary {:?}", e_img.shape(), expert_mean.shape()),
            ));
        }
        let x = Tensor::new(vec![1, 2 * e_img.numel()], [e_img.data(), expert_mean.data()].concat())?;
        let pre = ops::add_bias(&ops::matmul(&x, &self.w1)?, &self.b1)?;
        let hidden = ops::relu(&pre);
        let logits = ops::add_bias(&ops::matmul(&hidden, &self.w2)?, &self.b2)?;
        Ok((logits, HeadTrace { x, pre, hidden }))
    }

    /// Parameter cotangents and the cotangents of both inputs.
    pub fn vjp(&self, t: &HeadTrace, grad: &Tensor) -> Result<(AnswerHead, Tensor, Tensor)> {
        let (d_hidden, dw2) = ops::matmul_vjp(&t.hidden, &self.w2, grad)?;
        let d_pre = ops::relu_vjp(&t.pre, &d_hidden)?;
        let (dx, dw1) = ops::matmul_vjp(&t.x, &self.w1, &d_pre)?;
        let half = dx.numel() / 2;
        let d_img = Tensor::new(vec![1, half], dx.data()[..half].to_vec())?;
        let d_expert = Tensor::new(vec![1, half], dx.data()[half..].to_vec())?;
        let grads = AnswerHead { w1: dw1, b1: ops::add_bias_vjp(&d_pre), w2: dw2, b2: ops::add_bias_vjp(grad) };
        Ok((grads, d_img, d_expert))
    }
}
