//! Recorded op applications and the finite-difference check of their adjoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::Tensor;
use crate::error::Result;

type Forward = Box<dyn Fn(&[Tensor]) -> Result<Tensor> + Send + Sync>;
type Vjp = Box<dyn Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>> + Send + Sync>;

/// One op applied to concrete inputs, together with its forward map and
/// vector-Jacobian product so the pair can be checked numerically.
pub struct AdjointRecord {
    name: String,
    inputs: Vec<Tensor>,
    output: Tensor,
    forward: Forward,
    vjp: Vjp,
}

impl AdjointRecord {
    pub fn new<F, V>(name: impl Into<String>, inputs: Vec<Tensor>, forward: F, vjp: V) -> Result<Self>
    where
        F: Fn(&[Tensor]) -> Result<Tensor> + Send + Sync + 'static,
        V: Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>> + Send + Sync + 'static,
    {
        let output = forward(&inputs)?;
        Ok(AdjointRecord {
            name: name.into(),
            inputs,
            output,
            forward: Box::new(forward),
            vjp: Box::new(vjp),
        })
    }

    pub fn matmul(a: Tensor, b: Tensor) -> Result<Self> {
        Self::new(
            "matmul",
            vec![a, b],
            |x| ops::matmul(&x[0], &x[1]),
            |x, g| {
                let (ga, gb) = ops::matmul_vjp(&x[0], &x[1], g)?;
                Ok(vec![ga, gb])
            },
        )
    }

    pub fn softmax_rows(logits: Tensor) -> Result<Self> {
        Self::new(
            "softmax_rows",
            vec![logits],
            |x| ops::softmax_rows(&x[0]),
            |x, g| Ok(vec![ops::softmax_rows_vjp(&ops::softmax_rows(&x[0])?, g)?]),
        )
    }

    pub fn conv2d(input: Tensor, kernel: Tensor, stride: usize, padding: usize) -> Result<Self> {
        Self::new(
            "conv2d",
            vec![input, kernel],
            move |x| ops::conv2d(&x[0], &x[1], stride, padding),
            move |x, g| {
                let (gi, gk) = ops::conv2d_vjp(&x[0], &x[1], stride, padding, g)?;
                Ok(vec![gi, gk])
            },
        )
    }

    pub fn depthwise_separable_conv2d(input: Tensor, depth: Tensor, point: Tensor) -> Result<Self> {
        Self::new(
            "depthwise_separable_conv2d",
            vec![input, depth, point],
            |x| ops::depthwise_separable_conv2d(&x[0], &x[1], &x[2]),
            |x, g| {
                let (gi, gd, gp) = ops::depthwise_separable_conv2d_vjp(&x[0], &x[1], &x[2], g)?;
                Ok(vec![gi, gd, gp])
            },
        )
    }

    pub fn bilinear_upsample(input: Tensor, out_h: usize, out_w: usize) -> Result<Self> {
        Self::new(
            "bilinear_upsample",
            vec![input],
            move |x| ops::bilinear_upsample(&x[0], out_h, out_w),
            |x, g| Ok(vec![ops::bilinear_upsample_vjp(x[0].shape(), g)?]),
        )
    }

    pub fn adaptive_avg_pool(input: Tensor, grid: usize) -> Result<Self> {
        Self::new(
            "adaptive_avg_pool",
            vec![input],
            move |x| ops::adaptive_avg_pool(&x[0], grid),
            move |x, g| Ok(vec![ops::adaptive_avg_pool_vjp(x[0].shape(), grid, g)?]),
        )
    }

    /// Solve `A·x = b` for a fixed dense SPD matrix `a`, as a function of `b`.
    /// The adjoint is another solve with the same (symmetric) matrix.
    pub fn spd_solve(a: Tensor, b: Tensor) -> Result<Self> {
        let (n, _) = a.dims2("spd_solve")?;
        let solve = move |m: &Tensor, rhs: &Tensor| -> Result<Tensor> {
            let apply = |v: &[f64], out: &mut [f64]| {
                for i in 0..n {
                    out[i] = m.row(i).iter().zip(v).map(|(p, q)| p * q).sum();
                }
            };
            let sol = super::cg_solve(apply, rhs.data(), 1e-14, 10 * n)?;
            Ok(Tensor::from_parts(rhs.shape().to_vec(), sol.x))
        };
        let a_fwd = a.clone();
        Self::new(
            "cg_solve",
            vec![b],
            move |x| solve(&a_fwd, &x[0]),
            move |_, g| Ok(vec![solve(&a, g)?]),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn vjp(&self, cotangent: &Tensor) -> Result<Vec<Tensor>> {
        (self.vjp)(&self.inputs, cotangent)
    }

    pub fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        (self.forward)(inputs)
    }
}

/// Largest discrepancy between the recorded adjoint and central finite
/// differences, over two random cotangents.
///
/// For each input the error is `max_j |g_j − fd_j| / max(‖g‖∞, ‖fd‖∞)`; the
/// returned value is the maximum over inputs and probes. The step for element
/// `j` is `1e-6·max(1, |x_j|)`.
pub fn vjp_check(op: &AdjointRecord, probe_seed: u64) -> Result<f64> {
    const PROBES: usize = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let cot = Tensor::randn(op.output.shape().to_vec(), 1.0, &mut rng);
        let analytic = op.vjp(&cot)?;
        let mut perturbed = op.inputs.clone();
        for (k, grad) in analytic.iter().enumerate() {
            let mut fd = vec![0.0; grad.numel()];
            for (j, slot) in fd.iter_mut().enumerate() {
                let x0 = op.inputs[k].data()[j];
                let h = 1e-6 * x0.abs().max(1.0);
                perturbed[k].data_mut()[j] = x0 + h;
                let up = op.forward(&perturbed)?.dot(&cot);
                perturbed[k].data_mut()[j] = x0 - h;
                let down = op.forward(&perturbed)?.dot(&cot);
                perturbed[k].data_mut()[j] = x0;
                *slot = (up - down) / (2.0 * h);
            }
            worst = worst.max(relative_discrepancy(grad.data(), &fd));
        }
    }
    Ok(worst)
}

/// `max_j |a_j − b_j| / max(‖a‖∞, ‖b‖∞)`, zero when both vanish.
pub fn relative_discrepancy(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
