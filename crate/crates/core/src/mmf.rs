//! Multi-mask fusion: mask convolution blocks turn each level's anomaly map
//! into `L1` tokens, the four token blocks are concatenated along channels,
//! and trainable base embeddings are appended.

use crate::encoders::LEVELS;
use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::Tensor;
use crate::rng::StreamRng;

const KERNEL: usize = 3;
const HIDDEN: usize = 8;

/// One general convolution: `3×3`, stride 2, zero padding 1, then ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Mask convolution block: general convs, a depthwise-separable stage, and
/// adaptive average pooling to `pool_grid × pool_grid` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct McbParams {
    pub general_convs: Vec<ConvLayer>,
    /// `3×3×C3`.
    pub depth: Tensor,
    /// `1×1×C3×C3`.
    pub point: Tensor,
    pub point_bias: Tensor,
    pub pool_grid: usize,
}

#[derive(Clone, Debug)]
pub struct McbTrace {
    /// Input of each general conv and its pre-activation output.
    convs: Vec<(Tensor, Tensor)>,
    ds_input: Tensor,
    ds_output_shape: Vec<usize>,
}

impl McbParams {
    pub fn init(c3: usize, pool_grid: usize, rng: &mut StreamRng) -> Self {
        let conv = |cin: usize, cout: usize, rng: &mut StreamRng| ConvLayer {
            kernel: Tensor::randn(vec![KERNEL, KERNEL, cin, cout], (2.0 / (9 * cin) as f64).sqrt(), rng),
            bias: Tensor::zeros(vec![cout]),
        };
        let general_convs = vec![conv(1, HIDDEN, rng), conv(HIDDEN, c3, rng)];
        McbParams {
            general_convs,
            depth: Tensor::randn(vec![KERNEL, KERNEL, c3], 1.0 / 3.0, rng),
            point: Tensor::randn(vec![1, 1, c3, c3], 1.0 / (c3 as f64).sqrt(), rng),
            point_bias: Tensor::zeros(vec![c3]),
            pool_grid,
        }
    }

    pub fn zeros_like(&self) -> Self {
        McbParams {
            general_convs: self
                .general_convs
                .iter()
                .map(|l| ConvLayer {
                    kernel: Tensor::zeros(l.kernel.shape().to_vec()),
                    bias: Tensor::zeros(l.bias.shape().to_vec()),
                })
                .collect(),
            depth: Tensor::zeros(self.depth.shape().to_vec()),
            point: Tensor::zeros(self.point.shape().to_vec()),
            point_bias: Tensor::zeros(self.point_bias.shape().to_vec()),
            pool_grid: self.pool_grid,
        }
    }

    pub fn channels(&self) -> usize {
        self.point.shape()[3]
    }

    pub fn tokens(&self) -> usize {
        self.pool_grid * self.pool_grid
    }
}

/// `L1×C3` tokens for one `h×w` map.
pub fn mcb_embed(map: &Tensor, p: &McbParams) -> Result<Tensor> {
    mcb_forward(map, p).map(|(e, _)| e)
}

pub fn mcb_forward(map: &Tensor, p: &McbParams) -> Result<(Tensor, McbTrace)> {
    let (h, w) = map.dims2("mcb_embed")?;
    if h < KERNEL || w < KERNEL {
        return Err(Error::dim("mcb_embed", format!("map {h}×{w} is smaller than the {KERNEL}×{KERNEL} kernel")));
    }
    let mut x = Tensor::from_parts(vec![h, w, 1], map.data().to_vec());
    let mut convs = Vec::with_capacity(p.general_convs.len());
    for layer in &p.general_convs {
        let pre = ops::add_bias(&ops::conv2d(&x, &layer.kernel, 2, 1)?, &layer.bias)?;
        let next = ops::relu(&pre);
        convs.push((x, pre));
        x = next;
    }
    let ds = ops::add_bias(&ops::depthwise_separable_conv2d(&x, &p.depth, &p.point)?, &p.point_bias)?;
    let pooled = ops::adaptive_avg_pool(&ds, p.pool_grid)?;
    let c = p.channels();
    let trace = McbTrace { convs, ds_input: x, ds_output_shape: ds.shape().to_vec() };
    Ok((pooled.reshape(vec![p.tokens(), c])?, trace))
}

/// Parameter cotangents and the cotangent of the input map.
pub fn mcb_vjp(t: &McbTrace, p: &McbParams, grad: &Tensor) -> Result<(Tensor, McbParams)> {
    let c = p.channels();
    let g = Tensor::from_parts(vec![p.pool_grid, p.pool_grid, c], grad.data().to_vec());
    let d_ds = ops::adaptive_avg_pool_vjp(&t.ds_output_shape, p.pool_grid, &g)?;
    let mut grads = p.zeros_like();
    grads.point_bias = ops::add_bias_vjp(&d_ds);
    let (mut dx, d_depth, d_point) = ops::depthwise_separable_conv2d_vjp(&t.ds_input, &p.depth, &p.point, &d_ds)?;
    grads.depth = d_depth;
    grads.point = d_point;
    for (i, (input, pre)) in t.convs.iter().enumerate().rev() {
        let d_pre = ops::relu_vjp(pre, &dx)?;
        let layer = &p.general_convs[i];
        grads.general_convs[i].bias = ops::add_bias_vjp(&d_pre);
        let (d_in, d_k) = ops::conv2d_vjp(input, &layer.kernel, 2, 1, &d_pre)?;
        grads.general_convs[i].kernel = d_k;
        dx = d_in;
    }
    let (h, w, _) = dx.dims3("mcb_vjp")?;
    Ok((dx.reshape(vec![h, w])?, grads))
}

/// Channel concatenation of the four level blocks in level order.
pub fn fuse(e_decs: &[Tensor]) -> Result<Tensor> {
    if e_decs.len() != LEVELS {
        return Err(Error::dim("fuse", format!("expected {LEVELS} blocks, got {}", e_decs.len())));
    }
    let (l1, c3) = e_decs[0].dims2("fuse")?;
    for e in e_decs {
        if e.shape() != [l1, c3] {
            return Err(Error::dim("fuse", format!("block {:?} vs {:?}", e.shape(), e_decs[0].shape())));
        }
    }
    let mut out = Vec::with_capacity(l1 * c3 * LEVELS);
    for r in 0..l1 {
        for e in e_decs {
            out.extend_from_slice(e.row(r));
        }
    }
    Ok(Tensor::from_parts(vec![l1, LEVELS * c3], out))
}

/// Inverse of [`fuse`]: splits channel blocks back into per-level tensors.
pub fn split(fused: &Tensor) -> Result<[Tensor; LEVELS]> {
    let (l1, c) = fused.dims2("split")?;
    if c % LEVELS != 0 {
        return Err(Error::dim("split", format!("width {c} is not a multiple of {LEVELS}")));
    }
    let c3 = c / LEVELS;
    Ok(std::array::from_fn(|l| {
        let data = (0..l1).flat_map(|r| fused.row(r)[l * c3..(l + 1) * c3].to_vec()).collect();
        Tensor::from_parts(vec![l1, c3], data)
    }))
}

/// Expert knowledge: `E_fusion` rows first, then `E_base` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertKnowledge {
    pub e: Tensor,
    pub fusion_rows: usize,
}

impl ExpertKnowledge {
    pub fn mean_row(&self) -> Tensor {
        let (n, c) = self.e.dims2("mean_row").expect("expert knowledge is a matrix");
        let mut out = vec![0.0; c];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(self.e.row(r)) {
                *o += v;
            }
        }
        Tensor::from_parts(vec![1, c], out.into_iter().map(|v| v / n as f64).collect())
    }
}

pub fn assemble(e_fusion: &Tensor, e_base: &Tensor) -> Result<ExpertKnowledge> {
    let (l1, c) = e_fusion.dims2("assemble")?;
    let (l3, cb) = e_base.dims2("assemble")?;
    if c != cb {
        return Err(Error::dim("assemble", format!("fusion width {c}, base width {cb}")));
    }
    let data = [e_fusion.data(), e_base.data()].concat();
    Ok(ExpertKnowledge { e: Tensor::from_parts(vec![l1 + l3, c], data), fusion_rows: l1 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmfParams {
    pub mcbs: Vec<McbParams>,
    /// `L3×C_emb`.
    pub e_base: Tensor,
}

impl MmfParams {
    pub fn init(c3: usize, pool_grid: usize, l3: usize, rng: &mut StreamRng) -> Self {
        let mcbs = (0..LEVELS).map(|_| McbParams::init(c3, pool_grid, rng)).collect();
        MmfParams { mcbs, e_base: Tensor::randn(vec![l3, LEVELS * c3], 0.1, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        MmfParams {
            mcbs: self.mcbs.iter().map(McbParams::zeros_like).collect(),
            e_base: Tensor::zeros(self.e_base.shape().to_vec()),
        }
    }

    pub fn c_emb(&self) -> usize {
        self.e_base.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct MmfTrace {
    mcbs: Vec<McbTrace>,
}

/// Expert knowledge from the four native-resolution level maps.
pub fn mmf_forward(level_maps: &[Tensor; LEVELS], p: &MmfParams) -> Result<(ExpertKnowledge, MmfTrace)> {
    let mut blocks = Vec::with_capacity(LEVELS);
    let mut traces = Vec::with_capacity(LEVELS);
    for (m, mcb) in level_maps.iter().zip(&p.mcbs) {
        let (e, t) = mcb_forward(m, mcb)?;
        blocks.push(e);
        traces.push(t);
    }
    let ek = assemble(&fuse(&blocks)?, &p.e_base)?;
    Ok((ek, MmfTrace { mcbs: traces }))
}

/// Cotangents of the parameters and of each level map given the cotangent of
/// the expert knowledge matrix.
pub fn mmf_vjp(t: &MmfTrace, p: &MmfParams, grad: &Tensor) -> Result<([Tensor; LEVELS], MmfParams)> {
    let (_, c) = grad.dims2("mmf_vjp")?;
    let l1 = p.mcbs[0].tokens();
    let fusion = Tensor::from_parts(vec![l1, c], grad.data()[..l1 * c].to_vec());
    let base = Tensor::from_parts(p.e_base.shape().to_vec(), grad.data()[l1 * c..].to_vec());
    let blocks = split(&fusion)?;
    let mut maps = Vec::with_capacity(LEVELS);
    let mut mcbs = Vec::with_capacity(LEVELS);
    for ((tr, mcb), g) in t.mcbs.iter().zip(&p.mcbs).zip(&blocks) {
        let (dm, dp) = mcb_vjp(tr, mcb, g)?;
        maps.push(dm);
        mcbs.push(dp);
    }
    Ok((maps.try_into().expect("four levels"), MmfParams { mcbs, e_base: base }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_map_zero_bias_gives_zero_tokens() {
        let p = McbParams::init(16, 2, &mut stream(1, 0));
        let e = mcb_embed(&Tensor::zeros(vec![16, 16]), &p).unwrap();
        assert_eq!(e.shape(), &[4, 16]);
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn token_count_independent_of_resolution() {
        let p = McbParams::init(16, 2, &mut stream(1, 0));
        for n in [16, 8, 4] {
            let m = Tensor::uniform(vec![n, n], 0.0, 1.0, &mut stream(n as u64, 1));
            assert_eq!(mcb_embed(&m, &p).unwrap().shape(), &[4, 16]);
        }
        assert!(mcb_embed(&Tensor::zeros(vec![2, 2]), &p).is_err());
    }

    #[test]
    fn matches_composition_of_ops() {
        let p = McbParams::init(16, 2, &mut stream(2, 0));
        let m = Tensor::uniform(vec![8, 8], 0.0, 1.0, &mut stream(3, 1));
        let mut x = m.clone().reshape(vec![8, 8, 1]).unwrap();
        for l in &p.general_convs {
            x = ops::relu(&ops::add_bias(&ops::conv2d(&x, &l.kernel, 2, 1).unwrap(), &l.bias).unwrap());
        }
        let ds = ops::add_bias(&ops::depthwise_separable_conv2d(&x, &p.depth, &p.point).unwrap(), &p.point_bias).unwrap();
        let pooled = ops::adaptive_avg_pool(&ds, 2).unwrap();
        let e = mcb_embed(&m, &p).unwrap();
        assert!(e.data().iter().zip(pooled.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn fuse_layout_and_split() {
        let blocks: Vec<Tensor> = (1..=4).map(|v| Tensor::full(vec![4, 3], v as f64)).collect();
        let f = fuse(&blocks).unwrap();
        assert_eq!(f.shape(), &[4, 12]);
        assert_eq!(f.row(0), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0, 4.0, 4.0]);
        assert_eq!(split(&f).unwrap().to_vec(), blocks);
        assert!(fuse(&blocks[..3]).is_err());
    }

    #[test]
    fn permuting_levels_permutes_channel_blocks() {
        let blocks: Vec<Tensor> = (0..4).map(|s| Tensor::uniform(vec![4, 3], 0.0, 1.0, &mut stream(s, 9))).collect();
        let f = fuse(&blocks).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<Tensor> = perm.iter().map(|&i| blocks[i].clone()).collect();
        let g = split(&fuse(&permuted).unwrap()).unwrap();
        let orig = split(&f).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(g[k], orig[i]);
        }
    }

    #[test]
    fn assemble_order_and_width_check() {
        let fusion = Tensor::uniform(vec![4, 8], 0.0, 1.0, &mut stream(1, 1));
        let base = Tensor::uniform(vec![2, 8], 0.0, 1.0, &mut stream(2, 1));
        let ek = assemble(&fusion, &base).unwrap();
        assert_eq!(ek.e.shape(), &[6, 8]);
        assert_eq!(ek.e.row(0), fusion.row(0));
        assert_eq!(ek.e.row(5), base.row(1));
        assert!(assemble(&fusion, &Tensor::zeros(vec![2, 7])).is_err());
    }

    #[test]
    fn pooled_tokens_within_activation_range() {
        let p = McbParams::init(16, 2, &mut stream(5, 0));
        let m = Tensor::uniform(vec![16, 16], 0.0, 1.0, &mut stream(6, 1));
        let (e, t) = mcb_forward(&m, &p).unwrap();
        let ds = ops::add_bias(&ops::depthwise_separable_conv2d(&t.ds_input, &p.depth, &p.point).unwrap(), &p.point_bias).unwrap();
        for ch in 0..16 {
            let vals: Vec<f64> = ds.data().iter().skip(ch).step_by(16).copied().collect();
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            for r in 0..4 {
                let v = e.row(r)[ch];
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
