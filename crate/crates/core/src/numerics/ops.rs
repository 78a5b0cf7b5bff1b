//! Dense kernels and their hand-derived vector-Jacobian products.
//!
//! Every forward function `foo` has a companion `foo_vjp` that maps an output
//! cotangent to input cotangents. Spatial tensors are laid out `h×w×c`
//! (channel fastest); convolution kernels are `kh×kw×cin×cout`.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::dim(
            "matmul",
            format!("inner extents differ: {:?} × {:?}", a.shape(), b.shape()),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `(∂a, ∂b)` for `c = a·b` given `∂c`.
pub fn matmul_vjp(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = matmul(grad, &transpose(b)?)?;
    let gb = matmul(&transpose(a)?, grad)?;
    Ok((ga, gb))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2("transpose")?;
    let d = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (r, c) = logits.dims2("softmax_rows")?;
    let mut out = logits.data().to_vec();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// Cotangent of the logits given the softmax output `probs` and `∂probs`.
pub fn softmax_rows_vjp(probs: &Tensor, grad: &Tensor) -> Result<Tensor> {
    probs.expect_same_shape(grad, "softmax_rows_vjp")?;
    let (r, c) = probs.dims2("softmax_rows_vjp")?;
    let (p, g) = (probs.data(), grad.data());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let span = i * c..(i + 1) * c;
        let inner: f64 = p[span.clone()].iter().zip(&g[span.clone()]).map(|(a, b)| a * b).sum();
        for j in span {
            out[j] = p[j] * (g[j] - inner);
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `grad` where the pre-activation was strictly positive.
pub fn relu_vjp(pre: &Tensor, grad: &Tensor) -> Result<Tensor> {
    pre.zip_map(grad, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Adds `bias[c]` to every row of an `r×c` matrix (or every pixel of an
/// `h×w×c` map).
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().expect("tensors have rank ≥ 1");
    if bias.numel() != c {
        return Err(Error::dim(
            "add_bias",
            format!("bias of {} entries for trailing extent {c}", bias.numel()),
        ));
    }
    let b = bias.data();
    let mut out = x.data().to_vec();
    for (i, v) in out.iter_mut().enumerate() {
        *v += b[i % c];
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Cotangent of the bias: the gradient summed over all leading positions.
pub fn add_bias_vjp(grad: &Tensor) -> Tensor {
    let c = *grad.shape().last().expect("tensors have rank ≥ 1");
    let mut out = vec![0.0; c];
    for (i, g) in grad.data().iter().enumerate() {
        out[i % c] += g;
    }
    Tensor::from_parts(vec![c], out)
}

fn conv_out_extent(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    (k <= padded).then(|| (padded - k) / stride + 1)
}

fn conv_geometry(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (h, w, cin) = input.dims3("conv2d")?;
    let (kh, kw, kcin, cout) = kernel.dims4("conv2d")?;
    if stride == 0 {
        return Err(Error::Input("conv2d stride must be positive".into()));
    }
    if kcin != cin {
        return Err(Error::dim(
            "conv2d",
            format!("input {:?} has {cin} channels, kernel {:?} expects {kcin}", input.shape(), kernel.shape()),
        ));
    }
    let (Some(oh), Some(ow)) = (
        conv_out_extent(h, kh, stride, padding),
        conv_out_extent(w, kw, stride, padding),
    ) else {
        return Err(Error::dim(
            "conv2d",
            format!(
                "kernel {kh}×{kw} larger than input {h}×{w} padded by {padding}"
            ),
        ));
    };
    Ok((h, w, cin, kh, kw, cout, oh, ow))
}

/// 2-D cross-correlation with zero padding.
///
/// Each output element accumulates `ky`, then `kx`, then input channel, in
/// ascending order.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (h, w, cin, kh, kw, cout, oh, ow) = conv_geometry(input, kernel, stride, padding)?;
    let (x, k) = (input.data(), kernel.data());
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let obase = (oy * ow + ox) * cout;
            for co in 0..cout {
                let mut acc = 0.0;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let ibase = (iy as usize * w + ix as usize) * cin;
                        let kbase = (ky * kw + kx) * cin;
                        for ci in 0..cin {
                            acc += x[ibase + ci] * k[(kbase + ci) * cout + co];
                        }
                    }
                }
                out[obase + co] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, cout], out))
}

/// `(∂input, ∂kernel)` for [`conv2d`].
pub fn conv2d_vjp(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (h, w, cin, kh, kw, cout, oh, ow) = conv_geometry(input, kernel, stride, padding)?;
    if grad.shape() != [oh, ow, cout] {
        return Err(Error::dim(
            "conv2d_vjp",
            format!("cotangent {:?} does not match output [{oh}, {ow}, {cout}]", grad.shape()),
        ));
    }
    let (x, k, g) = (input.data(), kernel.data(), grad.data());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            let gbase = (oy * ow + ox) * cout;
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ibase = (iy as usize * w + ix as usize) * cin;
                    let kbase = (ky * kw + kx) * cin;
                    for ci in 0..cin {
                        let krow = (kbase + ci) * cout;
                        let xv = x[ibase + ci];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            let gv = g[gbase + co];
                            acc += gv * k[krow + co];
                            gk[krow + co] += gv * xv;
                        }
                        gx[ibase + ci] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), gx),
        Tensor::from_parts(kernel.shape().to_vec(), gk),
    ))
}

/// Pads an `h×w×c` map by repeating its edge pixels.
pub fn replicate_pad(input: &Tensor, pad_y: usize, pad_x: usize) -> Result<Tensor> {
    let (h, w, c) = input.dims3("replicate_pad")?;
    let (ph, pw) = (h + 2 * pad_y, w + 2 * pad_x);
    let x = input.data();
    let mut out = vec![0.0; ph * pw * c];
    for y in 0..ph {
        let sy = y.saturating_sub(pad_y).min(h - 1);
        for xx in 0..pw {
            let sx = xx.saturating_sub(pad_x).min(w - 1);
            let (o, s) = ((y * pw + xx) * c, (sy * w + sx) * c);
            out[o..o + c].copy_from_slice(&x[s..s + c]);
        }
    }
    Ok(Tensor::from_parts(vec![ph, pw, c], out))
}

/// Folds a cotangent of the padded map back onto the source pixels.
pub fn replicate_pad_vjp(shape: &[usize], pad_y: usize, pad_x: usize, grad: &Tensor) -> Result<Tensor> {
    let [h, w, c] = shape[..] else {
        return Err(Error::dim("replicate_pad_vjp", format!("bad shape {shape:?}")));
    };
    let (ph, pw) = (h + 2 * pad_y, w + 2 * pad_x);
    if grad.shape() != [ph, pw, c] {
        return Err(Error::dim("replicate_pad_vjp", format!("cotangent {:?}", grad.shape())));
    }
    let g = grad.data();
    let mut out = vec![0.0; h * w * c];
    for y in 0..ph {
        let sy = y.saturating_sub(pad_y).min(h - 1);
        for xx in 0..pw {
            let sx = xx.saturating_sub(pad_x).min(w - 1);
            let (o, s) = ((y * pw + xx) * c, (sy * w + sx) * c);
            for ch in 0..c {
                out[s + ch] += g[o + ch];
            }
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

/// Per-channel valid cross-correlation with a `kh×kw×c` kernel, stride 1.
pub fn depthwise_conv2d(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (h, w, c) = input.dims3("depthwise_conv2d")?;
    let (kh, kw, kc) = kernel.dims3("depthwise_conv2d")?;
    if kc != c {
        return Err(Error::dim(
            "depthwise_conv2d",
            format!("input {:?} vs depth kernel {:?}: channel mismatch", input.shape(), kernel.shape()),
        ));
    }
    if kh > h || kw > w {
        return Err(Error::dim("depthwise_conv2d", format!("kernel {kh}×{kw} larger than input {h}×{w}")));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (x, k) = (input.data(), kernel.data());
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        acc += x[((oy + ky) * w + ox + kx) * c + ch] * k[(ky * kw + kx) * c + ch];
                    }
                }
                out[(oy * ow + ox) * c + ch] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, c], out))
}

pub fn depthwise_conv2d_vjp(input: &Tensor, kernel: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let (h, w, c) = input.dims3("depthwise_conv2d_vjp")?;
    let (kh, kw, _) = kernel.dims3("depthwise_conv2d_vjp")?;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    if grad.shape() != [oh, ow, c] {
        return Err(Error::dim("depthwise_conv2d_vjp", format!("cotangent {:?}", grad.shape())));
    }
    let (x, k, g) = (input.data(), kernel.data(), grad.data());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let gv = g[(oy * ow + ox) * c + ch];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let xi = ((oy + ky) * w + ox + kx) * c + ch;
                        let ki = (ky * kw + kx) * c + ch;
                        gx[xi] += gv * k[ki];
                        gk[ki] += gv * x[xi];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), gx),
        Tensor::from_parts(kernel.shape().to_vec(), gk),
    ))
}

fn same_padding(kernel: &Tensor) -> Result<(usize, usize)> {
    let (kh, kw, _) = kernel.dims3("depthwise_separable_conv2d")?;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::dim(
            "depthwise_separable_conv2d",
            format!("depth kernel extents must be odd, got {kh}×{kw}"),
        ));
    }
    Ok((kh / 2, kw / 2))
}

/// Depthwise spatial filtering followed by 1×1 channel mixing.
///
/// The depthwise stage keeps the spatial size: the input is edge-replicated
/// by half the kernel extent before a valid per-channel correlation, so
/// constant maps stay constant.
pub fn depthwise_separable_conv2d(input: &Tensor, depth_kernel: &Tensor, point_kernel: &Tensor) -> Result<Tensor> {
    let (py, px) = same_padding(depth_kernel)?;
    let padded = replicate_pad(input, py, px)?;
    let spatial = depthwise_conv2d(&padded, depth_kernel)?;
    let (one_h, one_w, _, _) = point_kernel.dims4("depthwise_separable_conv2d")?;
    if (one_h, one_w) != (1, 1) {
        return Err(Error::dim(
            "depthwise_separable_conv2d",
            format!("point kernel must be 1×1×c×cout, got {:?}", point_kernel.shape()),
        ));
    }
    conv2d(&spatial, point_kernel, 1, 0)
}

/// `(∂input, ∂depth_kernel, ∂point_kernel)`.
pub fn depthwise_separable_conv2d_vjp(
    input: &Tensor,
    depth_kernel: &Tensor,
    point_kernel: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (py, px) = same_padding(depth_kernel)?;
    let padded = replicate_pad(input, py, px)?;
    let spatial = depthwise_conv2d(&padded, depth_kernel)?;
    let (g_spatial, g_point) = conv2d_vjp(&spatial, point_kernel, 1, 0, grad)?;
    let (g_padded, g_depth) = depthwise_conv2d_vjp(&padded, depth_kernel, &g_spatial)?;
    let g_input = replicate_pad_vjp(input.shape(), py, px, &g_padded)?;
    Ok((g_input, g_depth, g_point))
}

/// Source coordinate and interpolation weight along one axis.
fn sample_axis(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let pos = (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    let pos = pos.clamp(0.0, (n_in - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, pos - lo as f64)
}

/// Half-pixel-centre bilinear upsampling of an `h×w` map.
///
/// Interpolates in `a + t·(b − a)` form so constant inputs are reproduced
/// bit for bit.
pub fn bilinear_upsample(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = input.dims2("bilinear_upsample")?;
    if out_h < h || out_w < w {
        return Err(Error::Unsupported {
            op: "bilinear_upsample",
            detail: format!("downscaling {h}×{w} to {out_h}×{out_w}"),
        });
    }
    let x = input.data();
    let cols: Vec<_> = (0..out_w).map(|j| sample_axis(j, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (y0, y1, ty) = sample_axis(i, h, out_h);
        for &(x0, x1, tx) in &cols {
            let (a, b) = (x[y0 * w + x0], x[y0 * w + x1]);
            let (c, d) = (x[y1 * w + x0], x[y1 * w + x1]);
            let top = a + tx * (b - a);
            let bottom = c + tx * (d - c);
            out.push(top + ty * (bottom - top));
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w], out))
}

pub fn bilinear_upsample_vjp(in_shape: &[usize], grad: &Tensor) -> Result<Tensor> {
    let [h, w] = in_shape[..] else {
        return Err(Error::dim("bilinear_upsample_vjp", format!("bad input shape {in_shape:?}")));
    };
    let (out_h, out_w) = grad.dims2("bilinear_upsample_vjp")?;
    let g = grad.data();
    let cols: Vec<_> = (0..out_w).map(|j| sample_axis(j, w, out_w)).collect();
    let mut out = vec![0.0; h * w];
    for i in 0..out_h {
        let (y0, y1, ty) = sample_axis(i, h, out_h);
        for (j, &(x0, x1, tx)) in cols.iter().enumerate() {
            let gv = g[i * out_w + j];
            out[y0 * w + x0] += gv * (1.0 - ty) * (1.0 - tx);
            out[y0 * w + x1] += gv * (1.0 - ty) * tx;
            out[y1 * w + x0] += gv * ty * (1.0 - tx);
            out[y1 * w + x1] += gv * ty * tx;
        }
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), out))
}

fn pool_bin(i: usize, n: usize, g: usize) -> (usize, usize) {
    (i * n / g, ((i + 1) * n).div_ceil(g))
}

/// Adaptive average pooling of an `h×w×c` map onto a `g×g` grid.
///
/// Bin `i` spans `[⌊i·n/g⌋, ⌈(i+1)·n/g⌉)`, so inputs smaller than the grid
/// repeat pixels rather than failing.
pub fn adaptive_avg_pool(input: &Tensor, grid: usize) -> Result<Tensor> {
    let (h, w, c) = input.dims3("adaptive_avg_pool")?;
    if grid == 0 {
        return Err(Error::Input("pool grid must be positive".into()));
    }
    let x = input.data();
    let mut out = vec![0.0; grid * grid * c];
    for by in 0..grid {
        let (y0, y1) = pool_bin(by, h, grid);
        for bx in 0..grid {
            let (x0, x1) = pool_bin(bx, w, grid);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let o = (by * grid + bx) * c;
            for y in y0..y1 {
                for xx in x0..x1 {
                    let s = (y * w + xx) * c;
                    for ch in 0..c {
                        out[o + ch] += x[s + ch];
                    }
                }
            }
            for v in &mut out[o..o + c] {
                *v /= count;
            }
        }
    }
    Ok(Tensor::from_parts(vec![grid, grid, c], out))
}

pub fn adaptive_avg_pool_vjp(in_shape: &[usize], grid: usize, grad: &Tensor) -> Result<Tensor> {
    let [h, w, c] = in_shape[..] else {
        return Err(Error::dim("adaptive_avg_pool_vjp", format!("bad input shape {in_shape:?}")));
    };
    let g = grad.data();
    let mut out = vec![0.0; h * w * c];
    for by in 0..grid {
        let (y0, y1) = pool_bin(by, h, grid);
        for bx in 0..grid {
            let (x0, x1) = pool_bin(bx, w, grid);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let o = (by * grid + bx) * c;
            for y in y0..y1 {
                for xx in x0..x1 {
                    let s = (y * w + xx) * c;
                    for ch in 0..c {
                        out[s + ch] += g[o + ch] / count;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(in_shape.to_vec(), out))
}
