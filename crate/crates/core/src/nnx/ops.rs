//! Forward-only kernels over [`Tensor`].
//!
//! Spatial tensors are `(C, H, W)`. `layer_norm` and `linear` act on the last
//! axis, so spatial inputs are permuted to channels-last around them.

use super::{NnxError, Tensor};

fn shape_err(msg: impl Into<String>) -> NnxError {
    NnxError::ShapeMismatch(msg.into())
}

fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize, NnxError> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(shape_err(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Cross-correlation of a `(C, H, W)` input with an `(O, C, KH, KW)` kernel.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NnxError> {
    if stride == 0 {
        return Err(NnxError::InvalidArgument("stride must be at least 1".into()));
    }
    let (in_c, in_h, in_w) = input.chw()?;
    let (out_c, k_c, kh, kw) = match kernel.shape()[..] {
        [o, c, kh, kw] => (o, c, kh, kw),
        _ => return Err(shape_err(format!("conv kernel must be rank 4, got {:?}", kernel.shape()))),
    };
    if k_c != in_c {
        return Err(shape_err(format!("kernel expects {k_c} input channels, input has {in_c}")));
    }
    if bias.shape() != [out_c] {
        return Err(shape_err(format!("bias shape {:?} != [{out_c}]", bias.shape())));
    }
    let out_h = output_extent(in_h, kh, stride, padding)?;
    let out_w = output_extent(in_w, kw, stride, padding)?;

    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0f32; out_c * out_h * out_w];
    for o in 0..out_c {
        let plane = &mut out[o * out_h * out_w..(o + 1) * out_h * out_w];
        plane.fill(bias.data()[o]);
        for c in 0..in_c {
            let k_base = (o * in_c + c) * kh * kw;
            let x_base = c * in_h * in_w;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = 0.0f32;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let row = x_base + iy as usize * in_w;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            acc += x[row + ix as usize] * k[k_base + ky * kw + kx];
                        }
                    }
                    plane[oy * out_w + ox] += acc;
                }
            }
        }
    }
    Tensor::new(vec![out_c, out_h, out_w], out)
}

/// Per-channel spatial convolution with stride 1. Kernel is `(C, 1, KH, KW)`.
pub fn depthwise_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    padding: usize,
) -> Result<Tensor, NnxError> {
    let (c, in_h, in_w) = input.chw()?;
    let (kh, kw) = match kernel.shape()[..] {
        [kc, 1, kh, kw] if kc == c => (kh, kw),
        _ => {
            return Err(shape_err(format!(
                "depthwise kernel must be [{c}, 1, KH, KW], got {:?}",
                kernel.shape()
            )))
        }
    };
    if bias.shape() != [c] {
        return Err(shape_err(format!("bias shape {:?} != [{c}]", bias.shape())));
    }
    let out_h = output_extent(in_h, kh, 1, padding)?;
    let out_w = output_extent(in_w, kw, 1, padding)?;

    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    for ch in 0..c {
        let k_base = ch * kh * kw;
        let x_base = ch * in_h * in_w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0f32;
                for ky in 0..kh {
                    let iy = (oy + ky) as isize - padding as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox + kx) as isize - padding as isize;
                        if ix < 0 || ix >= in_w as isize {
                            continue;
                        }
                        acc += x[x_base + iy as usize * in_w + ix as usize] * k[k_base + ky * kw + kx];
                    }
                }
                out[(ch * out_h + oy) * out_w + ox] = acc + bias.data()[ch];
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Normalizes every vector along the last axis to zero mean and unit
/// population variance, then applies `gamma * x + beta`.
///
/// A zero-variance vector with `epsilon == 0` normalizes to zeros.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, epsilon: f32) -> Result<Tensor, NnxError> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(NnxError::InvalidArgument(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    let c = *x.shape().last().ok_or_else(|| shape_err("layer_norm on a rank-0 tensor"))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(format!(
            "gamma {:?} / beta {:?} must both be [{c}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    if c == 0 {
        return Ok(x.clone());
    }
    let mut out = x.data().to_vec();
    let (g, b) = (gamma.data(), beta.data());
    for row in out.chunks_exact_mut(c) {
        let mean = row.iter().sum::<f32>() / c as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
        let denom = (var + epsilon).sqrt();
        for (i, v) in row.iter_mut().enumerate() {
            let normed = if denom > 0.0 { (*v - mean) / denom } else { 0.0 };
            *v = normed * g[i] + b[i];
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Exact GELU, `x * Φ(x)`, on a scalar.
pub fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = gelu_scalar(*v));
    out
}

/// Affine map along the last axis. `weight` is `(out, in)`, `bias` is `(out)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, NnxError> {
    let (out_f, in_f) = match weight.shape()[..] {
        [o, i] => (o, i),
        _ => return Err(shape_err(format!("linear weight must be rank 2, got {:?}", weight.shape()))),
    };
    if x.shape().last() != Some(&in_f) {
        return Err(shape_err(format!(
            "input {:?} does not end in {in_f} features",
            x.shape()
        )));
    }
    if bias.shape() != [out_f] {
        return Err(shape_err(format!("bias shape {:?} != [{out_f}]", bias.shape())));
    }
    let w = weight.data();
    let rows = x.numel().checked_div(in_f).unwrap_or(0);
    let mut out = Vec::with_capacity(rows * out_f);
    for r in 0..rows {
        let xr = &x.data()[r * in_f..(r + 1) * in_f];
        for o in 0..out_f {
            let wr = &w[o * in_f..(o + 1) * in_f];
            let dot: f32 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            out.push(dot + bias.data()[o]);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_f;
    Tensor::new(shape, out)
}

/// Spatial mean of each channel of a `(C, H, W)` tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor, NnxError> {
    let (c, h, w) = x.chw()?;
    let area = h * w;
    if area == 0 {
        return Err(shape_err("global_avg_pool over an empty spatial extent"));
    }
    let out = x
        .data()
        .chunks_exact(area)
        .map(|plane| plane.iter().sum::<f32>() / area as f32)
        .collect::<Vec<_>>();
    debug_assert_eq!(out.len(), c);
    Ok(Tensor::from_vec(out))
}

/// Numerically stable softmax. Intermediate sums are carried in `f64`.
pub fn softmax(logits: &[f32]) -> Result<Vec<f32>, NnxError> {
    if logits.is_empty() {
        return Err(NnxError::EmptyInput);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnxError::NonFinite);
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| (e / sum) as f32).collect())
}
