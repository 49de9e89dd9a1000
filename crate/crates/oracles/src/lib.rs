//! Straight-line f64 reference implementations.
//!
//! Everything here is written for clarity over speed: explicit padding
//! buffers, full sorts, fixpoint sweeps. Test suites compare the production
//! kernels against these.

use std::collections::HashMap;

use statrs::function::erf::erf;

/// Deterministic test-data generator (SplitMix64).
#[derive(Debug, Clone)]
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn vec_f32(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f32> {
        (0..n).map(|_| self.uniform(lo, hi) as f32).collect()
    }
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}

fn pad_chw(x: &[f64], c: usize, h: usize, w: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * ph + y + pad) * pw + xx + pad] = x[(ch * h + y) * w + xx];
            }
        }
    }
    (out, ph, pw)
}

/// Output `(data, out_h, out_w)` of a CHW cross-correlation with an
/// `[o][c][kh][kw]` kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    kernel: &[f64],
    (o, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let (p, ph, pw) = pad_chw(x, c, h, w, pad);
    let oh = (ph - kh) / stride + 1;
    let ow = (pw - kw) / stride + 1;
    let mut out = Vec::with_capacity(o * oh * ow);
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[oc];
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            s += p[(ic * ph + oy * stride + ky) * pw + ox * stride + kx]
                                * kernel[((oc * c + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    (out, oh, ow)
}

/// Stride-1 per-channel convolution, kernel laid out `[c][kh][kw]`.
pub fn depthwise_conv2d(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    kernel: &[f64],
    (kh, kw): (usize, usize),
    bias: &[f64],
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let (p, ph, pw) = pad_chw(x, c, h, w, pad);
    let oh = ph - kh + 1;
    let ow = pw - kw + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[ch];
                for ky in 0..kh {
                    for kx in 0..kw {
                        s += p[(ch * ph + oy + ky) * pw + ox + kx] * kernel[(ch * kh + ky) * kw + kx];
                    }
                }
                out.push(s);
            }
        }
    }
    (out, oh, ow)
}

/// `y[r][o] = b[o] + Σ_i x[r][i] w[o][i]` for each row `r`.
pub fn linear(x: &[f64], in_dim: usize, weight: &[f64], out_dim: usize, bias: &[f64]) -> Vec<f64> {
    let rows = x.len() / in_dim;
    let mut out = Vec::with_capacity(rows * out_dim);
    for r in 0..rows {
        for o in 0..out_dim {
            let mut s = bias[o];
            for i in 0..in_dim {
                s += x[r * in_dim + i] * weight[o * in_dim + i];
            }
            out.push(s);
        }
    }
    out
}

pub fn global_avg_pool(x: &[f64], c: usize, plane: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| x[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect()
}

/// Two-pass population-variance normalization of each `dim`-length row.
pub fn layer_norm(x: &[f64], dim: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(dim) {
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
        let denom = (var + eps).sqrt();
        for (i, v) in row.iter().enumerate() {
            let n = if denom == 0.0 { 0.0 } else { (v - mean) / denom };
            out.push(n * gamma[i] + beta[i]);
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// `exp(x_i) / Σ exp(x_j)` evaluated as `1 / Σ exp(x_j - x_i)`.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| 1.0 / x.iter().map(|&xj| (xj - xi).exp()).sum::<f64>())
        .collect()
}

/// Architecture knobs of the reference forward pass.
#[derive(Debug, Clone)]
pub struct NetShape {
    pub in_channels: usize,
    pub input_size: usize,
    pub patch: usize,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub eps: f64,
}

/// Image held as `[y][x][c]`.
struct Hwc {
    h: usize,
    w: usize,
    c: usize,
    v: Vec<f64>,
}

impl Hwc {
    fn at(&self, y: isize, x: isize, ch: usize) -> f64 {
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            0.0
        } else {
            self.v[(y as usize * self.w + x as usize) * self.c + ch]
        }
    }
}

fn hwc_conv(x: &Hwc, weight: &[f64], bias: &[f64], out_c: usize, k: usize, stride: usize) -> Hwc {
    let oh = (x.h - k) / stride + 1;
    let ow = (x.w - k) / stride + 1;
    let mut v = vec![0.0; oh * ow * out_c];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..out_c {
                let mut s = bias[o];
                for ky in 0..k {
                    for kx in 0..k {
                        for ic in 0..x.c {
                            s += x.at((oy * stride + ky) as isize, (ox * stride + kx) as isize, ic)
                                * weight[((o * x.c + ic) * k + ky) * k + kx];
                        }
                    }
                }
                v[(oy * ow + ox) * out_c + o] = s;
            }
        }
    }
    Hwc { h: oh, w: ow, c: out_c, v }
}

fn hwc_norm(x: &Hwc, gamma: &[f64], beta: &[f64], eps: f64) -> Hwc {
    Hwc {
        h: x.h,
        w: x.w,
        c: x.c,
        v: layer_norm(&x.v, x.c, gamma, beta, eps),
    }
}

/// ConvNeXt-style forward pass over named parameters, returning
/// `(logits, embedding)`. `input` is channel-first.
pub fn convnext_forward(shape: &NetShape, params: &HashMap<String, Vec<f64>>, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = |name: &str| -> &[f64] {
        params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    };
    let (c, n) = (shape.in_channels, shape.input_size);
    let mut x = Hwc {
        h: n,
        w: n,
        c,
        v: vec![0.0; n * n * c],
    };
    for ch in 0..c {
        for y in 0..n {
            for xx in 0..n {
                x.v[(y * n + xx) * c + ch] = input[(ch * n + y) * n + xx];
            }
        }
    }

    x = hwc_conv(&x, p("stem.conv.weight"), p("stem.conv.bias"), shape.widths[0], shape.patch, shape.patch);
    x = hwc_norm(&x, p("stem.norm.weight"), p("stem.norm.bias"), shape.eps);

    for (s, (&depth, &width)) in shape.depths.iter().zip(&shape.widths).enumerate() {
        if s > 0 {
            let d = format!("stages.{s}.downsample");
            x = hwc_norm(&x, p(&format!("{d}.norm.weight")), p(&format!("{d}.norm.bias")), shape.eps);
            x = hwc_conv(&x, p(&format!("{d}.conv.weight")), p(&format!("{d}.conv.bias")), width, 2, 2);
        }
        for b in 0..depth {
            let pre = format!("stages.{s}.blocks.{b}");
            let dw_w = p(&format!("{pre}.dwconv.weight"));
            let dw_b = p(&format!("{pre}.dwconv.bias"));
            let k = shape.kernel;
            let half = (k / 2) as isize;
            let mut dw = vec![0.0; x.v.len()];
            for y in 0..x.h {
                for xx in 0..x.w {
                    for ch in 0..x.c {
                        let mut acc = dw_b[ch];
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += x.at(y as isize + ky as isize - half, xx as isize + kx as isize - half, ch)
                                    * dw_w[(ch * k + ky) * k + kx];
                            }
                        }
                        dw[(y * x.w + xx) * x.c + ch] = acc;
                    }
                }
            }
            let normed = layer_norm(&dw, width, p(&format!("{pre}.norm.weight")), p(&format!("{pre}.norm.bias")), shape.eps);
            let hidden_dim = width * shape.mlp_ratio;
            let hidden: Vec<f64> = linear(&normed, width, p(&format!("{pre}.pwconv1.weight")), hidden_dim, p(&format!("{pre}.pwconv1.bias")))
                .into_iter()
                .map(gelu)
                .collect();
            let branch = linear(&hidden, hidden_dim, p(&format!("{pre}.pwconv2.weight")), width, p(&format!("{pre}.pwconv2.bias")));
            for (v, b) in x.v.iter_mut().zip(branch) {
                *v += b;
            }
        }
    }

    let pixels = (x.h * x.w) as f64;
    let mut pooled = vec![0.0; x.c];
    for px in x.v.chunks(x.c) {
        for (acc, v) in pooled.iter_mut().zip(px) {
            *acc += v;
        }
    }
    pooled.iter_mut().for_each(|v| *v /= pixels);
    let embedding = layer_norm(&pooled, x.c, p("norm.weight"), p("norm.bias"), shape.eps);
    let logits = linear(&embedding, x.c, p("head.weight"), shape.num_classes, p("head.bias"));
    (logits, embedding)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Scores every entry, sorts all of them (similarity desc, id asc), keeps `k`.
pub fn top_k_cosine(corpus: &[(String, Vec<f32>)], query: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = corpus
        .iter()
        .map(|(id, v)| (id.clone(), cosine(query, v)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Sobel magnitude with edge-replicated borders, computed with explicit
/// 3×3 kernels.
pub fn sobel(gray: &[u8], w: usize, h: usize) -> Vec<f64> {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (j, (rx, ry)) in KX.iter().zip(KY.iter()).enumerate() {
                let sy = (y as isize + j as isize - 1).clamp(0, h as isize - 1) as usize;
                for i in 0..3 {
                    let sx = (x as isize + i as isize - 1).clamp(0, w as isize - 1) as usize;
                    let v = gray[sy * w + sx] as f64;
                    gx += rx[i] * v;
                    gy += ry[i] * v;
                }
            }
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Background mask by repeated relaxation: a pixel joins a corner's region
/// when it matches that corner's colour within `tol` and touches the region.
/// Sweeps until nothing changes.
pub fn corner_flood_mask(px: &[u8], w: usize, h: usize, channels: usize, tol: u8) -> Vec<bool> {
    let mut total = vec![false; w * h];
    for (cx, cy) in [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)] {
        let seed = &px[(cy * w + cx) * channels..(cy * w + cx + 1) * channels];
        let ok = |i: usize| {
            (0..channels).all(|c| (px[i * channels + c] as i32 - seed[c] as i32).abs() <= tol as i32)
        };
        let mut region = vec![false; w * h];
        region[cy * w + cx] = true;
        loop {
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    if region[i] || !ok(i) {
                        continue;
                    }
                    let touches = (x > 0 && region[i - 1])
                        || (x + 1 < w && region[i + 1])
                        || (y > 0 && region[i - w])
                        || (y + 1 < h && region[i + w]);
                    if touches {
                        region[i] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for (t, r) in total.iter_mut().zip(region) {
            *t |= r;
        }
    }
    total
}

/// Percentage `correct / total` cut (not rounded) to two decimals, as text.
pub fn truncated_percent(correct: u64, total: u64) -> String {
    let bp = correct * 10_000 / total;
    format!("{}.{:02}", bp / 100, bp % 100)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_reference_values() {
        let s = softmax(&[1.0, 2.0, 3.0]);
        assert!((s[0] - 0.090_030_573).abs() < 1e-9);
        assert!((s[2] - 0.665_240_955).abs() < 1e-9);
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746).abs() < 1e-9);
    }

    #[test]
    fn truncation_is_not_rounding() {
        assert_eq!(truncated_percent(28, 33), "84.84");
        assert_eq!(truncated_percent(1, 3), "33.33");
        assert_eq!(truncated_percent(2, 3), "66.66");
    }
}
