//! Forward and backward kernels. Everything here is a pure function of its
//! arguments; the tape in `tape.rs` sequences them.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn new(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<(Self, usize)> {
        let (c, h, w) = input.dims3()?;
        let (co, kc, kh, kw) = match kernel.shape()[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::shape(format!("kernel must be [Co,C,k,k], got {:?}", kernel.shape()))),
        };
        if kc != c {
            return Err(Error::shape(format!("kernel expects {kc} input channels, input has {c}")));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape(format!("kernel must be square with odd extent, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kh {
            return Err(Error::shape(format!("input {h}x{w} smaller than kernel {kh} with pad {pad}")));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kh) / stride + 1;
        Ok((ConvGeom { c, h, w, k: kh, stride, pad, ho, wo }, co))
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.cols();
    let mut cols = vec![0.0; g.rows() * n];
    for c in 0..g.c {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.cols();
    let mut out = vec![0.0; g.c * g.h * g.w];
    for c in 0..g.c {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            prow[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `c[m,n] = a[m,k] · b[k,n] (+ c if accumulate)` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds checked above; strides describe dense row-/column-major views of those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Saved state from a convolution forward pass, reused by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ConvSaved {
    pub geom: ConvGeom,
    pub cols: Vec<f64>,
}

pub(crate) fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, ConvSaved)> {
    let (g, co) = ConvGeom::new(input, kernel, stride, pad)?;
    if let Some(b) = bias {
        if b.len() != co {
            return Err(Error::shape(format!("bias has {} entries for {co} output channels", b.len())));
        }
    }
    let cols = im2col(input.data(), &g);
    let n = g.cols();
    let kk = g.rows();
    let mut out = vec![0.0; co * n];
    if let Some(b) = bias {
        for (o, &bv) in b.data().iter().enumerate() {
            out[o * n..(o + 1) * n].fill(bv);
        }
    }
    gemm(co, kk, n, kernel.data(), (kk, 1), &cols, (n, 1), &mut out, bias.is_some());
    let out = Tensor::new(vec![co, g.ho, g.wo], out)?;
    out.ensure_finite("conv2d output")?;
    Ok((out, ConvSaved { geom: g, cols }))
}

/// Gradients of a convolution: `(d_input, d_kernel, d_bias)`. `d_input` is only
/// computed when requested.
pub(crate) fn conv2d_backward(
    saved: &ConvSaved,
    kernel: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let g = &saved.geom;
    let co = kernel.shape()[0];
    let n = g.cols();
    let kk = g.rows();
    let go = grad_out.data();

    let mut dk = vec![0.0; co * kk];
    // dK[co, kk] = dOut[co, n] · cols^T[n, kk]
    gemm(co, n, kk, go, (n, 1), &saved.cols, (1, n), &mut dk, false);
    let db: Vec<f64> = (0..co).map(|o| go[o * n..(o + 1) * n].iter().sum()).collect();

    let d_input = want_input.then(|| {
        let mut dcols = vec![0.0; kk * n];
        // dcols[kk, n] = K^T[kk, co] · dOut[co, n]
        gemm(kk, co, n, kernel.data(), (1, kk), go, (n, 1), &mut dcols, false);
        Tensor::new(vec![g.c, g.h, g.w], col2im(&dcols, g)).expect("conv input shape")
    });
    (
        d_input,
        Tensor::new(kernel.shape().to_vec(), dk).expect("kernel shape"),
        Tensor::new(vec![co], db).expect("bias shape"),
    )
}

/// 2-D convolution of a `[C,H,W]` raster with a `[Co,C,k,k]` kernel, no bias.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    conv2d_forward(input, kernel, None, stride, pad).map(|(out, _)| out)
}

/// Sampling table for one axis of a half-pixel-centred bilinear resize.
#[derive(Debug, Clone)]
pub(crate) struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

fn axis_taps(input: usize, output: usize) -> AxisTaps {
    let ratio = input as f64 / output as f64;
    let mut taps =
        AxisTaps { lo: Vec::with_capacity(output), hi: Vec::with_capacity(output), frac: Vec::with_capacity(output) };
    for o in 0..output {
        let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(input - 1);
        let hi = (lo + 1).min(input - 1);
        let frac = if lo == hi { 0.0 } else { src - lo as f64 };
        taps.lo.push(lo);
        taps.hi.push(hi);
        taps.frac.push(frac);
    }
    taps
}

/// Bilinear resize of a `[C,H,W]` raster to `out_h x out_w` (align-corners off).
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    if out_h == h && out_w == w {
        return Ok(input.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let src = input.data();
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for ox in 0..out_w {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

pub(crate) fn resize_bilinear_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (c, out_h, out_w) = grad_out.dims3().expect("resize grad is a raster");
    if out_h == in_h && out_w == in_w {
        return grad_out.clone();
    }
    let ty = axis_taps(in_h, out_h);
    let tx = axis_taps(in_w, out_w);
    let g = grad_out.data();
    let mut out = vec![0.0; c * in_h * in_w];
    for ch in 0..c {
        let src = &g[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        let plane = &mut out[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for oy in 0..out_h {
            let (y0, y1, fy) = (ty.lo[oy], ty.hi[oy], ty.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let v = src[oy * out_w + ox];
                plane[y0 * in_w + x0] += v * (1.0 - fy) * (1.0 - fx);
                plane[y0 * in_w + x1] += v * (1.0 - fy) * fx;
                plane[y1 * in_w + x0] += v * fy * (1.0 - fx);
                plane[y1 * in_w + x1] += v * fy * fx;
            }
        }
    }
    Tensor::new(vec![c, in_h, in_w], out).expect("resize grad shape")
}

/// Output extent of a resize by `scale`.
pub fn scaled_extent(extent: usize, scale: f64) -> usize {
    (extent as f64 * scale).round() as usize
}

/// Bilinear resize by a positive scale factor; scale 1.0 returns the input unchanged.
pub fn bilinear_resize(input: &Tensor, scale: f64) -> Result<Tensor> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("resize scale must be positive, got {scale}")));
    }
    let (_, h, w) = input.dims3()?;
    resize_bilinear(input, scaled_extent(h, scale), scaled_extent(w, scale))
}

/// Softmax over the leading (class) axis; trailing axes are independent locations.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    input.ensure_finite("softmax input")?;
    let c = *input.shape().first().ok_or_else(|| Error::shape("softmax of empty shape"))?;
    if c == 0 {
        return Err(Error::shape("softmax over zero classes"));
    }
    let n = input.len() / c;
    let x = input.data();
    let mut out = vec![0.0; input.len()];
    let mut max = vec![f64::NEG_INFINITY; n];
    for k in 0..c {
        for (m, &v) in max.iter_mut().zip(&x[k * n..(k + 1) * n]) {
            *m = m.max(v);
        }
    }
    let mut denom = vec![0.0; n];
    for k in 0..c {
        let row = &mut out[k * n..(k + 1) * n];
        for p in 0..n {
            let e = (x[k * n + p] - max[p]).exp();
            row[p] = e;
            denom[p] += e;
        }
    }
    for k in 0..c {
        for p in 0..n {
            out[k * n + p] /= denom[p];
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Vector-Jacobian product of softmax given its output `y`.
pub(crate) fn softmax_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let c = y.shape()[0];
    let n = y.len() / c;
    let (yd, g) = (y.data(), grad_out.data());
    let mut dot = vec![0.0; n];
    for k in 0..c {
        for p in 0..n {
            dot[p] += yd[k * n + p] * g[k * n + p];
        }
    }
    Tensor::from_fn(y.shape(), |i| yd[i] * (g[i] - dot[i % n]))
}

/// `softmax((logits + noise) / temperature)` over the class axis.
pub fn gumbel_softmax(logits: &Tensor, temperature: f64, noise: &Tensor) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("gumbel temperature must be > 0, got {temperature}")));
    }
    if logits.shape() != noise.shape() {
        return Err(Error::shape(format!("noise {:?} does not match logits {:?}", noise.shape(), logits.shape())));
    }
    let (l, z) = (logits.data(), noise.data());
    let perturbed = Tensor::from_fn(logits.shape(), |i| (l[i] + z[i]) / temperature);
    softmax(&perturbed)
}

/// Per-pixel boundary magnitude `sqrt(sum_c (Dx y_c)^2 + (Dy y_c)^2)` using
/// central differences with replicate padding. Output shape is `[H, W]`.
pub fn spatial_gradient_norm(mask: &Tensor) -> Result<Tensor> {
    let (c, h, w) = mask.dims3()?;
    let m = mask.data();
    let mut sq = vec![0.0; h * w];
    for ch in 0..c {
        let plane = &m[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let dx = 0.5 * (plane[y * w + xr] - plane[y * w + xl]);
                let dy = 0.5 * (plane[yd * w + x] - plane[yu * w + x]);
                sq[y * w + x] += dx * dx + dy * dy;
            }
        }
    }
    Tensor::new(vec![h, w], sq.into_iter().map(f64::sqrt).collect())
}

/// Backward of [`spatial_gradient_norm`]. Where the norm is exactly zero the
/// subgradient 0 is used.
pub(crate) fn spatial_gradient_norm_backward(mask: &Tensor, norm: &Tensor, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = mask.dims3().expect("mask raster");
    let (m, n, g) = (mask.data(), norm.data(), grad_out.data());
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &m[ch * h * w..(ch + 1) * h * w];
        let dplane = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let p = y * w + x;
                if n[p] == 0.0 || g[p] == 0.0 {
                    continue;
                }
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let dx = 0.5 * (plane[y * w + xr] - plane[y * w + xl]);
                let dy = 0.5 * (plane[yd * w + x] - plane[yu * w + x]);
                let s = g[p] / n[p];
                // d norm / d dx = dx / norm; d dx / d plane[xr] = 0.5, d plane[xl] = -0.5.
                dplane[y * w + xr] += s * dx * 0.5;
                dplane[y * w + xl] -= s * dx * 0.5;
                dplane[yd * w + x] += s * dy * 0.5;
                dplane[yu * w + x] -= s * dy * 0.5;
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("mask shape")
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_fn(input.shape(), |i| input.data()[i].max(0.0))
}
