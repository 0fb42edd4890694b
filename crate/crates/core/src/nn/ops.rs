//! Forward and backward kernels for the primitive operations. Backward
//! functions accumulate into parameter gradients and return input gradients.

use crate::error::{DmaeError, Result};
use crate::nn::{gemm, Param, Real, Tensor, Trans};

/// `y = x W + b` over the trailing axis of `x`.
pub fn linear<S: Real>(x: &Tensor<S>, weight: &Param<S>, bias: &Param<S>) -> Result<Tensor<S>> {
    let (d_in, d_out) = check_linear(x, weight, bias)?;
    let rows = x.len() / d_in;
    let mut y = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        y.extend_from_slice(bias.value.data());
    }
    gemm(
        Trans::No,
        Trans::No,
        rows,
        d_in,
        d_out,
        S::one(),
        x.data(),
        weight.value.data(),
        S::one(),
        &mut y,
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("checked rank") = d_out;
    Tensor::from_vec(&shape, y)
}

/// Backward of [`linear`]; accumulates into `weight.grad` and `bias.grad`.
pub fn linear_backward<S: Real>(
    x: &Tensor<S>,
    weight: &mut Param<S>,
    bias: &mut Param<S>,
    grad_y: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (d_in, d_out) = check_linear(x, weight, bias)?;
    let rows = x.len() / d_in;
    if grad_y.len() != rows * d_out {
        return Err(DmaeError::dim("linear grad", rows * d_out, grad_y.len()));
    }
    gemm(
        Trans::Yes,
        Trans::No,
        d_in,
        rows,
        d_out,
        S::one(),
        x.data(),
        grad_y.data(),
        S::one(),
        weight.grad.data_mut(),
    );
    let gb = bias.grad.data_mut();
    for row in grad_y.data().chunks(d_out) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut gx = Tensor::zeros(x.shape());
    gemm(
        Trans::No,
        Trans::Yes,
        rows,
        d_out,
        d_in,
        S::one(),
        grad_y.data(),
        weight.value.data(),
        S::zero(),
        gx.data_mut(),
    );
    Ok(gx)
}

fn check_linear<S: Real>(x: &Tensor<S>, weight: &Param<S>, bias: &Param<S>) -> Result<(usize, usize)> {
    if weight.value.ndim() != 2 {
        return Err(DmaeError::dim("linear weight", "rank 2", weight.value.ndim()));
    }
    let (d_in, d_out) = (weight.value.dim(0), weight.value.dim(1));
    if bias.value.shape() != [d_out] {
        return Err(DmaeError::dim("linear bias", format!("[{d_out}]"), format!("{:?}", bias.value.shape())));
    }
    match x.shape().last() {
        Some(&d) if d == d_in => Ok((d_in, d_out)),
        other => Err(DmaeError::dim("linear input", format!("trailing dim {d_in}"), format!("{other:?}"))),
    }
}

/// Zero-padded dilated tap matrix: `col[(i*k + j), t] = x[i, t - (k-1-j)*d]`.
/// Unrolled causal taps, `[c_in * k, T]`. Built by appending so the buffer is
/// never zero-filled first.
fn im2col<S: Real>(x: &[S], c_in: usize, len: usize, k: usize, dilation: usize) -> Vec<S> {
    let mut col = Vec::with_capacity(c_in * k * len);
    for i in 0..c_in {
        let row = &x[i * len..(i + 1) * len];
        for j in 0..k {
            let cut = ((k - 1 - j) * dilation).min(len);
            col.extend(std::iter::repeat(S::zero()).take(cut));
            col.extend_from_slice(&row[..len - cut]);
        }
    }
    col
}

fn col2im_add<S: Real>(col: &[S], c_in: usize, len: usize, k: usize, dilation: usize, gx: &mut [S]) {
    for i in 0..c_in {
        let out = &mut gx[i * len..(i + 1) * len];
        for j in 0..k {
            let shift = (k - 1 - j) * dilation;
            if shift >= len {
                continue;
            }
            let src = &col[(i * k + j) * len..(i * k + j + 1) * len];
            for (g, &v) in out[..len - shift].iter_mut().zip(&src[shift..]) {
                *g += v;
            }
        }
    }
}

/// Shape of a convolution call on one `[c_in, T]` slab.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub len: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 {
            return Err(DmaeError::Config("dilation must be a positive integer".into()));
        }
        if self.kernel_size == 0 {
            return Err(DmaeError::Config("kernel size must be positive".into()));
        }
        Ok(())
    }
}

/// Slice-level causal convolution: writes `[c_out, T]` into `out`.
pub fn conv1d_forward<S: Real>(g: ConvGeometry, x: &[S], kernel: &[S], out: &mut [S]) {
    let col = im2col(x, g.c_in, g.len, g.kernel_size, g.dilation);
    gemm(
        Trans::No,
        Trans::No,
        g.c_out,
        g.c_in * g.kernel_size,
        g.len,
        S::one(),
        kernel,
        &col,
        S::zero(),
        out,
    );
}

/// Slice-level backward: overwrites `grad_kernel`, accumulates into `grad_x`.
pub fn conv1d_backward<S: Real>(
    g: ConvGeometry,
    x: &[S],
    kernel: &[S],
    grad_y: &[S],
    grad_kernel: &mut [S],
    grad_x: &mut [S],
) {
    let ck = g.c_in * g.kernel_size;
    let mut col = im2col(x, g.c_in, g.len, g.kernel_size, g.dilation);
    gemm(
        Trans::No,
        Trans::Yes,
        g.c_out,
        g.len,
        ck,
        S::one(),
        grad_y,
        &col,
        S::zero(),
        grad_kernel,
    );
    gemm(
        Trans::Yes,
        Trans::No,
        ck,
        g.c_out,
        g.len,
        S::one(),
        kernel,
        grad_y,
        S::zero(),
        &mut col,
    );
    col2im_add(&col, g.c_in, g.len, g.kernel_size, g.dilation, grad_x);
}

fn conv_geometry<S: Real>(x: &Tensor<S>, kernel: &Tensor<S>, dilation: usize) -> Result<ConvGeometry> {
    if x.ndim() != 2 {
        return Err(DmaeError::dim("conv input", "[c_in, T]", format!("{:?}", x.shape())));
    }
    if kernel.ndim() != 3 {
        return Err(DmaeError::dim("conv kernel", "[c_out, c_in, k]", format!("{:?}", kernel.shape())));
    }
    if kernel.dim(1) != x.dim(0) {
        return Err(DmaeError::dim("conv kernel", format!("c_in = {}", x.dim(0)), kernel.dim(1)));
    }
    let g = ConvGeometry {
        c_in: x.dim(0),
        c_out: kernel.dim(0),
        kernel_size: kernel.dim(2),
        dilation,
        len: x.dim(1),
    };
    g.validate()?;
    Ok(g)
}

/// Causal dilated convolution with left zero padding of `(k-1)*dilation`.
pub fn causal_dilated_conv1d<S: Real>(x: &Tensor<S>, kernel: &Tensor<S>, dilation: usize) -> Result<Tensor<S>> {
    let g = conv_geometry(x, kernel, dilation)?;
    let mut out = Tensor::zeros(&[g.c_out, g.len]);
    conv1d_forward(g, x.data(), kernel.data(), out.data_mut());
    Ok(out)
}

/// Returns `(grad_x, grad_kernel)`.
pub fn causal_dilated_conv1d_backward<S: Real>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    dilation: usize,
    grad_y: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let g = conv_geometry(x, kernel, dilation)?;
    grad_y.expect_shape("conv grad", &[g.c_out, g.len])?;
    let mut gx = Tensor::zeros(x.shape());
    let mut gk = Tensor::zeros(kernel.shape());
    conv1d_backward(g, x.data(), kernel.data(), grad_y.data(), gk.data_mut(), gx.data_mut());
    Ok((gx, gk))
}

/// `w_i = exp(s_i / T) / sum_j exp(s_j / T)`, max-shifted.
pub fn softmax_tempered<S: Real>(scores: &[S], temperature: S) -> Result<Vec<S>> {
    if !(temperature > S::zero()) {
        return Err(DmaeError::Config(format!("softmax temperature must be > 0, got {temperature}")));
    }
    if scores.is_empty() {
        return Err(DmaeError::dim("softmax scores", "non-empty", 0));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(DmaeError::Contract("softmax scores must be finite".into()));
    }
    Ok(softmax_unchecked(scores, temperature))
}

pub(crate) fn softmax_unchecked<S: Real>(scores: &[S], temperature: S) -> Vec<S> {
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let mut w: Vec<S> = scores.iter().map(|&s| ((s - max) / temperature).exp()).collect();
    let total: S = w.iter().copied().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Gradient w.r.t. the scores given the softmax output and upstream gradient.
pub fn softmax_tempered_backward<S: Real>(weights: &[S], grad_w: &[S], temperature: S) -> Vec<S> {
    let dot: S = weights.iter().zip(grad_w).map(|(&w, &g)| w * g).sum();
    weights
        .iter()
        .zip(grad_w)
        .map(|(&w, &g)| w * (g - dot) / temperature)
        .collect()
}

/// Arithmetic mean along `axis`; the axis is kept with size 1.
pub fn avg_pool_over_axis<S: Real>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    if axis >= x.ndim() {
        return Err(DmaeError::dim("pool axis", format!("< {}", x.ndim()), axis));
    }
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = 1;
    let mut out = Tensor::zeros(&out_shape);
    let scale = S::one() / S::of(n as f64);
    let src = x.data();
    let dst = out.data_mut();
    for o in 0..outer {
        for a in 0..n {
            let base = (o * n + a) * inner;
            for i in 0..inner {
                dst[o * inner + i] += src[base + i];
            }
        }
        for i in 0..inner {
            dst[o * inner + i] *= scale;
        }
    }
    Ok(out)
}

/// Spreads a pooled gradient uniformly back over the reduced axis.
pub fn avg_pool_over_axis_backward<S: Real>(input_shape: &[usize], axis: usize, grad: &Tensor<S>) -> Tensor<S> {
    let outer: usize = input_shape[..axis].iter().product();
    let n = input_shape[axis];
    let inner: usize = input_shape[axis + 1..].iter().product();
    let scale = S::one() / S::of(n as f64);
    let mut gx = Tensor::zeros(input_shape);
    let g = grad.data();
    let dst = gx.data_mut();
    for o in 0..outer {
        for a in 0..n {
            for i in 0..inner {
                dst[(o * n + a) * inner + i] = g[o * inner + i] * scale;
            }
        }
    }
    gx
}

/// `y += a * x` and returns `c · x` in the same pass, with eight
/// independent accumulators so it vectorizes.
pub(crate) fn axpy_dot<S: Real>(y: &mut [S], a: S, x: &[S], c: &[S]) -> S {
    debug_assert!(y.len() == x.len() && c.len() == x.len());
    let split = x.len() - x.len() % 8;
    let mut acc = [S::zero(); 8];
    for ((y, x), c) in y[..split].chunks_exact_mut(8).zip(x[..split].chunks_exact(8)).zip(c[..split].chunks_exact(8)) {
        for l in 0..8 {
            y[l] += a * x[l];
            acc[l] += c[l] * x[l];
        }
    }
    let mut tail = S::zero();
    for ((y, &x), &c) in y[split..].iter_mut().zip(&x[split..]).zip(&c[split..]) {
        *y += a * x;
        tail += c * x;
    }
    acc.iter().copied().sum::<S>() + tail
}

pub(crate) fn relu_in_place<S: Real>(x: &mut [S]) {
    for v in x {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Zeroes gradient entries whose activation was clamped.
pub(crate) fn relu_mask_grad<S: Real>(activation: &[S], grad: &mut [S]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= S::zero() {
            *g = S::zero();
        }
    }
}
