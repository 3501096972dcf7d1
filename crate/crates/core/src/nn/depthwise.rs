//! Per-channel spatial convolution and the depthwise-separable composite.

use super::conv::{conv2d_forward, ConvGeometry, Padding};
use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check<T: Scalar>(input: &Tensor4<T>, weight: &[T], bias: &[T], kernel: usize) -> Result<()> {
    let c = input.c();
    if weight.len() != c * kernel * kernel {
        return Err(Error::shape(
            "depthwise kernels",
            [c, kernel, kernel],
            format!("{} values", weight.len()),
        ));
    }
    if bias.len() != c {
        return Err(Error::shape("depthwise bias", c, bias.len()));
    }
    Ok(())
}

/// Each channel is convolved with its own `kernel x kernel` filter.
pub fn depthwise_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4<T>> {
    check(input, weight, bias, kernel)?;
    let [n, c, h, w] = input.shape();
    let g = ConvGeometry::new(h, w, kernel, stride, padding)?;
    let mut out = Tensor4::zeros([n, c, g.out_h, g.out_w]);
    let (plane, out_len) = (h * w, g.out_len());
    for i in 0..n {
        let x = input.sample(i);
        let y = out.sample_mut(i);
        for ch in 0..c {
            let xc = &x[ch * plane..(ch + 1) * plane];
            let yc = &mut y[ch * out_len..(ch + 1) * out_len];
            yc.fill(bias[ch]);
            let wc = &weight[ch * kernel * kernel..(ch + 1) * kernel * kernel];
            for_each_tap(&g, |o, src, tap| yc[o] += wc[tap] * xc[src]);
        }
    }
    Ok(out)
}

/// Gradients of [`depthwise_forward`]: `(input, kernels, bias)`.
pub fn depthwise_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    weight: &[T],
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let [n, c, h, w] = input.shape();
    let g = ConvGeometry::new(h, w, kernel, stride, padding)?;
    if grad_out.shape() != [n, c, g.out_h, g.out_w] {
        return Err(Error::shape(
            "depthwise output gradient",
            [n, c, g.out_h, g.out_w],
            grad_out.shape(),
        ));
    }
    if weight.len() != c * kernel * kernel {
        return Err(Error::shape(
            "depthwise kernels",
            c * kernel * kernel,
            weight.len(),
        ));
    }
    let (plane, out_len) = (h * w, g.out_len());
    let mut grad_in = Tensor4::zeros(input.shape());
    let mut grad_w = vec![T::zero(); weight.len()];
    let mut grad_b = vec![T::zero(); c];
    for i in 0..n {
        let x = input.sample(i);
        let gy = grad_out.sample(i);
        let gx = grad_in.sample_mut(i);
        for ch in 0..c {
            let xc = &x[ch * plane..(ch + 1) * plane];
            let gyc = &gy[ch * out_len..(ch + 1) * out_len];
            let gxc = &mut gx[ch * plane..(ch + 1) * plane];
            let wc = &weight[ch * kernel * kernel..(ch + 1) * kernel * kernel];
            let gwc = &mut grad_w[ch * kernel * kernel..(ch + 1) * kernel * kernel];
            grad_b[ch] += gyc.iter().copied().sum::<T>();
            for_each_tap(&g, |o, src, tap| {
                gwc[tap] += gyc[o] * xc[src];
                gxc[src] += gyc[o] * wc[tap];
            });
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

/// Calls `f(output_index, input_index, tap_index)` for every in-bounds tap.
#[inline]
fn for_each_tap(g: &ConvGeometry, mut f: impl FnMut(usize, usize, usize)) {
    let k = g.kernel;
    for oy in 0..g.out_h {
        for ky in 0..k {
            let Some(iy) = (oy * g.stride + ky)
                .checked_sub(g.pad_top)
                .filter(|&v| v < g.in_h)
            else {
                continue;
            };
            for ox in 0..g.out_w {
                for kx in 0..k {
                    if let Some(ix) = (ox * g.stride + kx)
                        .checked_sub(g.pad_left)
                        .filter(|&v| v < g.in_w)
                    {
                        f(oy * g.out_w + ox, iy * g.in_w + ix, ky * k + kx);
                    }
                }
            }
        }
    }
}

/// 1x1 convolution mixing channels; `weight` is `out_c x in_c`.
pub fn pointwise_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    out_c: usize,
) -> Result<Tensor4<T>> {
    conv2d_forward(input, weight, bias, out_c, 1, 1, Padding::Valid)
}

/// Depthwise 3x3 followed by pointwise 1x1.
#[allow(clippy::too_many_arguments)]
pub fn depthwise_separable_forward<T: Scalar>(
    input: &Tensor4<T>,
    depthwise: &[T],
    depthwise_bias: &[T],
    pointwise: &[T],
    pointwise_bias: &[T],
    out_c: usize,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4<T>> {
    let mid = depthwise_forward(input, depthwise, depthwise_bias, 3, stride, padding)?;
    pointwise_forward(&mid, pointwise, pointwise_bias, out_c)
}

/// Parameter count of a separable block, biases excluded.
pub fn separable_weight_count(in_c: usize, out_c: usize) -> usize {
    in_c * 9 + out_c * in_c
}
