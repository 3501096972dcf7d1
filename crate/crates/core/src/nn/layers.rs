//! Parameter-free layers and the dense layer.

use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};

pub fn relu_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `mask` is the forward input or output; both have the same sign pattern.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor4<T>, mask: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad_out.shape() != mask.shape() {
        return Err(Error::shape(
            "relu gradient",
            mask.shape(),
            grad_out.shape(),
        ));
    }
    let data = grad_out
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .map(|(&g, &m)| if m > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(grad_out.shape(), data)
}

/// Output spatial size of 2x2 pooling; odd trailing rows/columns are dropped.
pub fn pooled_size(h: usize, w: usize) -> Result<(usize, usize)> {
    if h < 2 || w < 2 {
        return Err(Error::shape(
            "maxpool2x2 input",
            "height and width >= 2",
            [h, w],
        ));
    }
    Ok((h / 2, w / 2))
}

/// 2x2 max pooling with stride 2. Returns the output and, per output
/// element, the flat in-plane index of the selected input.
///
/// Ties go to the first element in row-major order within the window.
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, c, h, w] = input.shape();
    let (oh, ow) = pooled_size(h, w)?;
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let mut k = 0;
    for i in 0..n {
        let x = input.sample(i);
        let y = out.sample_mut(i);
        for ch in 0..c {
            let xc = &x[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if xc[cand] > xc[best] {
                            best = cand;
                        }
                    }
                    y[(ch * oh + oy) * ow + ox] = xc[best];
                    arg[k] = best as u32;
                    k += 1;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    argmax: &[u32],
    input_shape: [usize; 4],
) -> Result<Tensor4<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool gradient",
            argmax.len(),
            grad_out.len(),
        ));
    }
    let [n, c, h, w] = input_shape;
    let out_plane = grad_out.h() * grad_out.w();
    let mut grad_in = Tensor4::zeros(input_shape);
    let gin = grad_in.as_mut_slice();
    for (k, (&g, &a)) in grad_out.as_slice().iter().zip(argmax).enumerate() {
        let plane_idx = k / out_plane;
        debug_assert!(plane_idx < n * c);
        gin[plane_idx * h * w + a as usize] += g;
    }
    Ok(grad_in)
}

/// Channel means over space, shaped `[batch][channels][1][1]`.
pub fn global_avg_pool_forward<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let inv = T::lit(1.0 / plane as f64);
    let data = input
        .as_slice()
        .chunks_exact(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor4::from_vec([n, c, 1, 1], data).expect("pooled shape")
}

pub fn global_avg_pool_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input_shape: [usize; 4],
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = input_shape;
    if grad_out.len() != n * c {
        return Err(Error::shape(
            "global average pool gradient",
            [n, c],
            grad_out.shape(),
        ));
    }
    let plane = h * w;
    let inv = T::lit(1.0 / plane as f64);
    let mut data = Vec::with_capacity(n * c * plane);
    for &g in grad_out.as_slice() {
        data.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor4::from_vec(input_shape, data)
}

/// Fully connected layer over the flattened sample; `weight` is `out x features`.
/// Output shape is `[batch][out][1][1]`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    out: usize,
) -> Result<Tensor4<T>> {
    let (n, f) = (input.n(), input.sample_len());
    if weight.len() != out * f {
        return Err(Error::shape("dense weights", [out, f], weight.len()));
    }
    if bias.len() != out {
        return Err(Error::shape("dense bias", out, bias.len()));
    }
    let mut y: Vec<T> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    matmul(
        false,
        true,
        n,
        out,
        f,
        T::one(),
        input.as_slice(),
        weight,
        T::one(),
        &mut y,
    );
    Tensor4::from_vec([n, out, 1, 1], y)
}

/// Gradients `(input, weight, bias)`.
pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    weight: &[T],
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let (n, f) = (input.n(), input.sample_len());
    let out = grad_out.sample_len();
    if grad_out.n() != n || weight.len() != out * f {
        return Err(Error::shape("dense gradient", [n, out], grad_out.shape()));
    }
    let gy = grad_out.as_slice();
    let mut gx = vec![T::zero(); n * f];
    matmul(
        false,
        false,
        n,
        f,
        out,
        T::one(),
        gy,
        weight,
        T::zero(),
        &mut gx,
    );
    let mut gw = vec![T::zero(); out * f];
    matmul(
        true,
        false,
        out,
        f,
        n,
        T::one(),
        gy,
        input.as_slice(),
        T::zero(),
        &mut gw,
    );
    let mut gb = vec![T::zero(); out];
    for row in gy.chunks_exact(out) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((Tensor4::from_vec(input.shape(), gx)?, gw, gb))
}
