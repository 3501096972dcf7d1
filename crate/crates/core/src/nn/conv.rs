//! 2-D cross-correlation via im2col + GEMM.

use serde::{Deserialize, Serialize};

use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding so the output is `ceil(input / stride)`.
    #[default]
    Same,
    Valid,
}

/// Spatial geometry of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::Config("kernel and stride must be positive".into()));
        }
        let axis = |n: usize| -> Result<(usize, usize)> {
            match padding {
                Padding::Same => {
                    let out = n.div_ceil(stride);
                    let total = ((out - 1) * stride + kernel).saturating_sub(n);
                    Ok((out, total / 2))
                }
                Padding::Valid => {
                    if n < kernel {
                        return Err(Error::shape(
                            "valid convolution input",
                            format!(">= {kernel}"),
                            n,
                        ));
                    }
                    Ok(((n - kernel) / stride + 1, 0))
                }
            }
        };
        let (out_h, pad_top) = axis(in_h)?;
        let (out_w, pad_left) = axis(in_w)?;
        Ok(Self {
            kernel,
            stride,
            in_h,
            in_w,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_identity_1x1(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Input index along one axis for output `o` and kernel tap `k`, if in bounds.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < len)
    }
}

/// Unfolds one sample (`channels x in_h x in_w`) into
/// `(channels * k * k) x (out_h * out_w)`.
pub(crate) fn im2col<T: Scalar>(x: &[T], channels: usize, g: &ConvGeometry, cols: &mut [T]) {
    let (k, s) = (g.kernel, g.stride);
    let plane = g.in_h * g.in_w;
    let out_len = g.out_len();
    for c in 0..channels {
        let xc = &x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * out_len..][..out_len];
                for oy in 0..g.out_h {
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    let Some(iy) = ConvGeometry::src(oy, ky, s, g.pad_top, g.in_h) else {
                        dst.fill(T::zero());
                        continue;
                    };
                    let src_row = &xc[iy * g.in_w..(iy + 1) * g.in_w];
                    if s == 1 {
                        // contiguous span with zero margins
                        let lo = g.pad_left.saturating_sub(kx).min(g.out_w);
                        let hi = (g.in_w + g.pad_left)
                            .saturating_sub(kx)
                            .min(g.out_w)
                            .max(lo);
                        dst[..lo].fill(T::zero());
                        let start = lo + kx - g.pad_left;
                        dst[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                        dst[hi..].fill(T::zero());
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = match ConvGeometry::src(ox, kx, s, g.pad_left, g.in_w) {
                                Some(ix) => src_row[ix],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], channels: usize, g: &ConvGeometry, dx: &mut [T]) {
    let (k, s) = (g.kernel, g.stride);
    let plane = g.in_h * g.in_w;
    let out_len = g.out_len();
    for c in 0..channels {
        let dxc = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * out_len..][..out_len];
                for oy in 0..g.out_h {
                    let Some(iy) = ConvGeometry::src(oy, ky, s, g.pad_top, g.in_h) else {
                        continue;
                    };
                    let src = &row[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst_row = &mut dxc[iy * g.in_w..(iy + 1) * g.in_w];
                    if s == 1 {
                        let lo = g.pad_left.saturating_sub(kx).min(g.out_w);
                        let hi = (g.in_w + g.pad_left)
                            .saturating_sub(kx)
                            .min(g.out_w)
                            .max(lo);
                        let start = lo + kx - g.pad_left;
                        for (d, v) in dst_row[start..start + (hi - lo)]
                            .iter_mut()
                            .zip(&src[lo..hi])
                        {
                            *d += *v;
                        }
                    } else {
                        for (ox, v) in src.iter().enumerate() {
                            if let Some(ix) = ConvGeometry::src(ox, kx, s, g.pad_left, g.in_w) {
                                dst_row[ix] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    out_c: usize,
    kernel: usize,
) -> Result<()> {
    let expect = out_c * input.c() * kernel * kernel;
    if weight.len() != expect {
        return Err(Error::shape(
            "convolution kernels",
            [out_c, input.c(), kernel, kernel],
            format!("{} values for {} input channels", weight.len(), input.c()),
        ));
    }
    if bias.len() != out_c {
        return Err(Error::shape("convolution bias", out_c, bias.len()));
    }
    Ok(())
}

/// `out[n][o] = bias[o] + sum_{c,ky,kx} w[o][c][ky][kx] * x_pad[n][c][y*s+ky][x*s+kx]`.
///
/// `weight` is `out_c x in_c x kernel x kernel`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<Tensor4<T>> {
    check_conv_shapes(input, weight, bias, out_c, kernel)?;
    let [n, c, h, w] = input.shape();
    let g = ConvGeometry::new(h, w, kernel, stride, padding)?;
    let rows = c * kernel * kernel;
    let out_len = g.out_len();
    let mut out = Tensor4::zeros([n, out_c, g.out_h, g.out_w]);
    let mut cols = if g.is_identity_1x1() {
        Vec::new()
    } else {
        vec![T::zero(); rows * out_len]
    };
    for i in 0..n {
        let x = input.sample(i);
        let src: &[T] = if g.is_identity_1x1() {
            x
        } else {
            im2col(x, c, &g, &mut cols);
            &cols
        };
        let y = out.sample_mut(i);
        for (o, row) in y.chunks_exact_mut(out_len).enumerate() {
            row.fill(bias[o]);
        }
        matmul(
            false,
            false,
            out_c,
            out_len,
            rows,
            T::one(),
            weight,
            src,
            T::one(),
            y,
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, kernels and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    weight: &[T],
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let [n, c, h, w] = input.shape();
    let out_c = grad_out.c();
    let g = ConvGeometry::new(h, w, kernel, stride, padding)?;
    if grad_out.shape() != [n, out_c, g.out_h, g.out_w] {
        return Err(Error::shape(
            "convolution output gradient",
            [n, out_c, g.out_h, g.out_w],
            grad_out.shape(),
        ));
    }
    if weight.len() != out_c * c * kernel * kernel {
        return Err(Error::shape(
            "convolution kernels",
            out_c * c * kernel * kernel,
            weight.len(),
        ));
    }
    let rows = c * kernel * kernel;
    let out_len = g.out_len();
    let mut grad_in = Tensor4::zeros(input.shape());
    let mut grad_w = vec![T::zero(); weight.len()];
    let mut grad_b = vec![T::zero(); out_c];
    let identity = g.is_identity_1x1();
    let mut cols = if identity {
        Vec::new()
    } else {
        vec![T::zero(); rows * out_len]
    };
    let mut dcols = if identity {
        Vec::new()
    } else {
        vec![T::zero(); rows * out_len]
    };
    for i in 0..n {
        let gy = grad_out.sample(i);
        for (o, row) in gy.chunks_exact(out_len).enumerate() {
            grad_b[o] += row.iter().copied().sum::<T>();
        }
        let x = input.sample(i);
        if identity {
            matmul(
                false,
                true,
                out_c,
                rows,
                out_len,
                T::one(),
                gy,
                x,
                T::one(),
                &mut grad_w,
            );
            matmul(
                true,
                false,
                rows,
                out_len,
                out_c,
                T::one(),
                weight,
                gy,
                T::zero(),
                grad_in.sample_mut(i),
            );
        } else {
            im2col(x, c, &g, &mut cols);
            matmul(
                false,
                true,
                out_c,
                rows,
                out_len,
                T::one(),
                gy,
                &cols,
                T::one(),
                &mut grad_w,
            );
            matmul(
                true,
                false,
                rows,
                out_len,
                out_c,
                T::one(),
                weight,
                gy,
                T::zero(),
                &mut dcols,
            );
            col2im(&dcols, c, &g, grad_in.sample_mut(i));
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rng: &mut crate::rng::Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    /// Direct six-loop definition.
    fn naive(
        x: &Tensor4<f64>,
        w: &[f64],
        b: &[f64],
        oc: usize,
        k: usize,
        s: usize,
        p: Padding,
    ) -> Tensor4<f64> {
        let [n, c, h, wd] = x.shape();
        let g = ConvGeometry::new(h, wd, k, s, p).unwrap();
        let mut out = Tensor4::zeros([n, oc, g.out_h, g.out_w]);
        let ol = g.out_len();
        for i in 0..n {
            for o in 0..oc {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = b[o];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - g.pad_top as isize;
                                    let ix = (ox * s + kx) as isize - g.pad_left as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd
                                    {
                                        acc += w[((o * c + ci) * k + ky) * k + kx]
                                            * x.at(i, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out.sample_mut(i)[o * ol + oy * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn geometry() {
        let g = ConvGeometry::new(5, 5, 3, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (5, 5, 1));
        let g = ConvGeometry::new(128, 128, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (64, 0));
        let g = ConvGeometry::new(7, 7, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 1));
        let g = ConvGeometry::new(5, 5, 3, 1, Padding::Valid).unwrap();
        assert_eq!(g.out_h, 3);
        assert!(ConvGeometry::new(2, 2, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn identity_kernel_same_padding() {
        let mut rng = crate::rng::stream(1, 0);
        let x = Tensor4::from_vec([2, 1, 4, 5], random(&mut rng, 40)).unwrap();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let y = conv2d_forward(&x, &w, &[0.0], 1, 3, 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_over_constant_is_nine_c() {
        let x = Tensor4::from_vec([1, 1, 5, 5], vec![2.5f64; 25]).unwrap();
        let y = conv2d_forward(&x, &[1.0; 9], &[0.0], 1, 3, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert!(y.as_slice().iter().all(|&v| (v - 22.5).abs() < 1e-12));
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = crate::rng::stream(2, 0);
        for (s, p, h, w) in [
            (1, Padding::Same, 5, 5),
            (2, Padding::Same, 7, 6),
            (1, Padding::Valid, 5, 4),
            (2, Padding::Valid, 6, 7),
        ] {
            let x = Tensor4::from_vec([1, 2, h, w], random(&mut rng, 2 * h * w)).unwrap();
            let wt = random(&mut rng, 3 * 2 * 9);
            let b = random(&mut rng, 3);
            let got = conv2d_forward(&x, &wt, &b, 3, 3, s, p).unwrap();
            let want = naive(&x, &wt, &b, 3, 3, s, p);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.as_slice().iter().zip(want.as_slice()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_grad_gives_zero_gradients_and_bias_counts_positions() {
        let mut rng = crate::rng::stream(3, 0);
        let x = Tensor4::from_vec([2, 2, 4, 4], random(&mut rng, 64)).unwrap();
        let w = random(&mut rng, 3 * 2 * 9);
        let zero = Tensor4::zeros([2, 3, 4, 4]);
        let (gi, gw, gb) = conv2d_backward(&zero, &x, &w, 3, 1, Padding::Same).unwrap();
        assert!(gi
            .as_slice()
            .iter()
            .chain(&gw)
            .chain(&gb)
            .all(|&v: &f64| v == 0.0));

        let ones = Tensor4::from_vec([2, 3, 4, 4], vec![1.0; 96]).unwrap();
        let (_, _, gb) = conv2d_backward(&ones, &x, &w, 3, 1, Padding::Same).unwrap();
        assert!(gb.iter().all(|&v| v == 32.0));
    }

    #[test]
    fn shape_errors() {
        let x = Tensor4::<f64>::zeros([1, 2, 4, 4]);
        assert!(conv2d_forward(&x, &[0.0; 9], &[0.0], 1, 3, 1, Padding::Same).is_err());
        assert!(conv2d_forward(&x, &[0.0; 18], &[0.0; 2], 1, 3, 1, Padding::Same).is_err());
    }
}
