//! Hann window, radix-2 FFT and framed power spectra.

use crate::array::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Periodic Hann window: `w[k] = 0.5 * (1 - cos(2*pi*k/n))`, i.e. the first
/// `n` points of the symmetric `(n+1)`-point window.
pub fn hann_window<T: Scalar>(n: usize) -> Vec<T> {
    assert!(n >= 1, "window length must be positive");
    let step = T::TAU() / T::from_usize(n).unwrap();
    let half = T::lit(0.5);
    (0..n)
        .map(|k| half * (T::one() - (step * T::from_usize(k).unwrap()).cos()))
        .collect()
}

/// In-place iterative radix-2 complex FFT of a fixed power-of-two size.
#[derive(Debug, Clone)]
pub struct Fft<T> {
    n: usize,
    cos: Vec<T>,
    sin: Vec<T>,
    bitrev: Vec<u32>,
}

impl<T: Scalar> Fft<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Config(format!("FFT size {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n as u32)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (32 - bits)
                }
            })
            .collect();
        // twiddles are evaluated in f64 so f32 plans are not limited by f32 trig
        let (cos, sin) = (0..n / 2)
            .map(|k| {
                let a = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (T::lit(a.cos()), T::lit(a.sin()))
            })
            .unzip();
        Ok(Self {
            n,
            cos,
            sin,
            bitrev,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward transform `X[k] = sum_t x[t] exp(-2 pi i k t / n)`.
    pub fn forward(&self, re: &mut [T], im: &mut [T]) {
        let n = self.n;
        assert!(re.len() == n && im.len() == n, "fft buffer length");
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * stride], self.sin[k * stride]);
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

/// Windowed, zero-padded power spectra `|X[k]|^2`, `k in 0..=fft_size/2`, one
/// row per frame.
pub fn power_spectrum<T: Scalar>(
    frames: &Matrix<T>,
    window: &[T],
    fft_size: usize,
) -> Result<Matrix<T>> {
    let fft = Fft::new(fft_size)?;
    power_spectrum_with(&fft, frames, window)
}

pub(crate) fn power_spectrum_with<T: Scalar>(
    fft: &Fft<T>,
    frames: &Matrix<T>,
    window: &[T],
) -> Result<Matrix<T>> {
    let n = fft.len();
    let wlen = frames.cols();
    if window.len() != wlen {
        return Err(Error::shape("analysis window", wlen, window.len()));
    }
    if wlen > n {
        return Err(Error::Config(format!(
            "FFT size {n} is smaller than the {wlen}-sample window"
        )));
    }
    let bins = n / 2 + 1;
    let mut out = Matrix::zeros(frames.rows(), bins);
    let mut re = vec![T::zero(); n];
    let mut im = vec![T::zero(); n];
    for (r, frame) in frames.iter_rows().enumerate() {
        for (dst, (x, w)) in re.iter_mut().zip(frame.iter().zip(window)) {
            *dst = *x * *w;
        }
        re[wlen..].fill(T::zero());
        im.fill(T::zero());
        fft.forward(&mut re, &mut im);
        for (k, p) in out.row_mut(r).iter_mut().enumerate() {
            *p = re[k] * re[k] + im[k] * im[k];
        }
    }
    Ok(out)
}
