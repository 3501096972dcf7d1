//! HTK mel filterbank and log-mel projection.

use super::FeatureConfig;
use crate::array::Matrix;
use crate::error::{Error, Result};
use crate::scalar::{matmul, Scalar};

/// HTK mel scale: `2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on FFT bin centres, `n_mels x (fft_size/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank<T> {
    weights: Matrix<T>,
    band_edges: Vec<f64>,
}

impl<T: Scalar> MelFilterbank<T> {
    /// Filter `i` rises linearly from edge `i` to edge `i+1` and falls to edge
    /// `i+2`; each sampled row is rescaled so its largest weight is exactly 1.
    pub fn new(config: &FeatureConfig) -> Result<Self> {
        config.validate()?;
        let n_mels = config.n_mels;
        let fft_size = config.fft_len();
        let bins = fft_size / 2 + 1;
        let sr = config.sample_rate as f64;
        let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax_hz()));
        let band_edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();

        let mut weights = Matrix::zeros(n_mels, bins);
        let mut row = vec![0.0f64; bins];
        for m in 0..n_mels {
            let (left, centre, right) = (band_edges[m], band_edges[m + 1], band_edges[m + 2]);
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * sr / fft_size as f64;
                *w = if f > left && f <= centre {
                    (f - left) / (centre - left)
                } else if f > centre && f < right {
                    (right - f) / (right - centre)
                } else {
                    0.0
                };
            }
            let peak = row.iter().cloned().fold(0.0, f64::max);
            if peak <= 0.0 {
                return Err(Error::EmptyFilter { filter: m });
            }
            for (dst, w) in weights.row_mut(m).iter_mut().zip(&row) {
                *dst = T::lit(w / peak);
            }
        }
        Ok(Self {
            weights,
            band_edges,
        })
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    /// The `n_mels + 2` band edges in Hz.
    pub fn band_edges(&self) -> &[f64] {
        &self.band_edges
    }

    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }
}

/// `out[m][t] = ln(max(sum_k w[m][k] * power[t][k], floor))`, shaped
/// `n_mels x frames`.
pub fn log_mel<T: Scalar>(
    power: &Matrix<T>,
    fb: &MelFilterbank<T>,
    log_floor: T,
) -> Result<Matrix<T>> {
    let w = fb.weights();
    if power.cols() != w.cols() {
        return Err(Error::shape(
            "log-mel spectrum bins",
            w.cols(),
            power.cols(),
        ));
    }
    let mut out = Matrix::zeros(w.rows(), power.rows());
    matmul(
        false,
        true,
        w.rows(),
        power.rows(),
        w.cols(),
        T::one(),
        w.as_slice(),
        power.as_slice(),
        T::zero(),
        out.as_mut_slice(),
    );
    for v in out.as_mut_slice() {
        *v = v.max(log_floor).ln();
    }
    Ok(out)
}
