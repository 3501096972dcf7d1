//! Per-(channel, mel-bin) z-score statistics.

use super::LogMelTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T> {
    channels: usize,
    n_mels: usize,
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Scalar> NormStats<T> {
    /// `mean` and `std` are `channels x n_mels`, row-major; stds are floored.
    pub fn new(channels: usize, n_mels: usize, mean: Vec<T>, std: Vec<T>) -> Result<Self> {
        let n = channels * n_mels;
        if mean.len() != n || std.len() != n {
            return Err(Error::shape("norm stats", n, (mean.len(), std.len())));
        }
        let floor = T::lit(STD_FLOOR);
        let std = std.into_iter().map(|s| s.max(floor)).collect();
        Ok(Self {
            channels,
            n_mels,
            mean,
            std,
        })
    }

    /// Zero mean, unit deviation.
    pub fn identity(channels: usize, n_mels: usize) -> Self {
        Self {
            channels,
            n_mels,
            mean: vec![T::zero(); channels * n_mels],
            std: vec![T::one(); channels * n_mels],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn std(&self) -> &[T] {
        &self.std
    }

    pub fn cast<U: Scalar>(&self) -> NormStats<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        NormStats {
            channels: self.channels,
            n_mels: self.n_mels,
            mean: c(&self.mean),
            std: c(&self.std),
        }
    }
}

/// Population mean and standard deviation per (channel, mel bin), pooled
/// over every frame of every patch. Accumulates in `f64` with a streaming
/// update so long corpora do not need a second pass.
pub fn compute_norm_stats<T: Scalar>(patches: &[LogMelTensor<T>]) -> Result<NormStats<T>> {
    let first = patches.first().ok_or(Error::Empty("training patch list"))?;
    let [c, m, _] = first.shape();
    let rows = c * m;
    let mut count = vec![0u64; rows];
    let mut mean = vec![0.0f64; rows];
    let mut m2 = vec![0.0f64; rows];
    for p in patches {
        let [pc, pm, t] = p.shape();
        if (pc, pm) != (c, m) {
            return Err(Error::shape("norm stats patch", [c, m], [pc, pm]));
        }
        for (r, row) in p.as_slice().chunks_exact(t).enumerate() {
            // merge this row's (n, mean, M2) into the running aggregate
            let n_b = t as f64;
            let mean_b = row.iter().map(|v| v.as_f64()).sum::<f64>() / n_b;
            let m2_b: f64 = row.iter().map(|v| (v.as_f64() - mean_b).powi(2)).sum();
            let n_a = count[r] as f64;
            let n = n_a + n_b;
            let delta = mean_b - mean[r];
            mean[r] += delta * n_b / n;
            m2[r] += m2_b + delta * delta * n_a * n_b / n;
            count[r] += t as u64;
        }
    }
    let std = m2
        .iter()
        .zip(&count)
        .map(|(s, &n)| T::lit((s / n as f64).sqrt()))
        .collect();
    NormStats::new(c, m, mean.into_iter().map(T::lit).collect(), std)
}

/// `(x - mean[c][m]) / std[c][m]`.
pub fn normalize<T: Scalar>(
    patch: &LogMelTensor<T>,
    stats: &NormStats<T>,
) -> Result<LogMelTensor<T>> {
    let [c, m, t] = patch.shape();
    if (c, m) != (stats.channels, stats.n_mels) {
        return Err(Error::shape(
            "normalize",
            [stats.channels, stats.n_mels],
            [c, m],
        ));
    }
    let mut data = Vec::with_capacity(c * m * t);
    for (r, row) in patch.as_slice().chunks_exact(t).enumerate() {
        let (mu, sd) = (stats.mean[r], stats.std[r]);
        data.extend(row.iter().map(|&v| (v - mu) / sd));
    }
    LogMelTensor::new([c, m, t], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_patch(rng: &mut crate::rng::Rng, shape: [usize; 3]) -> LogMelTensor<f64> {
        let n = shape.iter().product();
        LogMelTensor::new(
            shape,
            (0..n).map(|_| rng.random::<f64>() * 10.0 - 20.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_patch_hits_the_floor() {
        let p = LogMelTensor::new([3, 2, 5], vec![4.5f64; 30]).unwrap();
        let s = compute_norm_stats(&[p]).unwrap();
        assert!(s.mean().iter().all(|&v| v == 4.5));
        assert!(s.std().iter().all(|&v| v == STD_FLOOR));
    }

    #[test]
    fn two_patch_mean() {
        let a = LogMelTensor::new([1, 1, 1], vec![2.0f64]).unwrap();
        let b = LogMelTensor::new([1, 1, 1], vec![5.0f64]).unwrap();
        let s = compute_norm_stats(&[a, b]).unwrap();
        assert_eq!(s.mean()[0], 3.5);
        assert!((s.std()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn matches_two_pass_oracle() {
        let mut rng = crate::rng::stream(3, 3);
        let patches: Vec<_> = (0..7).map(|_| random_patch(&mut rng, [3, 4, 9])).collect();
        let s = compute_norm_stats(&patches).unwrap();
        for c in 0..3 {
            for m in 0..4 {
                let vals: Vec<f64> = patches
                    .iter()
                    .flat_map(|p| (0..9).map(move |t| p.get(c, m, t)))
                    .collect();
                let mu = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
                assert!((s.mean()[c * 4 + m] - mu).abs() < 1e-9);
                assert!((s.std()[c * 4 + m] - var.sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_with_own_stats_is_centred() {
        let mut rng = crate::rng::stream(4, 4);
        let p = random_patch(&mut rng, [3, 5, 16]);
        let s = compute_norm_stats(std::slice::from_ref(&p)).unwrap();
        let z = normalize(&p, &s).unwrap();
        for row in z.as_slice().chunks(16) {
            let mu: f64 = row.iter().sum::<f64>() / 16.0;
            assert!(mu.abs() < 1e-6);
        }
        // identity stats leave the patch untouched
        assert_eq!(normalize(&p, &NormStats::identity(3, 5)).unwrap(), p);
    }

    #[test]
    fn normalize_matches_elementwise_oracle() {
        let mut rng = crate::rng::stream(5, 5);
        let p = random_patch(&mut rng, [3, 2, 4]);
        let mean: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let std: Vec<f64> = (0..6).map(|i| 0.5 + i as f64).collect();
        let s = NormStats::new(3, 2, mean.clone(), std.clone()).unwrap();
        let z = normalize(&p, &s).unwrap();
        for c in 0..3 {
            for m in 0..2 {
                for t in 0..4 {
                    let want = (p.get(c, m, t) - mean[c * 2 + m]) / std[c * 2 + m];
                    assert_eq!(z.get(c, m, t), want);
                }
            }
        }
    }

    #[test]
    fn errors() {
        assert!(compute_norm_stats::<f64>(&[]).is_err());
        let p = LogMelTensor::<f64>::zeros([3, 2, 4]);
        assert!(normalize(&p, &NormStats::identity(3, 3)).is_err());
    }
}
