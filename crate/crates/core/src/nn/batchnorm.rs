use serde::{Deserialize, Serialize};

use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalization settings shared by every layer in a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormConfig {
    /// Weight kept on the old running statistic at each update.
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub x_hat: Tensor4<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

/// Per-channel batch statistics `(mean, biased variance)` over batch and space.
pub fn channel_stats<T: Scalar>(input: &Tensor4<T>) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += input.sample(i)[ch * plane..(ch + 1) * plane]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        let mu = s / m;
        let mut ss = 0.0;
        for i in 0..n {
            ss += input.sample(i)[ch * plane..(ch + 1) * plane]
                .iter()
                .map(|v| (v.as_f64() - mu).powi(2))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = ss / m;
    }
    (mean, var)
}

/// Normalizes per channel and applies `gamma`/`beta`.
///
/// In train mode batch statistics are used and the running statistics are
/// blended toward them; in eval mode the running statistics are used as-is.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    mode: Mode,
    cfg: &BatchNormConfig,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    let [n, c, h, w] = input.shape();
    for (what, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running mean", running_mean.len()),
        ("running variance", running_var.len()),
    ] {
        if len != c {
            return Err(Error::shape(format!("batchnorm {what}"), c, len));
        }
    }
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            if n * h * w < 2 {
                return Err(Error::DegenerateStatistics { layer: 0 });
            }
            let (mean, var) = channel_stats(input);
            let mom = cfg.momentum;
            for ch in 0..c {
                running_mean[ch] = T::lit(mom * running_mean[ch].as_f64() + (1.0 - mom) * mean[ch]);
                running_var[ch] = T::lit(mom * running_var[ch].as_f64() + (1.0 - mom) * var[ch]);
            }
            (mean, var)
        }
        Mode::Eval => (
            running_mean.iter().map(|v| v.as_f64()).collect(),
            running_var.iter().map(|v| v.as_f64()).collect(),
        ),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|v| T::lit(1.0 / (v + cfg.epsilon).sqrt()))
        .collect();
    let plane = h * w;
    let mut x_hat = Tensor4::zeros(input.shape());
    let mut out = Tensor4::zeros(input.shape());
    for i in 0..n {
        let x = input.sample(i);
        let xh = x_hat.sample_mut(i);
        for ch in 0..c {
            let mu = T::lit(mean[ch]);
            let r = ch * plane..(ch + 1) * plane;
            for (d, &v) in xh[r.clone()].iter_mut().zip(&x[r]) {
                *d = (v - mu) * inv_std[ch];
            }
        }
        let y = out.sample_mut(i);
        for ch in 0..c {
            let r = ch * plane..(ch + 1) * plane;
            for (d, &v) in y[r.clone()].iter_mut().zip(&xh[r]) {
                *d = gamma[ch] * v + beta[ch];
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            x_hat,
            inv_std,
            mode,
        },
    ))
}

/// Gradients `(input, gamma, beta)`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    cache: &BatchNormCache<T>,
    gamma: &[T],
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let [n, c, h, w] = cache.x_hat.shape();
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::shape(
            "batchnorm output gradient",
            cache.x_hat.shape(),
            grad_out.shape(),
        ));
    }
    let plane = h * w;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        let gy = grad_out.sample(i);
        let xh = cache.x_hat.sample(i);
        for ch in 0..c {
            let r = ch * plane..(ch + 1) * plane;
            for (&g, &x) in gy[r.clone()].iter().zip(&xh[r]) {
                dgamma[ch] += g * x;
                dbeta[ch] += g;
            }
        }
    }
    let mut grad_in = Tensor4::zeros(grad_out.shape());
    let m = T::lit((n * plane) as f64);
    for i in 0..n {
        let gy = grad_out.sample(i);
        let xh = cache.x_hat.sample(i);
        let gx = grad_in.sample_mut(i);
        for ch in 0..c {
            let r = ch * plane..(ch + 1) * plane;
            let scale = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Eval => {
                    for (d, &g) in gx[r.clone()].iter_mut().zip(&gy[r]) {
                        *d = scale * g;
                    }
                }
                Mode::Train => {
                    // dx = gamma*inv_std/M * (M*dy - sum(dy) - x_hat*sum(dy*x_hat))
                    let (sum_g, sum_gx) = (dbeta[ch], dgamma[ch]);
                    for ((d, &g), &x) in gx[r.clone()].iter_mut().zip(&gy[r.clone()]).zip(&xh[r]) {
                        *d = scale / m * (m * g - sum_g - x * sum_gx);
                    }
                }
            }
        }
    }
    Ok((grad_in, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn train_output_is_standardized() {
        let mut rng = crate::rng::stream(7, 0);
        let data: Vec<f64> = (0..4 * 3 * 5 * 5)
            .map(|_| rng.random::<f64>() * 7.0 + 3.0)
            .collect();
        let x = Tensor4::from_vec([4, 3, 5, 5], data).unwrap();
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        let (y, _) = batchnorm_forward(
            &x,
            &[1.0; 3],
            &[0.0; 3],
            &mut rm,
            &mut rv,
            Mode::Train,
            &BatchNormConfig::default(),
        )
        .unwrap();
        let (mean, var) = channel_stats(&y);
        for ch in 0..3 {
            assert!(mean[ch].abs() < 1e-4);
            assert!((var[ch] - 1.0).abs() < 1e-4);
        }
        let (bm, bv) = channel_stats(&x);
        for ch in 0..3 {
            assert!((rm[ch] - 0.1 * bm[ch]).abs() < 1e-12);
            assert!((rv[ch] - (0.9 + 0.1 * bv[ch])).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_with_unit_stats_is_near_identity() {
        let x = Tensor4::from_vec(
            [1, 2, 2, 2],
            vec![-1.0f64, 0.5, 0.0, 1.0, 2.0, -2.0, 0.1, 0.2],
        )
        .unwrap();
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let (y, _) = batchnorm_forward(
            &x,
            &[1.0; 2],
            &[0.0; 2],
            &mut rm,
            &mut rv,
            Mode::Eval,
            &BatchNormConfig::default(),
        )
        .unwrap();
        for (a, b) in y.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
        }
        assert_eq!(rv, vec![1.0; 2]);
    }

    #[test]
    fn single_value_per_channel_is_degenerate() {
        let x = Tensor4::from_vec([1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let err = batchnorm_forward(
            &x,
            &[1.0; 2],
            &[0.0; 2],
            &mut rm,
            &mut rv,
            Mode::Train,
            &BatchNormConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateStatistics { .. }));
    }
}
