use super::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-wise softmax over `[batch][k]` data, shifted by the row maximum.
pub fn softmax<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

/// Softmax layer on a `[batch][k][1][1]` tensor.
pub fn softmax_forward<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let k = logits.sample_len();
    Tensor4::from_vec(logits.shape(), softmax(logits.as_slice(), k)).expect("same shape")
}

/// Jacobian-vector product of the softmax given its output `probs`.
pub fn softmax_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    probs: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if grad_out.shape() != probs.shape() {
        return Err(Error::shape(
            "softmax gradient",
            probs.shape(),
            grad_out.shape(),
        ));
    }
    let k = probs.sample_len();
    let mut gx = Vec::with_capacity(probs.len());
    for (g, p) in grad_out
        .as_slice()
        .chunks_exact(k)
        .zip(probs.as_slice().chunks_exact(k))
    {
        let dot = g.iter().zip(p).map(|(&a, &b)| a * b).sum::<T>();
        gx.extend(g.iter().zip(p).map(|(&a, &b)| b * (a - dot)));
    }
    Tensor4::from_vec(probs.shape(), gx)
}

/// Mean cross-entropy of `softmax(logits)` against probability targets.
///
/// Returns the loss and its gradient with respect to the logits, `(p - t) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &[T],
    targets: &[T],
    k: usize,
) -> Result<(f64, Vec<T>)> {
    if k == 0
        || logits.len() != targets.len()
        || !logits.len().is_multiple_of(k)
        || logits.is_empty()
    {
        return Err(Error::shape(
            "cross-entropy targets",
            logits.len(),
            targets.len(),
        ));
    }
    let batch = logits.len() / k;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    let inv_b = T::lit(1.0 / batch as f64);
    for (z, t) in logits.chunks_exact(k).zip(targets.chunks_exact(k)) {
        let max = z
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        for (&zi, &ti) in z.iter().zip(t) {
            let log_p = zi.as_f64() - lse;
            if ti != T::zero() {
                loss -= ti.as_f64() * log_p;
            }
            grad.push((T::lit(log_p.exp()) - ti) * inv_b);
        }
    }
    Ok((loss / batch as f64, grad))
}
