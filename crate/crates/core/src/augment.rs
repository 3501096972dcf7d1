//! Mixup over log-mel patches and soft labels.
//!
//! A mixed example is `alpha * a + (1 - alpha) * b` for both the features and
//! the label. One ratio is drawn per batch and partners come from a uniformly
//! random permutation of the batch.

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::LogMelTensor;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Patch plus a probability vector over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample<T> {
    pub features: LogMelTensor<T>,
    pub label: Vec<T>,
}

impl<T: Scalar> LabeledExample<T> {
    /// Checks the label lies on the simplex (entries >= 0, sum within 1e-6 of 1).
    pub fn new(features: LogMelTensor<T>, label: Vec<T>) -> Result<Self> {
        let sum: f64 = label.iter().map(|v| v.as_f64()).sum();
        if label.iter().any(|v| !(v.as_f64() >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "label is not a probability vector (sum {sum})"
            )));
        }
        Ok(Self { features, label })
    }

    pub fn one_hot(features: LogMelTensor<T>, class: usize, n_classes: usize) -> Self {
        let mut label = vec![T::zero(); n_classes];
        label[class] = T::one();
        Self { features, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixupPolicy {
    #[default]
    Off,
    Fixed {
        alpha: f64,
    },
    Beta {
        beta: f64,
    },
}

impl MixupPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MixupPolicy::Fixed { alpha } if !(0.0..=1.0).contains(&alpha) => {
                Err(Error::Config(format!("mixup alpha {alpha} outside [0, 1]")))
            }
            MixupPolicy::Beta { beta } if !(beta > 0.0 && beta.is_finite()) => Err(Error::Config(
                format!("mixup beta parameter {beta} must be positive"),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self, MixupPolicy::Off)
    }

    /// Ratio reported in comparison tables; off reads as 0, the
    /// "no mixup" row of a ratio sweep.
    pub fn table_alpha(&self) -> Option<f64> {
        match *self {
            MixupPolicy::Off => Some(0.0),
            MixupPolicy::Fixed { alpha } => Some(alpha),
            MixupPolicy::Beta { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            MixupPolicy::Off => "off".into(),
            MixupPolicy::Fixed { alpha } => format!("{alpha}"),
            MixupPolicy::Beta { beta } => format!("beta({beta})"),
        }
    }
}

/// `alpha * a + (1 - alpha) * b` for features and label. The endpoints return
/// copies of `a` (alpha = 1) or `b` (alpha = 0) exactly.
pub fn mixup_pair<T: Scalar>(
    a: &LabeledExample<T>,
    b: &LabeledExample<T>,
    alpha: f64,
) -> Result<LabeledExample<T>> {
    if a.features.shape() != b.features.shape() || a.label.len() != b.label.len() {
        return Err(Error::shape(
            "mixup pair",
            (a.features.shape(), a.label.len()),
            (b.features.shape(), b.label.len()),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("mixup alpha {alpha} outside [0, 1]")));
    }
    if alpha == 1.0 {
        return Ok(a.clone());
    }
    if alpha == 0.0 {
        return Ok(b.clone());
    }
    let wa = T::lit(alpha);
    let wb = T::lit(1.0 - alpha);
    let mix =
        |x: &[T], y: &[T]| -> Vec<T> { x.iter().zip(y).map(|(&p, &q)| wa * p + wb * q).collect() };
    Ok(LabeledExample {
        features: LogMelTensor::new(
            a.features.shape(),
            mix(a.features.as_slice(), b.features.as_slice()),
        )?,
        label: mix(&a.label, &b.label),
    })
}

/// Off: 1; fixed: the configured ratio; beta: a draw from `Beta(p, p)`.
pub fn sample_alpha(policy: &MixupPolicy, rng: &mut Rng) -> f64 {
    match *policy {
        MixupPolicy::Off => 1.0,
        MixupPolicy::Fixed { alpha } => alpha,
        MixupPolicy::Beta { beta } => {
            let dist = Beta::new(beta, beta).expect("validated beta parameter");
            dist.sample(rng)
        }
    }
}

/// The random choices behind one mixed batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub alpha: f64,
    /// `partners[i]` is the index mixed into example `i`.
    pub partners: Vec<usize>,
}

/// Draws one ratio and a partner permutation. `None` when the policy is off,
/// in which case nothing is drawn from `rng`.
pub fn draw_mix_plan(n: usize, policy: &MixupPolicy, rng: &mut Rng) -> Option<MixPlan> {
    if policy.is_off() {
        return None;
    }
    let alpha = sample_alpha(policy, rng);
    let mut partners: Vec<usize> = (0..n).collect();
    partners.shuffle(rng);
    Some(MixPlan { alpha, partners })
}

pub fn apply_mix_plan<T: Scalar>(
    batch: &[LabeledExample<T>],
    plan: &MixPlan,
) -> Result<Vec<LabeledExample<T>>> {
    if plan.partners.len() != batch.len() {
        return Err(Error::shape("mix plan", batch.len(), plan.partners.len()));
    }
    batch
        .iter()
        .zip(&plan.partners)
        .map(|(a, &j)| mixup_pair(a, &batch[j], plan.alpha))
        .collect()
}

/// Mixes a batch in place of the clean one; batch size is unchanged and with
/// the policy off the output equals the input.
pub fn mixup_batch<T: Scalar>(
    batch: &[LabeledExample<T>],
    policy: &MixupPolicy,
    rng: &mut Rng,
) -> Result<Vec<LabeledExample<T>>> {
    if batch.is_empty() {
        return Err(Error::Empty("mixup batch"));
    }
    match draw_mix_plan(batch.len(), policy, rng) {
        None => Ok(batch.to_vec()),
        Some(plan) => apply_mix_plan(batch, &plan),
    }
}
