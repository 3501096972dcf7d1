use serde::{Deserialize, Serialize};

use super::model::{Gradients, ModelState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` every `every` epochs.
    Step {
        factor: f64,
        every: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.002,
            lr_schedule: LrSchedule::Step {
                factor: 0.5,
                every: 30,
            },
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if let LrSchedule::Step { factor, every } = self.lr_schedule {
            if !(factor > 0.0 && factor.is_finite()) || every == 0 {
                return bad(format!(
                    "step schedule needs factor > 0 and every >= 1, got {factor}, {every}"
                ));
            }
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Step { factor, every } => {
                self.learning_rate * factor.powi((epoch / every) as i32)
            }
        }
    }
}

/// Momentum buffers, created lazily on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState<T> {
    velocity: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new() -> Self {
        Self {
            velocity: Vec::new(),
        }
    }
}

/// One momentum SGD update with decoupled-from-bias L2 decay:
/// `v = momentum * v + g + decay * w` (kernels only), then `w -= lr * v`.
///
/// Nothing is modified if any gradient is non-finite.
pub fn sgd_step<T: Scalar>(
    model: &mut ModelState<T>,
    grads: &Gradients<T>,
    state: &mut SgdState<T>,
    config: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    let layers = model.layers().len();
    if grads.layers.len() != layers {
        return Err(Error::shape("gradients", layers, grads.layers.len()));
    }
    for (i, (g, st)) in grads.layers.iter().zip(model.layers()).enumerate() {
        let kind = model.spec().layers[i].kind();
        let lens: Vec<usize> = st.params.iter().map(|p| p.values.len()).collect();
        if g.iter().map(Vec::len).collect::<Vec<_>>() != lens {
            return Err(Error::shape(
                format!("layer {i} ({kind}) gradients"),
                lens,
                g.len(),
            ));
        }
        if g.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {i} ({kind}) gradient")));
        }
    }
    if state.velocity.is_empty() {
        state.velocity = grads
            .layers
            .iter()
            .map(|l| l.iter().map(|p| vec![T::zero(); p.len()]).collect())
            .collect();
    }
    let (mu, wd, lr) = (
        T::lit(config.momentum),
        T::lit(config.weight_decay),
        T::lit(lr),
    );
    for ((st, g), v) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.velocity)
    {
        for ((param, g), v) in st.params.iter_mut().zip(g).zip(v) {
            let decay = if param.decay { wd } else { T::zero() };
            for ((w, &g), v) in param.values.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = mu * *v + g + decay * *w;
                *w -= lr * *v;
            }
        }
    }
    Ok(())
}
