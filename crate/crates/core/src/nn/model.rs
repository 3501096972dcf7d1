use rand::Rng as _;

use super::batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, Mode};
use super::conv::{conv2d_backward, conv2d_forward, Padding};
use super::depthwise::{depthwise_backward, depthwise_forward};
use super::layers::*;
use super::loss::{softmax_backward, softmax_forward};
use super::spec::{LayerSpec, NetworkSpec};
use super::Tensor4;
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::rng::{stream, tags};
use crate::scalar::Scalar;

/// One trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub params: Vec<Param<T>>,
    /// Batchnorm running statistics; empty for other layers.
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Parameters and statistics of a network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    spec: NetworkSpec,
    fingerprint: String,
    layers: Vec<LayerState<T>>,
    norm_stats: NormStats<T>,
    seed: u64,
}

/// What the forward pass keeps for one layer.
#[derive(Debug, Clone)]
enum LayerCache<T> {
    Input(Tensor4<T>),
    BatchNorm(BatchNormCache<T>),
    Relu(Tensor4<T>),
    MaxPool {
        argmax: Vec<u32>,
        input_shape: [usize; 4],
    },
    Gap {
        input_shape: [usize; 4],
    },
    Softmax {
        logits: Tensor4<T>,
        probs: Tensor4<T>,
    },
}

/// Activations saved by [`ModelState::forward`] for [`ModelState::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Pre-softmax scores, `[batch][classes][1][1]`.
    pub fn logits(&self) -> &Tensor4<T> {
        match self.layers.last() {
            Some(LayerCache::Softmax { logits, .. }) => logits,
            _ => unreachable!("validated networks end in softmax"),
        }
    }
}

/// Gradient entering the top of the network.
#[derive(Debug, Clone, Copy)]
pub enum OutputGrad<'a, T> {
    /// Loss gradient with respect to the softmax output.
    Probabilities(&'a [T]),
    /// Loss gradient with respect to the logits; the softmax is bypassed.
    Logits(&'a [T]),
}

/// Per-layer parameter gradients, aligned with [`LayerState::params`],
/// plus the gradient with respect to the network input.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub layers: Vec<Vec<Vec<T>>>,
    pub input: Tensor4<T>,
}

/// He-uniform initialized network; fails if the spec does not shape-check.
pub fn build_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<ModelState<T>> {
    spec.shape_check()?;
    let mut rng = stream(seed, tags::INIT);
    let layers = spec
        .layers
        .iter()
        .map(|layer| {
            let params = layer
                .params()
                .into_iter()
                .enumerate()
                .map(|(k, p)| {
                    let n: usize = p.shape.iter().product();
                    let values = if p.fan_in > 0 {
                        let bound = (6.0 / p.fan_in as f64).sqrt();
                        (0..n)
                            .map(|_| T::lit(rng.random_range(-bound..bound)))
                            .collect()
                    } else if matches!(layer, LayerSpec::BatchNorm { .. }) && k == 0 {
                        vec![T::one(); n]
                    } else {
                        vec![T::zero(); n]
                    };
                    Param {
                        shape: p.shape,
                        values,
                        decay: p.decay,
                    }
                })
                .collect();
            let c = match layer {
                LayerSpec::BatchNorm { channels } => *channels,
                _ => 0,
            };
            LayerState {
                params,
                running_mean: vec![T::zero(); c],
                running_var: vec![T::one(); c],
            }
        })
        .collect();
    let [c, m, _] = spec.input_shape;
    Ok(ModelState {
        fingerprint: spec.fingerprint(),
        spec: spec.clone(),
        layers,
        norm_stats: NormStats::identity(c, m),
        seed,
    })
}

type StepOutput<T> = (Tensor4<T>, Option<LayerCache<T>>, Option<(Vec<T>, Vec<T>)>);

impl<T: Scalar> ModelState<T> {
    /// Reassembles a state from stored parts, validating every shape.
    pub fn from_parts(
        spec: NetworkSpec,
        layers: Vec<LayerState<T>>,
        norm_stats: NormStats<T>,
        seed: u64,
    ) -> Result<Self> {
        spec.shape_check()?;
        if layers.len() != spec.layers.len() {
            return Err(Error::shape(
                "model layers",
                spec.layers.len(),
                layers.len(),
            ));
        }
        for (i, (layer, st)) in spec.layers.iter().zip(&layers).enumerate() {
            let want = layer.params();
            let got: Vec<_> = st.params.iter().map(|p| p.shape.clone()).collect();
            let ok = want.len() == got.len()
                && want.iter().zip(&st.params).all(|(w, p)| {
                    w.shape == p.shape
                        && p.values.len() == w.shape.iter().product::<usize>()
                        && w.decay == p.decay
                });
            if !ok {
                return Err(Error::Shape {
                    context: format!("layer {i} ({}) parameters", layer.kind()),
                    expected: format!("{:?}", want.iter().map(|w| &w.shape).collect::<Vec<_>>()),
                    actual: format!("{got:?}"),
                });
            }
            let c = match layer {
                LayerSpec::BatchNorm { channels } => *channels,
                _ => 0,
            };
            if st.running_mean.len() != c || st.running_var.len() != c {
                return Err(Error::shape(
                    format!("layer {i} running statistics"),
                    c,
                    st.running_mean.len(),
                ));
            }
            if st.running_var.iter().any(|v| *v < T::zero()) {
                return Err(Error::NonFinite(format!(
                    "layer {i} running variance is negative"
                )));
            }
        }
        let [c, m, _] = spec.input_shape;
        if (norm_stats.channels(), norm_stats.n_mels()) != (c, m) {
            return Err(Error::shape(
                "norm stats",
                [c, m],
                [norm_stats.channels(), norm_stats.n_mels()],
            ));
        }
        Ok(Self {
            fingerprint: spec.fingerprint(),
            spec,
            layers,
            norm_stats,
            seed,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn layers(&self) -> &[LayerState<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerState<T>] {
        &mut self.layers
    }

    pub fn norm_stats(&self) -> &NormStats<T> {
        &self.norm_stats
    }

    pub fn set_norm_stats(&mut self, stats: NormStats<T>) -> Result<()> {
        let [c, m, _] = self.spec.input_shape;
        if (stats.channels(), stats.n_mels()) != (c, m) {
            return Err(Error::shape(
                "norm stats",
                [c, m],
                [stats.channels(), stats.n_mels()],
            ));
        }
        self.norm_stats = stats;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        ModelState {
            spec: self.spec.clone(),
            fingerprint: self.fingerprint.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerState {
                    params: l
                        .params
                        .iter()
                        .map(|p| Param {
                            shape: p.shape.clone(),
                            values: conv(&p.values),
                            decay: p.decay,
                        })
                        .collect(),
                    running_mean: conv(&l.running_mean),
                    running_var: conv(&l.running_var),
                })
                .collect(),
            norm_stats: self.norm_stats.cast(),
            seed: self.seed,
        }
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        let [_, c, h, w] = input.shape();
        if [c, h, w] != self.spec.input_shape {
            return Err(Error::shape(
                "network input",
                self.spec.input_shape,
                [c, h, w],
            ));
        }
        Ok(())
    }

    /// Runs the network. Train mode uses batch statistics and updates the
    /// running ones. Returns class probabilities `[batch][classes][1][1]`.
    pub fn forward(
        &mut self,
        input: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let (y, cache, running) = self.step(i, x, mode, true)?;
            if let Some((m, v)) = running {
                self.layers[i].running_mean = m;
                self.layers[i].running_var = v;
            }
            caches.push(cache.expect("cache requested"));
            x = y;
        }
        Ok((x, ForwardCache { layers: caches }))
    }

    /// Eval-mode forward without caching.
    pub fn predict(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            x = self.step(i, x, Mode::Eval, false)?.0;
        }
        Ok(x)
    }

    fn step(&self, i: usize, x: Tensor4<T>, mode: Mode, keep: bool) -> Result<StepOutput<T>> {
        let spec = &self.spec.layers[i];
        let st = &self.layers[i];
        let p = |k: usize| st.params[k].values.as_slice();
        let wrap = |e: Error| e.at_layer(i, spec.kind());
        let keep_input = |x: Tensor4<T>| keep.then_some(LayerCache::Input(x));
        let out: StepOutput<T> = match *spec {
            LayerSpec::Conv3x3 {
                out_channels,
                stride,
                padding,
                ..
            } => {
                let y = conv2d_forward(&x, p(0), p(1), out_channels, 3, stride, padding)
                    .map_err(wrap)?;
                (y, keep_input(x), None)
            }
            LayerSpec::Depthwise3x3 {
                stride, padding, ..
            } => {
                let y = depthwise_forward(&x, p(0), p(1), 3, stride, padding).map_err(wrap)?;
                (y, keep_input(x), None)
            }
            LayerSpec::Pointwise1x1 { out_channels, .. } => {
                let y = conv2d_forward(&x, p(0), p(1), out_channels, 1, 1, Padding::Valid)
                    .map_err(wrap)?;
                (y, keep_input(x), None)
            }
            LayerSpec::BatchNorm { .. } => {
                let (mut rm, mut rv) = (st.running_mean.clone(), st.running_var.clone());
                let (y, cache) =
                    batchnorm_forward(&x, p(0), p(1), &mut rm, &mut rv, mode, &self.spec.batchnorm)
                        .map_err(wrap)?;
                let running = (mode == Mode::Train).then_some((rm, rv));
                (y, keep.then_some(LayerCache::BatchNorm(cache)), running)
            }
            LayerSpec::Relu => {
                let y = relu_forward(&x);
                let cache = keep.then(|| LayerCache::Relu(y.clone()));
                (y, cache, None)
            }
            LayerSpec::MaxPool2x2 => {
                let (y, argmax) = maxpool2x2_forward(&x).map_err(wrap)?;
                let cache = keep.then_some(LayerCache::MaxPool {
                    argmax,
                    input_shape: x.shape(),
                });
                (y, cache, None)
            }
            LayerSpec::GlobalAvgPool => (
                global_avg_pool_forward(&x),
                keep.then_some(LayerCache::Gap {
                    input_shape: x.shape(),
                }),
                None,
            ),
            LayerSpec::Dense { out_features, .. } => {
                let y = dense_forward(&x, p(0), p(1), out_features).map_err(wrap)?;
                (y, keep_input(x), None)
            }
            LayerSpec::Softmax => {
                let y = softmax_forward(&x);
                let cache = keep.then(|| LayerCache::Softmax {
                    logits: x,
                    probs: y.clone(),
                });
                (y, cache, None)
            }
        };
        Ok(out)
    }

    /// Backpropagates through the cached forward pass.
    pub fn backward(
        &self,
        cache: ForwardCache<T>,
        grad: OutputGrad<'_, T>,
    ) -> Result<Gradients<T>> {
        let n = self.layers.len();
        if cache.layers.len() != n {
            return Err(Error::shape("forward cache", n, cache.layers.len()));
        }
        let mut caches = cache.layers;
        let top = caches.pop().expect("non-empty network");
        let LayerCache::Softmax { logits, probs } = top else {
            unreachable!("validated networks end in softmax")
        };
        let mut grads: Vec<Vec<Vec<T>>> = vec![Vec::new(); n];
        let mut g = match grad {
            OutputGrad::Logits(v) => Tensor4::from_vec(logits.shape(), v.to_vec()),
            OutputGrad::Probabilities(v) => {
                softmax_backward(&Tensor4::from_vec(probs.shape(), v.to_vec())?, &probs)
            }
        }
        .map_err(|e| e.at_layer(n - 1, "softmax"))?;
        for i in (0..n - 1).rev() {
            let spec = &self.spec.layers[i];
            let st = &self.layers[i];
            let p = |k: usize| st.params[k].values.as_slice();
            let wrap = |e: Error| e.at_layer(i, spec.kind());
            let cache = caches.pop().expect("one cache per layer");
            g = match (spec, cache) {
                (
                    &LayerSpec::Conv3x3 {
                        stride, padding, ..
                    },
                    LayerCache::Input(x),
                ) => {
                    let (gx, gw, gb) =
                        conv2d_backward(&g, &x, p(0), 3, stride, padding).map_err(wrap)?;
                    grads[i] = vec![gw, gb];
                    gx
                }
                (
                    &LayerSpec::Depthwise3x3 {
                        stride, padding, ..
                    },
                    LayerCache::Input(x),
                ) => {
                    let (gx, gw, gb) =
                        depthwise_backward(&g, &x, p(0), 3, stride, padding).map_err(wrap)?;
                    grads[i] = vec![gw, gb];
                    gx
                }
                (LayerSpec::Pointwise1x1 { .. }, LayerCache::Input(x)) => {
                    let (gx, gw, gb) =
                        conv2d_backward(&g, &x, p(0), 1, 1, Padding::Valid).map_err(wrap)?;
                    grads[i] = vec![gw, gb];
                    gx
                }
                (LayerSpec::BatchNorm { .. }, LayerCache::BatchNorm(c)) => {
                    let (gx, gg, gb) = batchnorm_backward(&g, &c, p(0)).map_err(wrap)?;
                    grads[i] = vec![gg, gb];
                    gx
                }
                (LayerSpec::Relu, LayerCache::Relu(y)) => relu_backward(&g, &y).map_err(wrap)?,
                (
                    LayerSpec::MaxPool2x2,
                    LayerCache::MaxPool {
                        argmax,
                        input_shape,
                    },
                ) => maxpool2x2_backward(&g, &argmax, input_shape).map_err(wrap)?,
                (LayerSpec::GlobalAvgPool, LayerCache::Gap { input_shape }) => {
                    global_avg_pool_backward(&g, input_shape).map_err(wrap)?
                }
                (LayerSpec::Dense { .. }, LayerCache::Input(x)) => {
                    let (gx, gw, gb) = dense_backward(&g, &x, p(0)).map_err(wrap)?;
                    grads[i] = vec![gw, gb];
                    gx
                }
                _ => unreachable!("cache kind follows the spec"),
            };
        }
        Ok(Gradients {
            layers: grads,
            input: g,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::softmax_cross_entropy;
    use rand::Rng;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec::with_head(
            "tiny",
            [2, 8, 8],
            3,
            vec![
                LayerSpec::Conv3x3 {
                    in_channels: 2,
                    out_channels: 3,
                    stride: 1,
                    padding: Padding::Same,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Conv3x3 {
                    in_channels: 3,
                    out_channels: 4,
                    stride: 2,
                    padding: Padding::Same,
                },
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
            ],
            4,
        )
    }

    fn input(seed: u64, n: usize) -> Tensor4<f64> {
        let mut rng = stream(seed, 99);
        Tensor4::from_vec(
            [n, 2, 8, 8],
            (0..n * 128)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_build_and_bn_init() {
        let spec = NetworkSpec::vgg_style([3, 32, 32], 15);
        let a = build_network::<f32>(&spec, 7).unwrap();
        let b = build_network::<f32>(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_network::<f32>(&spec, 8).unwrap());
        for (layer, st) in spec.layers.iter().zip(a.layers()) {
            if let LayerSpec::BatchNorm { .. } = layer {
                assert!(st.params[0].values.iter().all(|&v| v == 1.0));
                assert!(st.params[1].values.iter().all(|&v| v == 0.0));
                assert!(st.running_mean.iter().all(|&v| v == 0.0));
                assert!(st.running_var.iter().all(|&v| v == 1.0));
            }
            if let LayerSpec::Conv3x3 { in_channels, .. } = layer {
                let bound = (6.0 / (*in_channels as f64 * 9.0)).sqrt() as f32;
                assert!(st.params[0].values.iter().all(|v| v.abs() <= bound));
                assert!(st.params[1].values.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_eval_is_deterministic() {
        let mut model = build_network::<f64>(&tiny_spec(), 1).unwrap();
        let x = input(1, 5);
        let (p, _) = model.forward(&x, Mode::Train).unwrap();
        for row in p.as_slice().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(model.predict(&x).unwrap(), model.predict(&x).unwrap());
        let (pe, _) = model.forward(&x, Mode::Eval).unwrap();
        assert_eq!(pe, model.predict(&x).unwrap());
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let model = build_network::<f64>(&tiny_spec(), 1).unwrap();
        assert!(model.predict(&Tensor4::zeros([1, 3, 8, 8])).is_err());
    }

    #[test]
    fn degenerate_batchnorm_names_layer() {
        let spec = NetworkSpec::with_head(
            "one",
            [1, 1, 1],
            2,
            vec![LayerSpec::BatchNorm { channels: 1 }],
            1,
        );
        let mut model = build_network::<f64>(&spec, 0).unwrap();
        let err = model
            .forward(&Tensor4::zeros([1, 1, 1, 1]), Mode::Train)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateStatistics { layer: 0 }));
    }

    #[test]
    fn logits_and_probability_gradients_agree() {
        let mut model = build_network::<f64>(&tiny_spec(), 3).unwrap();
        let x = input(2, 4);
        let t: Vec<f64> = (0..12)
            .map(|i| if i % 3 == i / 3 % 3 { 1.0 } else { 0.0 })
            .collect();
        let (p, cache) = model.forward(&x, Mode::Train).unwrap();
        let (_, gl) = softmax_cross_entropy(cache.logits().as_slice(), &t, 3).unwrap();
        let gp: Vec<f64> = p
            .as_slice()
            .iter()
            .zip(&t)
            .map(|(p, t)| -t / p / 4.0)
            .collect();
        let a = model
            .backward(cache.clone(), OutputGrad::Logits(&gl))
            .unwrap();
        let b = model
            .backward(cache, OutputGrad::Probabilities(&gp))
            .unwrap();
        for (x, y) in a.input.as_slice().iter().zip(b.input.as_slice()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
