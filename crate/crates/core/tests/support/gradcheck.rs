//! Central finite-difference checks for every layer, in f64.
//!
//! Each check draws a small random case, projects the layer output onto a
//! random direction `r` (loss = sum r * y) and compares the analytic
//! gradients against `(L(p + h) - L(p - h)) / 2h` for every input and
//! parameter entry. Returns the largest relative error among the
//! gradient tensors.
#![allow(dead_code)]

use ascnet::nn::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step for piecewise-linear layers, where the difference quotient is exact
/// up to rounding.
pub const H: f64 = 1e-3;
/// Step for batchnorm and softmax, whose curvature makes the O(h^2)
/// truncation term visible at 1e-3.
pub const H_CURVED: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4<f64> {
    Tensor4::from_vec(shape, uniform(rng, shape.iter().product())).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norm below which a gradient tensor is compared on an absolute scale.
/// Parameters whose true gradient vanishes, such as a conv bias feeding
/// batchnorm, leave only rounding noise in the difference quotient.
pub const NORM_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, NORM_FLOOR)` in the Euclidean norm over one
/// gradient tensor.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(NORM_FLOOR)
}

/// Numeric gradient of `f` with respect to every entry of `x`.
pub fn numeric(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn padding(rng: &mut ChaCha8Rng) -> Padding {
    if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

pub fn conv3x3(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, ci, co) = (
        g.random_range(1..=2),
        g.random_range(1..=3),
        g.random_range(1..=3),
    );
    let (h, w) = (g.random_range(3..=6), g.random_range(3..=6));
    let (stride, pad) = (g.random_range(1..=2), padding(&mut g));
    let x = tensor(&mut g, [n, ci, h, w]);
    let wt = uniform(&mut g, co * ci * 9);
    let b = uniform(&mut g, co);
    let y = conv2d_forward(&x, &wt, &b, co, 3, stride, pad).unwrap();
    let r = tensor(&mut g, y.shape());
    let (gx, gw, gb) = conv2d_backward(&r, &x, &wt, 3, stride, pad).unwrap();
    let loss = |x: &Tensor4<f64>, wt: &[f64], b: &[f64]| {
        dot(
            conv2d_forward(x, wt, b, co, 3, stride, pad)
                .unwrap()
                .as_slice(),
            r.as_slice(),
        )
    };
    let nx = numeric(x.as_slice(), H, |v| {
        loss(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(), &wt, &b)
    });
    let nw = numeric(&wt, H, |v| loss(&x, v, &b));
    let nb = numeric(&b, H, |v| loss(&x, &wt, v));
    max_rel_err(gx.as_slice(), &nx)
        .max(max_rel_err(&gw, &nw))
        .max(max_rel_err(&gb, &nb))
}

pub fn depthwise(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c) = (g.random_range(1..=2), g.random_range(1..=3));
    let (h, w) = (g.random_range(3..=6), g.random_range(3..=6));
    let (stride, pad) = (g.random_range(1..=2), padding(&mut g));
    let x = tensor(&mut g, [n, c, h, w]);
    let wt = uniform(&mut g, c * 9);
    let b = uniform(&mut g, c);
    let y = depthwise_forward(&x, &wt, &b, 3, stride, pad).unwrap();
    let r = tensor(&mut g, y.shape());
    let (gx, gw, gb) = depthwise_backward(&r, &x, &wt, 3, stride, pad).unwrap();
    let loss = |x: &Tensor4<f64>, wt: &[f64], b: &[f64]| {
        dot(
            depthwise_forward(x, wt, b, 3, stride, pad)
                .unwrap()
                .as_slice(),
            r.as_slice(),
        )
    };
    let nx = numeric(x.as_slice(), H, |v| {
        loss(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(), &wt, &b)
    });
    let nw = numeric(&wt, H, |v| loss(&x, v, &b));
    let nb = numeric(&b, H, |v| loss(&x, &wt, v));
    max_rel_err(gx.as_slice(), &nx)
        .max(max_rel_err(&gw, &nw))
        .max(max_rel_err(&gb, &nb))
}

pub fn pointwise(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, ci, co) = (
        g.random_range(1..=2),
        g.random_range(1..=4),
        g.random_range(1..=4),
    );
    let (h, w) = (g.random_range(1..=4), g.random_range(1..=4));
    let x = tensor(&mut g, [n, ci, h, w]);
    let wt = uniform(&mut g, co * ci);
    let b = uniform(&mut g, co);
    let y = pointwise_forward(&x, &wt, &b, co).unwrap();
    let r = tensor(&mut g, y.shape());
    let (gx, gw, gb) = conv2d_backward(&r, &x, &wt, 1, 1, Padding::Valid).unwrap();
    let loss = |x: &Tensor4<f64>, wt: &[f64], b: &[f64]| {
        dot(
            pointwise_forward(x, wt, b, co).unwrap().as_slice(),
            r.as_slice(),
        )
    };
    let nx = numeric(x.as_slice(), H, |v| {
        loss(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(), &wt, &b)
    });
    let nw = numeric(&wt, H, |v| loss(&x, v, &b));
    let nb = numeric(&b, H, |v| loss(&x, &wt, v));
    max_rel_err(gx.as_slice(), &nx)
        .max(max_rel_err(&gw, &nw))
        .max(max_rel_err(&gb, &nb))
}

fn bn(
    x: &Tensor4<f64>,
    gamma: &[f64],
    beta: &[f64],
    mode: Mode,
    running: &(Vec<f64>, Vec<f64>),
) -> (Tensor4<f64>, BatchNormCache<f64>) {
    let (mut m, mut v) = running.clone();
    batchnorm_forward(
        x,
        gamma,
        beta,
        &mut m,
        &mut v,
        mode,
        &BatchNormConfig::default(),
    )
    .unwrap()
}

/// Batchnorm in train or eval mode, chosen by the seed.
///
/// Shapes keep at least four values per channel: with two, train-mode
/// output is +-gamma whatever the input and the gradient is epsilon noise.
pub fn batchnorm(seed: u64) -> f64 {
    let mut g = rng(seed);
    let mode = if g.random_bool(0.75) {
        Mode::Train
    } else {
        Mode::Eval
    };
    let (n, c) = (g.random_range(1..=3), g.random_range(1..=3));
    let (h, w) = (g.random_range(2..=3), g.random_range(2..=3));
    let x = tensor(&mut g, [n, c, h, w]);
    let gamma: Vec<f64> = (0..c).map(|_| g.random_range(0.5..1.5)).collect();
    let beta = uniform(&mut g, c);
    let running = (
        uniform(&mut g, c),
        (0..c).map(|_| g.random_range(0.5..2.0)).collect::<Vec<_>>(),
    );
    let (y, cache) = bn(&x, &gamma, &beta, mode, &running);
    let r = tensor(&mut g, y.shape());
    let (gx, gg, gb) = batchnorm_backward(&r, &cache, &gamma).unwrap();
    let loss = |x: &Tensor4<f64>, gm: &[f64], bt: &[f64]| {
        dot(bn(x, gm, bt, mode, &running).0.as_slice(), r.as_slice())
    };
    let nx = numeric(x.as_slice(), H_CURVED, |v| {
        loss(
            &Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(),
            &gamma,
            &beta,
        )
    });
    let ng = numeric(&gamma, H_CURVED, |v| loss(&x, v, &beta));
    let nb = numeric(&beta, H_CURVED, |v| loss(&x, &gamma, v));
    max_rel_err(gx.as_slice(), &nx)
        .max(max_rel_err(&gg, &ng))
        .max(max_rel_err(&gb, &nb))
}

/// conv3x3 -> batchnorm -> batchnorm, all in train mode.
pub fn batchnorm_chain(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, ci, co) = (
        g.random_range(2..=3),
        g.random_range(1..=2),
        g.random_range(1..=3),
    );
    let (h, w) = (g.random_range(3..=4), g.random_range(3..=4));
    let x = tensor(&mut g, [n, ci, h, w]);
    let wt = uniform(&mut g, co * ci * 9);
    let b = vec![0.0; co];
    let g1: Vec<f64> = (0..co).map(|_| g.random_range(0.5..1.5)).collect();
    let g2: Vec<f64> = (0..co).map(|_| g.random_range(0.5..1.5)).collect();
    let (b1, b2) = (uniform(&mut g, co), uniform(&mut g, co));
    let running = (vec![0.0; co], vec![1.0; co]);
    let fwd = |x: &Tensor4<f64>, wt: &[f64]| {
        let c = conv2d_forward(x, wt, &b, co, 3, 1, Padding::Same).unwrap();
        let (y1, c1) = bn(&c, &g1, &b1, Mode::Train, &running);
        let (y2, c2) = bn(&y1, &g2, &b2, Mode::Train, &running);
        (y2, c1, c2)
    };
    let (y, c1, c2) = fwd(&x, &wt);
    let r = tensor(&mut g, y.shape());
    let (d1, _, _) = batchnorm_backward(&r, &c2, &g2).unwrap();
    let (d0, _, _) = batchnorm_backward(&d1, &c1, &g1).unwrap();
    let (gx, gw, _) = conv2d_backward(&d0, &x, &wt, 3, 1, Padding::Same).unwrap();
    let loss = |x: &Tensor4<f64>, wt: &[f64]| dot(fwd(x, wt).0.as_slice(), r.as_slice());
    let nx = numeric(x.as_slice(), H_CURVED, |v| {
        loss(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(), &wt)
    });
    let nw = numeric(&wt, H_CURVED, |v| loss(&x, v));
    max_rel_err(gx.as_slice(), &nx).max(max_rel_err(&gw, &nw))
}

/// Inputs kept at least 0.1 away from the kink.
pub fn relu(seed: u64) -> f64 {
    let mut g = rng(seed);
    let shape = [
        g.random_range(1..=2),
        g.random_range(1..=3),
        g.random_range(1..=4),
        g.random_range(1..=4),
    ];
    let data = (0..shape.iter().product())
        .map(|_| {
            let m = g.random_range(0.1..1.0);
            if g.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor4::from_vec(shape, data).unwrap();
    let y = relu_forward(&x);
    let r = tensor(&mut g, shape);
    let gx = relu_backward(&r, &y).unwrap();
    let nx = numeric(x.as_slice(), H, |v| {
        dot(
            relu_forward(&Tensor4::from_vec(shape, v.to_vec()).unwrap()).as_slice(),
            r.as_slice(),
        )
    });
    max_rel_err(gx.as_slice(), &nx)
}

/// Inputs are a shuffled grid so every window has a unique maximum.
pub fn maxpool(seed: u64) -> f64 {
    let mut g = rng(seed);
    let shape = [
        g.random_range(1..=2),
        g.random_range(1..=2),
        g.random_range(2..=5),
        g.random_range(2..=5),
    ];
    let len: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..len).map(|i| i as f64 * 0.01 - 0.3).collect();
    data.shuffle(&mut g);
    let x = Tensor4::from_vec(shape, data).unwrap();
    let (y, arg) = maxpool2x2_forward(&x).unwrap();
    let r = tensor(&mut g, y.shape());
    let gx = maxpool2x2_backward(&r, &arg, shape).unwrap();
    let nx = numeric(x.as_slice(), H, |v| {
        dot(
            maxpool2x2_forward(&Tensor4::from_vec(shape, v.to_vec()).unwrap())
                .unwrap()
                .0
                .as_slice(),
            r.as_slice(),
        )
    });
    max_rel_err(gx.as_slice(), &nx)
}

pub fn gap(seed: u64) -> f64 {
    let mut g = rng(seed);
    let shape = [
        g.random_range(1..=3),
        g.random_range(1..=3),
        g.random_range(1..=5),
        g.random_range(1..=5),
    ];
    let x = tensor(&mut g, shape);
    let r = tensor(&mut g, [shape[0], shape[1], 1, 1]);
    let gx = global_avg_pool_backward(&r, shape).unwrap();
    let nx = numeric(x.as_slice(), H, |v| {
        dot(
            global_avg_pool_forward(&Tensor4::from_vec(shape, v.to_vec()).unwrap()).as_slice(),
            r.as_slice(),
        )
    });
    max_rel_err(gx.as_slice(), &nx)
}

pub fn dense(seed: u64) -> f64 {
    let mut g = rng(seed);
    let shape = [
        g.random_range(1..=3),
        g.random_range(1..=4),
        g.random_range(1..=2),
        g.random_range(1..=2),
    ];
    let f = shape[1] * shape[2] * shape[3];
    let out = g.random_range(1..=5);
    let x = tensor(&mut g, shape);
    let wt = uniform(&mut g, out * f);
    let b = uniform(&mut g, out);
    let r = tensor(&mut g, [shape[0], out, 1, 1]);
    let (gx, gw, gb) = dense_backward(&r, &x, &wt).unwrap();
    let loss = |x: &Tensor4<f64>, wt: &[f64], b: &[f64]| {
        dot(
            dense_forward(x, wt, b, out).unwrap().as_slice(),
            r.as_slice(),
        )
    };
    let nx = numeric(x.as_slice(), H, |v| {
        loss(&Tensor4::from_vec(shape, v.to_vec()).unwrap(), &wt, &b)
    });
    let nw = numeric(&wt, H, |v| loss(&x, v, &b));
    let nb = numeric(&b, H, |v| loss(&x, &wt, v));
    max_rel_err(gx.as_slice(), &nx)
        .max(max_rel_err(&gw, &nw))
        .max(max_rel_err(&gb, &nb))
}

/// Fused softmax + cross-entropy against random soft targets, plus the
/// standalone softmax Jacobian product.
pub fn softmax_ce(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, k) = (g.random_range(1..=4), g.random_range(2..=6));
    let z: Vec<f64> = (0..n * k).map(|_| g.random_range(-3.0..3.0)).collect();
    let mut t = Vec::with_capacity(n * k);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| g.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        t.extend(raw.iter().map(|v| v / s));
    }
    let (_, grad) = softmax_cross_entropy(&z, &t, k).unwrap();
    let nz = numeric(&z, H_CURVED, |v| softmax_cross_entropy(v, &t, k).unwrap().0);
    let shape = [n, k, 1, 1];
    let r = tensor(&mut g, shape);
    let p = softmax_forward(&Tensor4::from_vec(shape, z.clone()).unwrap());
    let gs = softmax_backward(&r, &p).unwrap();
    let ns = numeric(&z, H_CURVED, |v| dot(&softmax(v, k), r.as_slice()));
    max_rel_err(&grad, &nz).max(max_rel_err(gs.as_slice(), &ns))
}

/// Two conv layers on an 8x8 input with 3 classes, checked end to end
/// through the model API (parameters and input).
pub fn tiny_network(seed: u64) -> f64 {
    let spec = NetworkSpec::with_head(
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
            LayerSpec::BatchNorm { channels: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Conv3x3 {
                in_channels: 3,
                out_channels: 4,
                stride: 1,
                padding: Padding::Same,
            },
            LayerSpec::Relu,
        ],
        4,
    );
    let model = build_network::<f64>(&spec, seed).unwrap();
    let mut g = rng(seed ^ 0xabc);
    let n = 3;
    let x = tensor(&mut g, [n, 2, 8, 8]);
    let mut t = vec![0.0; n * 3];
    for i in 0..n {
        t[i * 3 + g.random_range(0..3)] = 0.7;
        t[i * 3 + g.random_range(0..3)] += 0.3;
    }
    let loss = |m: &ModelState<f64>, x: &Tensor4<f64>| {
        let mut m = m.clone();
        let (_, cache) = m.forward(x, Mode::Train).unwrap();
        softmax_cross_entropy(cache.logits().as_slice(), &t, 3)
            .unwrap()
            .0
    };
    let (_, cache) = model.clone().forward(&x, Mode::Train).unwrap();
    let (_, gl) = softmax_cross_entropy(cache.logits().as_slice(), &t, 3).unwrap();
    let grads = model.backward(cache, OutputGrad::Logits(&gl)).unwrap();
    // a smaller step keeps perturbations off the relu and max-pool kinks
    let h = 1e-5;
    let nx = numeric(x.as_slice(), h, |v| {
        loss(&model, &Tensor4::from_vec(x.shape(), v.to_vec()).unwrap())
    });
    let mut worst = max_rel_err(grads.input.as_slice(), &nx);
    for li in 0..model.layers().len() {
        for pi in 0..model.layers()[li].params.len() {
            let base = model.layers()[li].params[pi].values.clone();
            let np = numeric(&base, h, |v| {
                let mut m = model.clone();
                m.layers_mut()[li].params[pi].values.copy_from_slice(v);
                loss(&m, &x)
            });
            worst = worst.max(max_rel_err(&grads.layers[li][pi], &np));
        }
    }
    worst
}
