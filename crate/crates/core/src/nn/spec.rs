use serde::{Deserialize, Serialize};

use super::batchnorm::BatchNormConfig;
use super::conv::{ConvGeometry, Padding};
use super::layers::pooled_size;
use crate::error::{Error, Result};
use crate::features::hex_digest;

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum LayerSpec {
    #[serde(rename = "conv3x3")]
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    #[serde(rename = "depthwise3x3")]
    Depthwise3x3 {
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    #[serde(rename = "pointwise1x1")]
    Pointwise1x1 {
        in_channels: usize,
        out_channels: usize,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm { channels: usize },
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    #[serde(rename = "global_avg_pool")]
    GlobalAvgPool,
    #[serde(rename = "dense")]
    Dense {
        in_features: usize,
        out_features: usize,
    },
    #[serde(rename = "softmax")]
    Softmax,
}

/// Shape and role of one trainable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub shape: Vec<usize>,
    /// Kernels receive weight decay; biases and normalization parameters don't.
    pub decay: bool,
    /// Inputs feeding each output unit, for initialization; zero for non-kernels.
    pub fan_in: usize,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Conv3x3 { .. } => "conv3x3",
            Self::Depthwise3x3 { .. } => "depthwise3x3",
            Self::Pointwise1x1 { .. } => "pointwise1x1",
            Self::BatchNorm { .. } => "batchnorm",
            Self::Relu => "relu",
            Self::MaxPool2x2 => "maxpool2x2",
            Self::GlobalAvgPool => "global_avg_pool",
            Self::Dense { .. } => "dense",
            Self::Softmax => "softmax",
        }
    }

    /// Trainable tensors in storage order.
    pub fn params(&self) -> Vec<ParamShape> {
        let kernel = |shape: Vec<usize>, fan_in| ParamShape {
            shape,
            decay: true,
            fan_in,
        };
        let plain = |n| ParamShape {
            shape: vec![n],
            decay: false,
            fan_in: 0,
        };
        match *self {
            Self::Conv3x3 {
                in_channels: i,
                out_channels: o,
                ..
            } => vec![kernel(vec![o, i, 3, 3], i * 9), plain(o)],
            Self::Depthwise3x3 { channels: c, .. } => vec![kernel(vec![c, 1, 3, 3], 9), plain(c)],
            Self::Pointwise1x1 {
                in_channels: i,
                out_channels: o,
            } => vec![kernel(vec![o, i, 1, 1], i), plain(o)],
            Self::BatchNorm { channels } => vec![plain(channels), plain(channels)],
            Self::Dense {
                in_features: i,
                out_features: o,
            } => vec![kernel(vec![o, i], i), plain(o)],
            Self::Relu | Self::MaxPool2x2 | Self::GlobalAvgPool | Self::Softmax => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params()
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    /// Output `(channels, height, width)` for a given input, or a description
    /// of what the layer expected.
    pub fn output_shape(&self, input: [usize; 3]) -> std::result::Result<[usize; 3], String> {
        let [c, h, w] = input;
        let want_c = |expected: usize| {
            if c == expected {
                Ok(())
            } else {
                Err(format!("expects {expected} input channels, got {c}"))
            }
        };
        match *self {
            Self::Conv3x3 {
                in_channels,
                out_channels,
                stride,
                padding,
            } => {
                want_c(in_channels)?;
                let g = ConvGeometry::new(h, w, 3, stride, padding).map_err(|e| e.to_string())?;
                Ok([out_channels, g.out_h, g.out_w])
            }
            Self::Depthwise3x3 {
                channels,
                stride,
                padding,
            } => {
                want_c(channels)?;
                let g = ConvGeometry::new(h, w, 3, stride, padding).map_err(|e| e.to_string())?;
                Ok([channels, g.out_h, g.out_w])
            }
            Self::Pointwise1x1 {
                in_channels,
                out_channels,
            } => {
                want_c(in_channels)?;
                Ok([out_channels, h, w])
            }
            Self::BatchNorm { channels } => {
                want_c(channels)?;
                Ok(input)
            }
            Self::Relu | Self::Softmax => Ok(input),
            Self::MaxPool2x2 => {
                let (oh, ow) = pooled_size(h, w).map_err(|e| e.to_string())?;
                Ok([c, oh, ow])
            }
            Self::GlobalAvgPool => Ok([c, 1, 1]),
            Self::Dense {
                in_features,
                out_features,
            } => {
                if c * h * w != in_features {
                    return Err(format!(
                        "expects {in_features} input features, got {}",
                        c * h * w
                    ));
                }
                Ok([out_features, 1, 1])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    /// `(channels, mel bands, frames)` of one input patch.
    pub input_shape: [usize; 3],
    pub n_classes: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub batchnorm: BatchNormConfig,
}

pub const PRESETS: [&str; 2] = ["vgg_style", "xception_style"];

impl NetworkSpec {
    /// Looks up a named preset.
    pub fn preset(name: &str, input_shape: [usize; 3], n_classes: usize) -> Result<Self> {
        match name {
            "vgg_style" => Ok(Self::vgg_style(input_shape, n_classes)),
            "xception_style" => Ok(Self::xception_style(input_shape, n_classes)),
            other => Err(Error::Config(format!(
                "unknown network preset {other:?}; expected one of {PRESETS:?}"
            ))),
        }
    }

    /// Four blocks of two conv-bn-relu stages and a max-pool, widths
    /// 32/64/128/256, a 512-wide conv stage, then the pooled classifier head.
    pub fn vgg_style(input_shape: [usize; 3], n_classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut c = input_shape[0];
        let conv = |layers: &mut Vec<LayerSpec>, c: &mut usize, out: usize| {
            layers.push(LayerSpec::Conv3x3 {
                in_channels: *c,
                out_channels: out,
                stride: 1,
                padding: Padding::Same,
            });
            layers.push(LayerSpec::BatchNorm { channels: out });
            layers.push(LayerSpec::Relu);
            *c = out;
        };
        for width in [32, 64, 128, 256] {
            conv(&mut layers, &mut c, width);
            conv(&mut layers, &mut c, width);
            layers.push(LayerSpec::MaxPool2x2);
        }
        conv(&mut layers, &mut c, 512);
        Self::with_head("vgg_style", input_shape, n_classes, layers, c)
    }

    /// Strided conv entry, then four blocks of two depthwise-separable
    /// stages and a max-pool (widths 64/128/256/256), then the head.
    pub fn xception_style(input_shape: [usize; 3], n_classes: usize) -> Self {
        let mut layers = vec![
            LayerSpec::Conv3x3 {
                in_channels: input_shape[0],
                out_channels: 32,
                stride: 2,
                padding: Padding::Same,
            },
            LayerSpec::BatchNorm { channels: 32 },
            LayerSpec::Relu,
        ];
        let mut c = 32;
        for width in [64, 128, 256, 256] {
            for _ in 0..2 {
                layers.push(LayerSpec::Depthwise3x3 {
                    channels: c,
                    stride: 1,
                    padding: Padding::Same,
                });
                layers.push(LayerSpec::Pointwise1x1 {
                    in_channels: c,
                    out_channels: width,
                });
                layers.push(LayerSpec::BatchNorm { channels: width });
                layers.push(LayerSpec::Relu);
                c = width;
            }
            layers.push(LayerSpec::MaxPool2x2);
        }
        Self::with_head("xception_style", input_shape, n_classes, layers, c)
    }

    /// Appends pooling, the dense classifier and softmax.
    pub fn with_head(
        name: &str,
        input_shape: [usize; 3],
        n_classes: usize,
        mut layers: Vec<LayerSpec>,
        channels: usize,
    ) -> Self {
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense {
            in_features: channels,
            out_features: n_classes,
        });
        layers.push(LayerSpec::Softmax);
        Self {
            name: name.to_string(),
            input_shape,
            n_classes,
            layers,
            batchnorm: BatchNormConfig::default(),
        }
    }

    /// Propagates shapes from the input; returns every layer's output shape.
    pub fn shape_check(&self) -> Result<Vec<[usize; 3]>> {
        if self.input_shape.contains(&0) {
            return Err(Error::shape(
                "network input",
                "all dimensions >= 1",
                self.input_shape,
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            )));
        }
        let mut shape = self.input_shape;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape).map_err(|msg| Error::Shape {
                context: format!("layer {i} ({})", layer.kind()),
                expected: msg,
                actual: format!("input {shape:?}"),
            })?;
            shapes.push(shape);
        }
        let n = self.layers.len();
        let head_ok = n >= 3
            && self.layers[n - 3] == LayerSpec::GlobalAvgPool
            && matches!(self.layers[n - 2], LayerSpec::Dense { out_features, .. } if out_features == self.n_classes)
            && self.layers[n - 1] == LayerSpec::Softmax;
        if !head_ok {
            return Err(Error::Shape {
                context: "network head".into(),
                expected: format!("global_avg_pool, dense({}), softmax", self.n_classes),
                actual: format!(
                    "{:?}",
                    self.layers
                        .iter()
                        .rev()
                        .take(3)
                        .rev()
                        .map(|l| l.kind())
                        .collect::<Vec<_>>()
                ),
            });
        }
        for (what, v, lo, hi) in [
            ("batchnorm momentum", self.batchnorm.momentum, 0.0, 1.0),
            (
                "batchnorm epsilon",
                self.batchnorm.epsilon,
                f64::MIN_POSITIVE,
                f64::INFINITY,
            ),
        ] {
            if !(v >= lo && v < hi) {
                return Err(Error::Config(format!("{what} {v} out of range")));
            }
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Stable digest of the architecture.
    pub fn fingerprint(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("spec serializes"))
    }
}
