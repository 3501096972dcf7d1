//! Tensors, layers and training primitives for the scene classifiers.

mod batchnorm;
mod checkpoint;
mod conv;
mod depthwise;
mod layers;
mod loss;
mod model;
mod optim;
mod spec;
mod tensor;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, channel_stats, BatchNormCache, BatchNormConfig, Mode,
};
pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, Padding};
pub use depthwise::{
    depthwise_backward, depthwise_forward, depthwise_separable_forward, pointwise_forward,
    separable_weight_count,
};
pub use layers::{
    dense_backward, dense_forward, global_avg_pool_backward, global_avg_pool_forward,
    maxpool2x2_backward, maxpool2x2_forward, pooled_size, relu_backward, relu_forward,
};
pub use loss::{softmax, softmax_backward, softmax_cross_entropy, softmax_forward};
pub use model::{
    build_network, ForwardCache, Gradients, LayerState, ModelState, OutputGrad, Param,
};
pub use optim::{sgd_step, LrSchedule, OptimizerConfig, SgdState};
pub use spec::{LayerSpec, NetworkSpec, ParamShape, PRESETS};
pub use tensor::Tensor4;
