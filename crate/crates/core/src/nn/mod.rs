//! A small convolutional network written from scratch: layers, forward and
//! backward passes, minibatch SGD, finite-difference checking and a binary
//! parameter file format.

mod gemm;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod network;
pub mod train;

pub use gradcheck::{gradient_check, tiny_case, GradCheckReport, TinyCase};
pub use layers::{
    bce_loss, ce_loss, conv_backward, conv_forward, dense_backward, dense_forward, dropout, maxpool_backward,
    maxpool_forward, relu, sigmoid, softmax, ConvLayerParams, DenseLayerParams, Mode, LOG_EPS,
};
pub use network::{
    accumulate_backward, forward_tensor, init_params, input_tensor, network_backward, network_forward, predict,
    Architecture, ConvSpec, ForwardTrace, LayerShape, NetworkParams, INPUT_CENTER, POOL_WINDOW,
};
pub use train::{sgd_train, sgd_train_from, TrainConfig, TrainHistory, TrainOutcome};
