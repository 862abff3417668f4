//! 3D convolutional pose network with Doppler bins as input channels,
//! parallel multi-resolution branches, and a center/offset head.
//! Gradients come from a small reverse-mode tape.

mod config;
pub mod graph;
mod loss;
mod model;
mod params;
pub mod tensor;
mod train;

pub use config::{HeadKind, NetworkConfig, NormKind};
pub use loss::{
    batch_loss, focal_loss, focal_loss_grad, loss_signature, offset_loss, offset_loss_grad, total_loss, BatchLoss,
    FrameTargets, LossConfig, FOCAL_EPS,
};
pub use model::{head_outputs, prepare_input, HeadOutput, JointMaps, Mode, Network, Outputs, CONFIDENCE_EPS};
pub use params::Params;
pub use tensor::Tensor;
pub use train::{
    evaluate_loss, frame_targets, gradcheck, loss_gradients, relative_error, train_micro, GradCheckEntry,
    GradCheckReport, TrainOptions, TrainResult, DIVERGENCE_LOSS, MAX_TRAIN_FRAMES,
};
