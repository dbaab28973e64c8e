//! Minimal convolutional encoder with hand-written reverse passes, the
//! pair-based trainer and checkpoint I/O.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use layers::{Ctx, Layer};
pub use model::{build_encoder, prepare_inputs, Activation, ConvBlock, EncoderConfig, Model, Pooling, Prediction};
pub use tensor::Tensor;
pub use train::{train, History, TrainConfig, TrainData, TrainStyle};
