//! Layer building blocks with explicit forward caches and backward passes.

mod activation;
mod conv_layer;
mod dropout;
mod inception;
mod loss;

pub use activation::{relu_backward, relu_forward};
pub use conv_layer::{ConvCache, ConvParams};
pub use dropout::Dropout;
pub use inception::{
    inception_backward, inception_forward, InceptionCache, InceptionParams, InceptionSpec,
};
pub use loss::{bce_loss, bce_with_logits, sigmoid, BceOutput};
