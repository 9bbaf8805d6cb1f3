//! Differentiable encoders, tensors and the optimizer.

pub mod encoder;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use encoder::{
    build_encoder, embed, images_to_tensor, momentum_update, momentum_update_in_place, Backbone,
    Encoder, EncoderCheckpoint, EncoderConfig, EncoderParams, ForwardPass, Gradients,
};
pub use layers::Mode;
pub use optim::Sgd;
pub use tensor::{argmax, dot, log_sum_exp, softmax, Matrix, Tensor4};
