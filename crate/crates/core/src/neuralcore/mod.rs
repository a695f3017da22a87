//! Dense `f64` tensors with a gradient tape covering the layers the
//! classifier needs: 1-D convolution, max pooling, LSTM, dense, sigmoid,
//! binary cross-entropy and gradient reversal.

pub mod checkpoint;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use ops::{bce_loss, bce_loss_batch, grl_backward, grl_forward, sigmoid};
pub use params::{adversarial_update, sgd_step, Param, ParamGrads, ParamId, ParamSet, Partition};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
