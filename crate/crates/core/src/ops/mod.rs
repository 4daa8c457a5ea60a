//! The layer operations of the network. Every op returns its output together
//! with a tape; consuming the tape runs the backward pass exactly once.

mod activation;
mod conv;
mod dense;
mod loss;
mod norm;
mod pool;

pub use activation::{relu, softmax, ReluTape, SoftmaxTape};
pub use conv::{conv2d, conv2d_forward, ConvGrads, ConvParams, ConvTape, InputGrad};
pub use dense::{dense, dense_forward, DenseGrads, DenseTape};
pub use loss::{cross_entropy, weighted_cross_entropy, CrossEntropyTape, LOG_FLOOR};
pub use norm::{batch_norm, BatchNormParams, NormGrads, NormTape, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use pool::{maxpool2, PoolTape};

/// Whether a forward pass is part of a training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only; nothing is mutated.
    Infer,
}
