//! Minimal CPU neural-network building blocks in `f64`.
//!
//! Every layer implements [`Layer`] with an explicit backward pass. Forward
//! calls in [`Mode::Train`] push their activations onto a per-layer stack and
//! `backward` pops them, so a shared network can be run on several batches
//! (e.g. two augmented views) before gradients are propagated in reverse order.

pub mod activation;
pub mod checkpoint;
pub mod conv;
pub mod init;
pub mod layer;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod param;
pub mod pool;
pub mod residual;
pub mod swin;

pub use activation::{Gelu, Relu};
pub use conv::Conv2d;
pub use layer::{Layer, Mode, Sequential};
pub use linear::Linear;
pub use norm::{BatchNorm, LayerNorm};
pub use param::{Param, ParamKind};
pub use pool::{Flatten, GlobalAvgPool, MaxPool2d};

use ndarray::ArrayD;

/// Dynamic-rank tensor used at layer boundaries.
pub type Tensor = ArrayD<f64>;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
