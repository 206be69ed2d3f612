//! Reverse-mode autodiff tape, fully connected networks and the AdamW optimizer.

mod adamw;
mod gradcheck;
mod graph;
mod mlp;
mod tensor;

pub use adamw::{clip_grad_norm, AdamW, AdamWConfig};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, NodeId};
pub use mlp::{Activation, Mlp, ParamLayout, LEAKY_RELU_SLOPE};
pub use tensor::Tensor;
