//! Dense tensors with reverse-mode differentiation that stays differentiable
//! one level deeper, which is what lets the trainer push gradients through a
//! pseudo parameter step.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::{
    eval_loss, finite_diff_check, hypergradient, hypergradient_fd, FiniteDiffReport,
    InnerLossBuilder, LossBuilder,
};
pub use graph::{BoundParams, Graph, NodeId, Op};
pub use params::ParamSet;
pub use tensor::Tensor;
