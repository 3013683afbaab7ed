//! Dense tensors, reverse-mode differentiation, layers, losses and Adam.

mod graph;
mod layers;
pub mod loss;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use layers::{AttentionBlock, LayerNorm, Linear, INIT_STD, LAYER_NORM_EPS, MLP_RATIO};
pub use loss::Target;
pub use optim::{Adam, LrSchedule};
pub use params::{Bound, ParamId, ParamSet};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use graph::softmax_row;

#[cfg(test)]
mod tests;

#[cfg(any(test, feature = "testing"))]
pub mod gradcheck;
