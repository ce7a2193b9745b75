//! Reverse-mode differentiation and the neural blocks built on it.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod kernels;
mod layers;
mod params;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, Entry, EntryKind, MAGIC as CHECKPOINT_MAGIC};
pub use graph::{sigmoid, softmax_in_place, BatchStats, Gradients, Graph, Var, BN_EPS};
pub use kernels::{gemm, ConvSpec};
pub use layers::{
    default_se_ratio, AttentionBlock, BatchNorm, Conv, ConvBnRelu, Dense, Forward, SeGate, SeResUnit, BN_MOMENTUM,
};
pub use params::{BufferId, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
