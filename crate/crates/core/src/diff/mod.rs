//! Reverse-mode differentiation over double-precision tensors, plus the
//! layers, optimizer and checkpoint format used by both models.

pub mod check;
pub mod checkpoint;
pub mod fused;
mod graph;
pub mod kernels;
pub mod nn;
pub mod optim;
mod params;
mod tensor;

pub use fused::AttnShape;
pub use graph::{Graph, Var, LAYER_NORM_EPS, SELU_ALPHA, SELU_LAMBDA};
pub use nn::{LayerNorm, Linear, Mode};
pub use optim::{Adam, AdamConfig, PlateauConfig, PlateauMode, PlateauScheduler};
pub use params::{ParamBlock, ParamId, ParamStore};
pub use tensor::Tensor;
