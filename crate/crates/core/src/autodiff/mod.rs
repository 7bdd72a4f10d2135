//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod gemm;
pub mod nn;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_LEARNING_RATE};
pub use params::{xavier_uniform, Bindings, ParamId, ParamStore};
pub(crate) use params::hex_digest;
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;
