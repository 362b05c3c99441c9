//! Minimal reverse-mode differentiation over dense `f64` tensors.

pub mod gradcheck;
mod mlp;
mod optim;
mod params;
mod tape;
mod tensor;

pub use mlp::{Activation, MlpSpec};
pub use optim::Adam;
pub use params::{Param, ParamStore, CHECKPOINT_MAGIC};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
