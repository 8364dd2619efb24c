//! Dense tensors, tape-based reverse-mode differentiation and Adam.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use params::{Linear, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
