//! Dense tensors, a reverse-mode tape and the Adam optimizer.

mod adam;
pub mod rng;
mod tape;
mod tensor;

pub use adam::{AdamState, ParamMap};
pub use tape::{sigmoid, DropoutKey, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
