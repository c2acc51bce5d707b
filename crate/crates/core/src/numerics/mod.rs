//! Dense tensors, a reverse-mode tape, parameter storage and the checkpoint format.

pub mod checkpoint;
pub mod params;
pub mod tape;
pub mod tensor;

pub use params::{Binder, GradBuffer, ParamId, Parameter, ParameterStore};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};

#[cfg(test)]
mod gradcheck;
