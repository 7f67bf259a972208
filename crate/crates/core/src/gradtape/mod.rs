//! Reverse-mode automatic differentiation over dense tensors.

mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{OptimMethod, Optimizer};
pub use params::{Bound, Param, ParamGroup, ParamStore};
pub use tape::{Gradients, OpKind, Tape};
pub use tensor::{NodeId, Tensor};

#[cfg(test)]
mod tests;
