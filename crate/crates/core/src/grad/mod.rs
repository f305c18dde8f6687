//! Dense tensors, reverse-mode gradients, Adam, and gradient checking.

mod check;
mod params;
mod tape;
pub mod tensor;

pub use check::finite_difference_check;
pub use params::{init_xavier, xavier_with, Param, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{segment_softmax, sigmoid, EdgeIndex, Grads, Segments, Tape, Var};
pub use tensor::Tensor;
