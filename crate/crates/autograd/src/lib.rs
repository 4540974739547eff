//! Reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! Everything is a matrix: vectors are `1 x n` or `n x 1`, scalars `1 x 1`.
//! Backward rules are written with the same tensor ops as the forward pass,
//! so a gradient obtained with `create_graph = true` is an ordinary graph node
//! and can be differentiated again. The gradient-penalty critic loss relies
//! on this.

mod backward;
pub mod init;
mod optim;
mod params;
mod tensor;

pub use backward::{grad, grad_with_seed};
pub use optim::{sgd_step, Adam};
pub use params::{ParamStore, Vars};
pub use tensor::{is_grad_enabled, no_grad, GradModeGuard, Tensor};
