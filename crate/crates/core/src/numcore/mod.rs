//! Dense tensors, losses, Adam, the seeded generator and the
//! finite-difference gradient oracle.

pub mod adam;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use ops::{affine, cross_entropy, cross_entropy_grad, sigmoid, softmax};
pub use params::{finite_diff_grad, grad, max_relative_errors, Objective, ParamSet};
pub use rng::Rng;
pub use tensor::{canonical_sum, matmul, Tensor};
