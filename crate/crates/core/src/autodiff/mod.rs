//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records tensor ops eagerly (values are computed at build
//! time), borrows parameters from a [`ParamStore`], and `backward` walks
//! the record once in reverse to produce gradients for every parameter
//! the graph touched. Optimization and finite-difference checking live
//! alongside.

mod fdiff;
mod init;
mod kernels;
mod layers;
mod optim;
mod store;
mod tape;
mod tensor;

pub use fdiff::finite_diff_grad;
pub use init::WeightInit;
pub use layers::{gru_step, linear, linear_frozen, linear_scaled, GruParams, LinearParams};
pub use optim::Adam;
pub use store::{CheckpointManifest, GradMap, ParamStore};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
