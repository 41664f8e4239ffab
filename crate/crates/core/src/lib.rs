//! Shared-parameter heterogeneous PPO on a deterministic grid skirmish.
//!
//! Everything runs on f64 with a tape-based reverse-mode autodiff core
//! (`autodiff`), five small networks (`nets`), the loss set (`losses`),
//! the FocusFire environment (`env`) and the training/evaluation drivers
//! (`trainer`). All randomness flows from a single u64 seed.

pub mod autodiff;
pub mod config;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod nets;
pub mod rng;
pub mod trainer;

pub use error::{CoreError, Result};
