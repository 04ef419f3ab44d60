//! Minimal neural-network core for sequence classification of book features.
//!
//! Layers implement explicit forward and backward passes over dense `f64`
//! tensors; a [`Model`] is an ordered stack of them. Everything runs on one
//! thread with a fixed summation order, so identical seeds give identical
//! parameters bit for bit.

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod layers;
mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod svm;
pub mod tensor;
pub mod train;

pub use layers::{LayerNode, Mode, Param};
pub use model::{Architecture, Model, ModelSpec};
pub use tensor::{NnError, Tensor};

pub type Result<T, E = NnError> = std::result::Result<T, E>;
