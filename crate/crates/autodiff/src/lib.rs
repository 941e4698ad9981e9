//! Dense `f64` tensors with a reverse-mode gradient tape.
//!
//! A [`Graph`] records every operation in construction order. Trainable
//! tensors live in a [`ParamStore`] and are copied onto the tape with
//! [`Graph::param`]; [`Graph::backward_into`] adds the resulting gradients
//! back into the store, where [`Adam`] consumes them.

pub mod checkpoint;
mod error;
mod graph;
pub mod gradcheck;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use error::{AdError, Result};
pub use graph::{logsumexp, Graph, Var, LAYER_NORM_EPS};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
