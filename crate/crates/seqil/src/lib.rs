//! Sequence-to-sequence imitation learning for tactile-only manipulation.
//!
//! * [`sim`]: planar contact environment with a hidden target pose.
//! * [`experts`]: scripted exploration templates and the full-state skill oracle.
//! * [`models`]: Transformer and LSTM encoder–decoders with a mixture density head, and a BC-LSTM baseline.
//! * [`pipeline`]: demonstration datasets, training and the incremental expert-correction loop.
//! * [`eval`]: success-rate evaluation and experiment reports.

pub mod error;
pub mod eval;
pub mod experts;
pub mod models;
pub mod pipeline;
pub mod seeds;
pub mod sim;

pub use error::{Error, Result};
