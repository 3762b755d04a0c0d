//! Cycle-approximate simulator for attention dataflows on a two-engine
//! (matrix + vector) edge accelerator with software-managed memories.
//!
//! The crate models one multi-head attention layer (scores, softmax, value
//! matmul) executed under five dataflows that trade off off-chip traffic
//! against engine overlap, from fully spilled whole-operator execution to a
//! fused semi-synchronous pipeline that keeps intermediates on chip. A
//! discrete-event simulator runs the expanded task graphs against a
//! parameterized hardware description, optionally carrying real tensor data
//! through every task to validate numerics, and reports cycles, energy,
//! memory traffic, and capacity-pressure events.

pub mod error;
pub mod footprint;
pub mod hardware;
pub mod kernels;
pub mod presets;
pub mod schedule;
pub mod shape;
pub mod sim;
pub mod tensor;
pub mod tuner;

pub use error::{Error, Result};
