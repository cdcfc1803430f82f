//! Graph elimination networks: propagation without redundant walk revisits,
//! attention over hop shells, training and benchmarking utilities.

pub mod bench;
pub mod config;
pub mod data;
pub mod elimination;
pub mod error;
pub mod graph;
pub mod layer;
pub mod oracle;
pub mod par;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{GenError, Result};
pub use graph::{CsrGraph, EdgeCoefficients};
pub use tensor::{Tape, Tensor, Var};
