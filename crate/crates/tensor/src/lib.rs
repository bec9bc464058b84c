//! Minimal dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! Values live in a [`Graph`] and are addressed through [`Var`] handles. Each
//! primitive records what its backward rule needs; [`Graph::backward`] replays
//! the tape once in reverse.

mod attention;
mod conv;
mod error;
pub mod gradcheck;
mod graph;
pub mod layout;
mod loss;
mod nn;
mod real;
mod tensor;

pub use attention::{relative_position_index, shifted_window_mask, AttentionParams, MASK_VALUE};
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use loss::LossKind;
pub use real::Real;
pub use tensor::Tensor;
