//! Dense 64-bit arrays and a reverse-mode differentiation tape.

mod array;
mod params;
mod tape;

use thiserror::Error;

pub use array::DenseArray;
pub use params::{BoundParams, ParamStore};
pub use tape::{Gradients, OpKind, Tape, Var, LAYER_NORM_EPS};

pub(crate) use tape::attention_probs;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[cfg(test)]
mod tests;
