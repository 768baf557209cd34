//! Reverse-mode differentiation over a linear tape of array operations.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! replays the adjoints in reverse creation order. Only the handful of
//! operations the encoders and objectives need are provided.

mod ops;
mod tape;

pub use tape::{Gradients, Tape, Var};
