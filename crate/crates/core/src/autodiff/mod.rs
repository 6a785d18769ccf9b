//! Reverse-mode automatic differentiation over dense tensors.

pub mod conv;
mod gradcheck;
mod graph;
mod norm;

pub use gradcheck::{grad_check_tensors, rel_error};
pub use graph::{bce_value, Activation, Graph, Pool, Var, PROB_CLAMP};
pub(crate) use graph::softmax_rows;
pub use norm::BnMode;

#[cfg(test)]
mod tests;
