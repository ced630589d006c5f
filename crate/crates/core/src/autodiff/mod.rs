//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] evaluates operations eagerly and records them on a tape;
//! [`Graph::backward`] sweeps the tape once in reverse and returns the
//! gradient of a scalar node with respect to every leaf. The same engine
//! serves parameter gradients for training and input gradients for attacks.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Gradients, Graph, LeafKind, NodeId};
pub use tensor::Tensor;
