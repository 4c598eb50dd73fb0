//! Dense matrices, reverse-mode differentiation, and a gradient checker.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{grad_check, relative_deviation, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, Elementwise, Gradients, Graph, NodeId, Reduce};
pub use matrix::Matrix;
