//! Dense tensor arithmetic with reverse-mode differentiation.

mod conv;
pub mod gradcheck;
pub mod tape;

pub use gradcheck::{grad_check, BlockDiscrepancy, GradCheckReport, ParamBlock};
pub use tape::{Gradients, NodeId, Tape};
