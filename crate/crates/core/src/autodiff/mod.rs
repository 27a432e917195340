//! Dense tensors, a reverse-mode tape, and a finite-difference checker.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_entries, relative_error, Entries, GradCheckReport, ParamCheck};
pub use tape::{Gradients, ParamStore, SegmentIndex, Tape, Var};
pub use tensor::Tensor;
