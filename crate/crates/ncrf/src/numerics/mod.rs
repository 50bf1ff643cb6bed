//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! Everything differentiable in the crate is built from the handful of
//! primitives in [`tape`], verified against central finite differences by
//! [`check::finite_diff_check`].

pub mod check;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use check::finite_diff_check;
pub use optim::SgdMomentum;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Scalar, Tensor};
