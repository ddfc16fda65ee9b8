//! Dense 64-bit matrices and the handful of layers the model needs, each
//! with an analytic backward pass.
//!
//! There is no tape: every layer exposes a `*_forward` / `*_backward` pair
//! and callers wire the chain rule by hand. [`gradcheck`] verifies those
//! pairs against central finite differences.

pub mod gradcheck;
mod matrix;
pub mod ops;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use matrix::{DualBuffer, Matrix};
