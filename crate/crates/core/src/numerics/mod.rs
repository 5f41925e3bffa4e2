//! Dense tensors and reverse-mode differentiation.
//!
//! Values are `f32`, row-major. A [`Graph`] records every operation executed
//! on it together with whatever the backward pass needs; [`Graph::backward`]
//! then walks the record in reverse, accumulating gradients into leaves.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{compare_with_finite_diff, finite_diff_check, CoordCheck, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) fn ensure_finite(op: &'static str, values: &[f32]) -> crate::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::NonFinite { op })
    }
}

#[cfg(test)]
mod tests;
