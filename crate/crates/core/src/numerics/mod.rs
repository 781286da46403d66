//! Dense tensors, a reverse-mode tape, finite-difference checks and seeded
//! randomness.

mod gradcheck;
mod graph;
mod params;
pub mod rng;
mod tensor;

pub use gradcheck::{grad_check, grad_check_detailed, GradCheck};
#[cfg(test)]
pub(crate) use graph::gemm;
pub use graph::{sigmoid, softplus, Adjoint, Graph, Var};
pub use params::{Bound, ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;
