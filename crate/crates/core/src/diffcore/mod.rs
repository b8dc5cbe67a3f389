//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference
//! gradient auditor.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, cosine_decay, AdamConfig, AdamState, Moments};
pub use gradcheck::{check_function, finite_diff_check, relative_error, GradCheckReport, InputReport};
pub use graph::{BackwardCtx, CustomOp, Gradients, Graph, Unary, Var};
pub use tensor::{ParamGroup, ParamId, ParamSet, Tensor};

pub(crate) use graph::{gemm, sigmoid};
#[cfg(test)]
pub(crate) use graph::softplus;
