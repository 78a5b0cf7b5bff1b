//! Tensors, dense kernels with adjoints, and the conjugate-gradient solver.

pub mod adjoint;
mod cg;
pub mod ops;
mod tensor;

pub use adjoint::{vjp_check, AdjointRecord};
pub use cg::{cg_solve, CgSolution};
pub use ops::{bilinear_upsample, conv2d, depthwise_separable_conv2d, matmul, softmax_rows};
pub use tensor::{l2_norm, normalize_or_basis, Tensor, ZERO_NORM_GUARD};
