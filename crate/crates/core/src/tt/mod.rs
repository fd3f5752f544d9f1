//! Tensor-train vectors and operators with exact arithmetic and TT-SVD rounding.
//!
//! Multi-indices are flattened row-major: the first mode varies slowest. A Kronecker
//! product `M_1 ⊗ ... ⊗ M_d` therefore acts with `M_k` on mode `k`.

mod core;
mod operator;
mod vector;

pub use self::core::Core;
pub use operator::{OpCore, TtOperator};
pub use vector::{DenseTensor, RoundSpec, TtVector, DEFAULT_DENSE_CAP};

pub(crate) use vector::mode_multiply;

#[cfg(test)]
mod tests;
