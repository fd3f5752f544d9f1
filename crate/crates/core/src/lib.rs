//! Tensor-train linear algebra and randomized sketched GMRES solvers.
//!
//! The crate is organised bottom-up:
//!
//! * [`tt`]: TT vectors/operators, exact arithmetic, TT-SVD rounding.
//! * [`sketch`]: Khatri-Rao Gaussian embeddings mapping TT vectors to short dense vectors.
//! * [`stta`]: streaming two-sided TT approximation (sketch now, recover sums later).
//! * [`solvers`]: TT-GMRES, vanilla and enhanced TT-sGMRES, preconditioned TT-sPGMRES.
//! * [`precond`]: exponential-sum approximate inverses of Kronecker sums.
//! * [`problems`]: convection-diffusion and coupled Markov chain test systems.

pub mod error;
pub mod io;
pub mod precond;
pub mod problems;
mod linalg;
pub mod sketch;
pub mod solvers;
pub mod stta;
pub mod tt;

pub use error::{Result, TtError};
pub use tt::{Core, DenseTensor, OpCore, RoundSpec, TtOperator, TtVector};

/// Caps the parallelism of the dense kernels; `1` runs them sequentially.
pub fn set_threads(threads: usize) {
    let par = if threads <= 1 { faer::Par::Seq } else { faer::Par::rayon(threads) };
    faer::set_global_parallelism(par);
}
