//! Krylov solvers for TT linear systems.
//!
//! * [`tt_gmres`]: full modified Gram-Schmidt Arnoldi with relaxed roundings.
//! * [`tt_sgmres_vanilla`]: sketched least squares, truncated orthogonalization, final
//!   solution by sequential rounded additions.
//! * [`tt_sgmres`]: the same iteration, but the basis is only kept as STTA sketches and the
//!   solution is recovered from them in one shot.
//! * [`tt_spgmres`]: right-preconditioned variant of [`tt_sgmres`].

use std::time::Instant;

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TtError};
use crate::linalg::thin_svd;
use crate::precond::Preconditioner;
use crate::sketch::KhatriRaoSketch;
use crate::stta::StreamFrame;
use crate::tt::{TtOperator, TtVector};

mod gmres;
mod sketched;

pub use gmres::tt_gmres;
pub use sketched::{tt_sgmres, tt_sgmres_vanilla, tt_spgmres};

/// Relative singular-value cutoff of the sketched least-squares solve.
pub const LSQ_RCOND: f64 = 1e-12;
/// `W_k` is reported as ill-conditioned once `σ_min / σ_max` drops below this.
pub const CONDITION_WARNING: f64 = 1e-10;
/// Candidate pseudo-inverse cutoffs of the final STTA recovery. Frame ranks usually exceed the
/// numerical ranks of the solution, so a small cutoff lets rounding noise in the sketches
/// through the nearly singular `Ω` blocks while a large one drops genuine solution directions.
/// The solvers keep the candidate with the smallest sketched residual.
pub const SOLUTION_RCONDS: [f64; 5] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8];
/// A new direction with norm below this fraction of `‖A v_k‖` ends the iteration.
pub const BREAKDOWN_RATIO: f64 = 1e-14;

/// How the truncated Gram-Schmidt update of the sketched solvers is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// `ṽ - Σ h_i v_i` in TT arithmetic, then rounding.
    #[default]
    Explicit,
    /// Combine STTA sketches of `ṽ` and the window vectors, then recover.
    Stta,
}

fn default_maxit() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-6
}
fn default_window() -> usize {
    1
}
fn default_eta() -> f64 {
    0.3
}
fn default_oversampling() -> usize {
    20
}
fn default_solution_rank() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_maxit")]
    pub maxit: usize,
    /// Relative residual target of the stopping test (sketched for the sketched solvers).
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Number of previous basis vectors each new one is orthogonalized against.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Basis vectors are rounded at `eta * tol`.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Rank cap for basis vectors (and preconditioner applications).
    #[serde(default)]
    pub max_rank: Option<usize>,
    /// Rows of the Khatri-Rao sketch; `2 * maxit` when absent.
    #[serde(default)]
    pub sketch_rows: Option<usize>,
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
    /// Expected TT-rank of the solution; sizes the STTA frame and caps the final recovery.
    #[serde(default = "default_solution_rank")]
    pub solution_rank: usize,
    #[serde(default)]
    pub combine_mode: CombineMode,
    /// Pseudo-inverse cutoff for the final STTA recovery; when absent, each of
    /// [`SOLUTION_RCONDS`] above the cancellation noise floor is tried.
    #[serde(default)]
    pub recovery_rcond: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Recompute `‖b - A x_k‖ / ‖b‖` after every iteration (expensive).
    #[serde(default)]
    pub track_true_residual: bool,
    /// Ignore the stopping test and always run `maxit` iterations.
    #[serde(default)]
    pub force_iterations: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            maxit: default_maxit(),
            tol: default_tol(),
            window: default_window(),
            eta: default_eta(),
            max_rank: None,
            sketch_rows: None,
            oversampling: default_oversampling(),
            solution_rank: default_solution_rank(),
            combine_mode: CombineMode::Explicit,
            recovery_rcond: None,
            seed: 0,
            track_true_residual: false,
            force_iterations: false,
        }
    }
}

impl SolverConfig {
    pub fn sketch_rows(&self) -> usize {
        self.sketch_rows.unwrap_or(2 * self.maxit)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(TtError::Invalid(format!("{key}: {msg}")));
        if self.maxit == 0 {
            return bad("maxit", "must be positive".into());
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tol", format!("must lie in (0, 1), got {}", self.tol));
        }
        if self.window == 0 {
            return bad("window", "must be at least 1".into());
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta", format!("must lie in (0, 1], got {}", self.eta));
        }
        if self.max_rank == Some(0) {
            return bad("max_rank", "must be at least 1".into());
        }
        if self.sketch_rows() <= self.maxit {
            return bad("sketch_rows", format!("must exceed maxit ({}), got {}", self.maxit, self.sketch_rows()));
        }
        if let Some(r) = self.recovery_rcond {
            if !(r > 0.0 && r < 1.0) {
                return bad("recovery_rcond", format!("must lie in (0, 1), got {r}"));
            }
        }
        if self.solution_rank == 0 {
            return bad("solution_rank", "must be at least 1".into());
        }
        Ok(())
    }

    /// The Khatri-Rao sketch the sketched solvers use by default.
    pub fn default_sketch(&self, dims: &[usize]) -> Result<KhatriRaoSketch> {
        KhatriRaoSketch::new(dims, self.sketch_rows(), self.seed)
    }

    /// STTA frame with recovery ranks `max(rank(b), 2 * solution_rank)` at every bond.
    pub fn default_frame(&self, b: &TtVector) -> Result<StreamFrame> {
        let ranks: Vec<usize> = b.ranks()[1..b.ndim()].iter().map(|&r| r.max(2 * self.solution_rank)).collect();
        StreamFrame::new(&b.dims(), &ranks, self.oversampling, self.seed ^ 0x9e37_79b9_7f4a_7c15)
    }
}

/// Wall-clock seconds spent in each phase of one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub matvec: f64,
    pub sketch: f64,
    pub orth: f64,
    pub round: f64,
    pub lsq: f64,
    pub recovery: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.matvec + self.sketch + self.orth + self.round + self.lsq + self.recovery
    }
}

pub(crate) struct Stopwatch(Instant);

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self(Instant::now())
    }

    /// Adds the elapsed time to `slot` and restarts.
    pub(crate) fn lap(&mut self, slot: &mut f64) {
        let now = Instant::now();
        *slot += (now - self.0).as_secs_f64();
        self.0 = now;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: String,
    pub converged: bool,
    pub iterations: usize,
    /// Relative residual estimate per iteration: sketched for the sketched solvers, the
    /// Hessenberg least-squares residual for TT-GMRES.
    pub res_sketched: Vec<f64>,
    /// Recomputed `‖b - A x_k‖ / ‖b‖`, when tracked.
    pub res_true: Vec<Option<f64>>,
    /// Largest TT-rank of the basis vector produced in each iteration.
    pub max_rank: Vec<usize>,
    pub times: Vec<PhaseTimes>,
    /// Time to assemble the returned solution.
    pub final_recovery_time: f64,
    pub total_time: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
    /// Largest number of full basis TT-vectors held at any one time.
    pub peak_resident_basis: usize,
    pub breakdown: bool,
}

impl SolveReport {
    pub(crate) fn new(solver: &str, seed: u64) -> Self {
        Self { solver: solver.to_string(), seed, ..Default::default() }
    }

    pub fn peak_rank(&self) -> usize {
        self.max_rank.iter().copied().max().unwrap_or(0)
    }

    pub fn final_sketched_residual(&self) -> Option<f64> {
        self.res_sketched.last().copied()
    }

    pub fn final_true_residual(&self) -> Option<f64> {
        self.res_true.last().copied().flatten()
    }
}

/// Solution of the sketched least-squares problem `min ‖W y - rhs‖`.
#[derive(Clone, Debug)]
pub struct LsqSolution {
    pub y: Vec<f64>,
    pub residual: f64,
    /// `σ_min / σ_max` of `W` (0 for a zero matrix).
    pub condition_ratio: f64,
}

/// `y = W^† rhs` through a thin SVD with relative cutoff [`LSQ_RCOND`]; `W` is `s x k`.
pub fn sketched_lsq(w: MatRef<'_, f64>, rhs: &[f64]) -> Result<LsqSolution> {
    let (s, k) = (w.nrows(), w.ncols());
    if rhs.len() != s {
        return Err(TtError::Shape(format!("{s} sketch rows but rhs of length {}", rhs.len())));
    }
    let svd = thin_svd(w)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let mut y = vec![0.0; k];
    for (i, &sigma) in svd.s.iter().enumerate() {
        if sigma <= LSQ_RCOND * smax || sigma == 0.0 {
            continue;
        }
        let c: f64 = (0..s).map(|r| svd.u[(r, i)] * rhs[r]).sum::<f64>() / sigma;
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += svd.v[(j, i)] * c;
        }
    }
    let residual = (0..s)
        .map(|r| {
            let wy: f64 = (0..k).map(|j| w[(r, j)] * y[j]).sum();
            (wy - rhs[r]).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let smin = svd.s.last().copied().unwrap_or(0.0);
    Ok(LsqSolution { y, residual, condition_ratio: if smax > 0.0 { smin / smax } else { 0.0 } })
}

/// `‖b - A x‖ / ‖b‖` in TT arithmetic.
pub fn true_residual(a: &TtOperator, b: &TtVector, x: &TtVector) -> Result<f64> {
    let ax = a.matvec(x)?;
    let r = TtVector::linear_combination(&[(1.0, b), (-1.0, &ax)])?;
    let nb = b.norm();
    if nb == 0.0 {
        return Ok(r.norm());
    }
    Ok(r.norm() / nb)
}

/// Relative rounding tolerance for the returned solution: `tol ‖b‖ / (‖A‖ ‖x‖)`, so the
/// rounding error adds at most about `tol` to the relative residual. Never looser than `tol`.
pub(crate) fn solution_round_tol(tol: f64, b_norm: f64, op_norm: f64, x_norm: f64) -> f64 {
    if op_norm > 0.0 && x_norm > 0.0 && b_norm > 0.0 {
        (tol * b_norm / (op_norm * x_norm)).clamp(1e-15, tol)
    } else {
        tol
    }
}

/// Which Krylov method to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    TtGmres,
    TtSgmresVanilla,
    TtSgmres,
    TtSpgmres,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TtGmres => "tt_gmres",
            Self::TtSgmresVanilla => "tt_sgmres_vanilla",
            Self::TtSgmres => "tt_sgmres",
            Self::TtSpgmres => "tt_spgmres",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [Self::TtGmres, Self::TtSgmresVanilla, Self::TtSgmres, Self::TtSpgmres].into_iter().find(|k| k.name() == name)
    }
}

/// Runs `kind` with the default sketch and frame derived from `cfg`.
///
/// `tt_spgmres` requires a preconditioner; the other methods reject one.
pub fn solve(
    kind: SolverKind,
    a: &TtOperator,
    b: &TtVector,
    x0: Option<&TtVector>,
    precond: Option<&dyn Preconditioner>,
    cfg: &SolverConfig,
) -> Result<(TtVector, SolveReport)> {
    cfg.validate()?;
    match (kind, precond) {
        (SolverKind::TtSpgmres, None) => Err(TtError::Invalid("tt_spgmres needs a preconditioner".into())),
        (SolverKind::TtSpgmres, Some(p)) => {
            tt_spgmres(a, p, b, x0, cfg, &cfg.default_sketch(&b.dims())?, &cfg.default_frame(b)?)
        }
        (_, Some(_)) => Err(TtError::Invalid(format!("{} does not take a preconditioner", kind.name()))),
        (SolverKind::TtGmres, None) => tt_gmres(a, b, x0, cfg),
        (SolverKind::TtSgmresVanilla, None) => tt_sgmres_vanilla(a, b, x0, cfg, &cfg.default_sketch(&b.dims())?),
        (SolverKind::TtSgmres, None) => tt_sgmres(a, b, x0, cfg, &cfg.default_sketch(&b.dims())?, &cfg.default_frame(b)?),
    }
}

pub(crate) fn check_shapes(a: &TtOperator, b: &TtVector, x0: Option<&TtVector>) -> Result<()> {
    let (rows, cols) = (a.row_dims(), a.col_dims());
    if rows != cols {
        return Err(TtError::Shape(format!("operator is not square: {rows:?} x {cols:?}")));
    }
    if b.dims() != rows {
        return Err(TtError::Shape(format!("operator dims {rows:?} vs right-hand side {:?}", b.dims())));
    }
    if let Some(x) = x0 {
        if x.dims() != rows {
            return Err(TtError::Shape(format!("initial guess dims {:?} vs {rows:?}", x.dims())));
        }
    }
    Ok(())
}

/// `b - A x0`, or `b` itself for a zero start. Returns `None` for the initial guess when
/// it is zero so callers can skip it.
pub(crate) fn initial_residual<'a>(
    a: &TtOperator,
    b: &TtVector,
    x0: Option<&'a TtVector>,
) -> Result<(TtVector, Option<&'a TtVector>)> {
    match x0 {
        Some(x) if x.norm() > 0.0 => {
            let ax = a.matvec(x)?;
            Ok((TtVector::linear_combination(&[(1.0, b), (-1.0, &ax)])?, Some(x)))
        }
        _ => Ok((b.clone(), None)),
    }
}

#[cfg(test)]
mod tests;
