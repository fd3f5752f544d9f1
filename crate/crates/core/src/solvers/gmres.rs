use super::{check_shapes, initial_residual, solution_round_tol, true_residual, PhaseTimes, SolveReport, SolverConfig, Stopwatch, BREAKDOWN_RATIO};
use crate::error::Result;
use crate::tt::{RoundSpec, TtOperator, TtVector};

/// Rounding tolerance of iteration `k`, relaxed as the residual `relres` of the previous
/// iteration shrinks.
pub(crate) fn relaxed_tol(tol: f64, relres: f64) -> f64 {
    let eta = if relres > 0.0 { (tol / relres).clamp(1e-14, 1.0) } else { 1.0 };
    eta * tol
}

/// Incremental QR of the Hessenberg matrix by Givens rotations.
struct Givens {
    cs: Vec<(f64, f64)>,
    r: Vec<Vec<f64>>,
    g: Vec<f64>,
}

impl Givens {
    fn new(beta: f64) -> Self {
        Self { cs: Vec::new(), r: Vec::new(), g: vec![beta] }
    }

    /// Appends Hessenberg column `h` (length `k + 1`) and returns the new residual norm.
    fn push(&mut self, mut h: Vec<f64>) -> f64 {
        let k = h.len() - 1;
        for (i, &(c, s)) in self.cs.iter().enumerate() {
            let (a, b) = (h[i], h[i + 1]);
            h[i] = c * a + s * b;
            h[i + 1] = -s * a + c * b;
        }
        let (a, b) = (h[k - 1], h[k]);
        let rho = a.hypot(b);
        let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, b / rho) };
        h[k - 1] = rho;
        h.truncate(k);
        self.cs.push((c, s));
        let gk = self.g[k - 1];
        self.g[k - 1] = c * gk;
        self.g.push(-s * gk);
        self.r.push(h);
        self.g[k].abs()
    }

    /// Back substitution for the least-squares coefficients.
    fn solve(&self) -> Vec<f64> {
        let k = self.r.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = self.g[i];
            for j in i + 1..k {
                acc -= self.r[j][i] * y[j];
            }
            y[i] = if self.r[i][i] != 0.0 { acc / self.r[i][i] } else { 0.0 };
        }
        y
    }
}

/// `x0 + Σ y_i v_i` by sequential rounded additions. The basis is orthonormal up to
/// rounding, so `‖x‖ ≈ ‖x0‖ + ‖y‖`, and each addition is spread a `1/√k` share of the budget.
fn assemble(x0: Option<&TtVector>, basis: &[TtVector], y: &[f64], dims: &[usize], est: &Estimates) -> Result<TtVector> {
    let mut x = x0.cloned().unwrap_or_else(|| TtVector::zeros(dims));
    let x_norm = x0.map_or(0.0, |v| v.norm()) + y.iter().map(|c| c * c).sum::<f64>().sqrt();
    let share = (y.len().max(1) as f64).sqrt();
    let spec = RoundSpec::tol(solution_round_tol(est.tol, est.b_norm, est.op_norm, x_norm) / share);
    for (v, &c) in basis.iter().zip(y) {
        x = TtVector::linear_combination(&[(1.0, &x), (c, v)])?.round(&spec);
    }
    Ok(x)
}

struct Estimates {
    tol: f64,
    b_norm: f64,
    /// Largest `‖A v_k‖` seen so far, a lower estimate of `‖A‖`.
    op_norm: f64,
}

/// TT-GMRES with modified Gram-Schmidt and relaxed basis roundings.
///
/// Iteration `k` rounds at `η_k tol` with `η_k = tol / relres_{k-1}` clamped to
/// `[1e-14, 1]`, and stops once the Hessenberg residual falls below `tol ‖b‖`.
pub fn tt_gmres(a: &TtOperator, b: &TtVector, x0: Option<&TtVector>, cfg: &SolverConfig) -> Result<(TtVector, SolveReport)> {
    cfg.validate()?;
    check_shapes(a, b, x0)?;
    let start = std::time::Instant::now();
    let mut report = SolveReport::new("tt_gmres", cfg.seed);
    let dims = b.dims();
    let nb = b.norm();
    let (r0, x0) = initial_residual(a, b, x0)?;
    let beta = r0.norm();
    if nb == 0.0 || beta == 0.0 {
        report.converged = true;
        let x = x0.cloned().unwrap_or_else(|| TtVector::zeros(&dims));
        report.total_time = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }
    let mut basis = vec![r0.scale(1.0 / beta)];
    report.peak_resident_basis = 1;
    let mut givens = Givens::new(beta);
    let mut relres = beta / nb;
    let mut est = Estimates { tol: cfg.tol, b_norm: nb, op_norm: 0.0 };
    for k in 1..=cfg.maxit {
        let mut times = PhaseTimes::default();
        let mut clock = Stopwatch::start();
        let spec = RoundSpec::tol(relaxed_tol(cfg.tol, relres)).with_max_rank(cfg.max_rank);
        let av = a.matvec(&basis[k - 1])?;
        clock.lap(&mut times.matvec);
        let mut w = av.round(&spec);
        let scale = w.norm();
        est.op_norm = est.op_norm.max(scale);
        clock.lap(&mut times.round);
        let mut h = Vec::with_capacity(k + 1);
        for v in &basis {
            let hik = w.dot(v)?;
            h.push(hik);
            clock.lap(&mut times.orth);
            w = TtVector::linear_combination(&[(1.0, &w), (-hik, v)])?.round(&spec);
            clock.lap(&mut times.round);
        }
        let hn = w.norm();
        h.push(hn);
        relres = givens.push(h) / nb;
        clock.lap(&mut times.lsq);
        let breakdown = hn <= BREAKDOWN_RATIO * scale;
        if breakdown {
            report.breakdown = true;
            report.max_rank.push(w.max_rank());
        } else {
            let v = w.scale(1.0 / hn);
            report.max_rank.push(v.max_rank());
            basis.push(v);
            report.peak_resident_basis = report.peak_resident_basis.max(basis.len());
        }
        report.iterations = k;
        report.res_sketched.push(relres);
        if cfg.track_true_residual {
            let x = assemble(x0, &basis[..k], &givens.solve(), &dims, &est)?;
            clock.lap(&mut times.recovery);
            report.res_true.push(Some(true_residual(a, b, &x)?));
        } else {
            report.res_true.push(None);
        }
        report.times.push(times);
        report.converged = relres <= cfg.tol;
        if breakdown || (report.converged && !cfg.force_iterations) {
            break;
        }
    }
    let t = std::time::Instant::now();
    let k = report.iterations;
    let x = assemble(x0, &basis[..k], &givens.solve(), &dims, &est)?;
    report.final_recovery_time = t.elapsed().as_secs_f64();
    report.total_time = start.elapsed().as_secs_f64();
    Ok((x, report))
}
