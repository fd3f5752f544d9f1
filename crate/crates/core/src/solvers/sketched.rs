use std::cell::Cell;
use std::collections::VecDeque;
use std::ops::Deref;

use faer::Mat;

use super::{
    check_shapes, initial_residual, sketched_lsq, solution_round_tol, true_residual, CombineMode, PhaseTimes, SolveReport, SolverConfig,
    Stopwatch, BREAKDOWN_RATIO, CONDITION_WARNING, SOLUTION_RCONDS,
};
use crate::error::{Result, TtError};
use crate::precond::Preconditioner;
use crate::sketch::KhatriRaoSketch;
use crate::stta::{SketchPair, StreamFrame};
use crate::tt::{RoundSpec, TtOperator, TtVector};

struct Variant<'a> {
    name: &'static str,
    frame: Option<&'a StreamFrame>,
    precond: Option<&'a dyn Preconditioner>,
}

/// Sketched GMRES with truncated Gram-Schmidt; the solution is built by sequential
/// rounded additions over the full stored basis.
pub fn tt_sgmres_vanilla(
    a: &TtOperator,
    b: &TtVector,
    x0: Option<&TtVector>,
    cfg: &SolverConfig,
    sketch: &KhatriRaoSketch,
) -> Result<(TtVector, SolveReport)> {
    run(Variant { name: "tt_sgmres_vanilla", frame: None, precond: None }, a, b, x0, cfg, sketch)
}

/// Sketched GMRES that keeps only a window of basis TT-vectors plus an STTA sketch of each,
/// recovering the solution in one shot.
pub fn tt_sgmres(
    a: &TtOperator,
    b: &TtVector,
    x0: Option<&TtVector>,
    cfg: &SolverConfig,
    sketch: &KhatriRaoSketch,
    frame: &StreamFrame,
) -> Result<(TtVector, SolveReport)> {
    run(Variant { name: "tt_sgmres", frame: Some(frame), precond: None }, a, b, x0, cfg, sketch)
}

/// Right-preconditioned [`tt_sgmres`]: the Krylov space is built for `A P^{-1}` and the
/// recovered combination is mapped back through `P^{-1}`.
pub fn tt_spgmres(
    a: &TtOperator,
    precond: &dyn Preconditioner,
    b: &TtVector,
    x0: Option<&TtVector>,
    cfg: &SolverConfig,
    sketch: &KhatriRaoSketch,
    frame: &StreamFrame,
) -> Result<(TtVector, SolveReport)> {
    run(Variant { name: "tt_spgmres", frame: Some(frame), precond: Some(precond) }, a, b, x0, cfg, sketch)
}

/// Live count of full basis TT-vectors, maintained by [`Held`] on creation and drop.
#[derive(Default)]
struct Audit {
    live: Cell<usize>,
    peak: Cell<usize>,
}

/// A basis TT-vector registered with an [`Audit`].
struct Held<'a> {
    v: TtVector,
    audit: &'a Audit,
}

impl<'a> Held<'a> {
    fn new(v: TtVector, audit: &'a Audit) -> Self {
        let live = audit.live.get() + 1;
        audit.live.set(live);
        audit.peak.set(audit.peak.get().max(live));
        Self { v, audit }
    }
}

impl Drop for Held<'_> {
    fn drop(&mut self) {
        self.audit.live.set(self.audit.live.get() - 1);
    }
}

impl Deref for Held<'_> {
    type Target = TtVector;

    fn deref(&self) -> &TtVector {
        &self.v
    }
}

struct State<'a> {
    variant: &'a Variant<'a>,
    cfg: &'a SolverConfig,
    a: &'a TtOperator,
    sketch: &'a KhatriRaoSketch,
    /// `S b`.
    sb: Vec<f64>,
    dims: Vec<usize>,
    x0: Option<&'a TtVector>,
    x0_pair: Option<SketchPair>,
    /// Basis vectors still held in full; `resident[j]` is basis vector `offset + j`.
    resident: VecDeque<Held<'a>>,
    audit: &'a Audit,
    offset: usize,
    pairs: Vec<SketchPair>,
    b_norm: f64,
    /// `‖A‖_F / sqrt(N)`, a cheap scale for `‖A‖`.
    a_norm: f64,
}

impl State<'_> {
    fn keeps_all(&self) -> bool {
        self.variant.frame.is_none()
    }

    fn push_basis(&mut self, v: TtVector) -> Result<()> {
        if let Some(frame) = self.variant.frame {
            self.pairs.push(frame.sketch(&v)?);
        }
        self.resident.push_back(Held::new(v, self.audit));
        Ok(())
    }

    /// Drops basis vectors that have left the orthogonalization window.
    fn trim(&mut self) {
        if self.keeps_all() {
            return;
        }
        while self.resident.len() > self.cfg.window {
            self.resident.pop_front();
            self.offset += 1;
        }
    }

    fn window_start(&self) -> usize {
        self.resident.len().saturating_sub(self.cfg.window)
    }

    /// `x0 + P^{-1} V y`, with `V y` formed according to the variant. `op_norm` is the
    /// largest sketched column norm of `W`, standing in for `‖A P^{-1}‖`.
    fn solution(&self, y: &[f64], sb_norm: f64, op_norm: f64) -> Result<TtVector> {
        let tol = self.cfg.tol;
        let Some(_) = self.variant.frame else {
            let mut x = self.x0.cloned().unwrap_or_else(|| TtVector::zeros(&self.dims));
            let spec = RoundSpec::tol(tol);
            for (v, &c) in self.resident.iter().zip(y) {
                x = TtVector::linear_combination(&[(1.0, &x), (c, &v.v)])?.round(&spec);
            }
            return Ok(x);
        };
        let mut refs: Vec<&SketchPair> = self.pairs[..y.len()].iter().collect();
        let mut coeffs = y.to_vec();
        if let Some(p) = &self.x0_pair {
            refs.push(p);
            coeffs.push(1.0);
        }
        let combined = SketchPair::combine(&refs, &coeffs)?;
        let rconds = match self.cfg.recovery_rcond {
            Some(r) => vec![r],
            None => {
                let floor = SketchPair::combination_rcond(&refs, &coeffs, &combined);
                let mut r: Vec<f64> = SOLUTION_RCONDS.iter().map(|c| c.max(floor)).collect();
                r.dedup();
                r
            }
        };
        let single = rconds.len() == 1;
        let mut best: Option<(f64, TtVector)> = None;
        let mut x_theta = None;
        for rcond in rconds {
            let u = combined.recover_with_rcond(&RoundSpec::tol(f64::EPSILON), rcond)?;
            let theta = solution_round_tol(tol, sb_norm, op_norm, u.norm());
            let u = u.round(&RoundSpec::tol(theta).with_max_rank(Some(self.cfg.solution_rank)));
            let x = match self.variant.precond {
                None => u,
                Some(p) => {
                    // The basis applications of P^{-1} were rounded at the basis tolerance; the
                    // final one must not add more than about `tol` to the unpreconditioned residual.
                    let theta = match x_theta {
                        Some(t) => t,
                        None => {
                            let x_norm = p.apply_inverse(&u)?.norm() + self.x0.map_or(0.0, |x| x.norm());
                            *x_theta.insert(solution_round_tol(tol, self.b_norm, self.a_norm, x_norm))
                        }
                    };
                    let x = p.apply_inverse_tol(&u, theta)?;
                    match self.x0 {
                        Some(x0) => TtVector::linear_combination(&[(1.0, x0), (1.0, &x)])?.round(&RoundSpec::tol(theta)),
                        None => x,
                    }
                }
            };
            if single {
                return Ok(x);
            }
            let res = self.sketched_residual(&x)?;
            if best.as_ref().is_none_or(|(r, _)| res < *r) {
                best = Some((res, x));
            }
        }
        Ok(best.expect("at least one cutoff").1)
    }

    /// `‖S (b - A x)‖`.
    fn sketched_residual(&self, x: &TtVector) -> Result<f64> {
        let sax = self.sketch.apply(&self.a.matvec(x)?)?;
        Ok(self.sb.iter().zip(&sax).map(|(b, ax)| (b - ax) * (b - ax)).sum::<f64>().sqrt())
    }
}

fn run(
    variant: Variant<'_>,
    a: &TtOperator,
    b: &TtVector,
    x0: Option<&TtVector>,
    cfg: &SolverConfig,
    sketch: &KhatriRaoSketch,
) -> Result<(TtVector, SolveReport)> {
    cfg.validate()?;
    check_shapes(a, b, x0)?;
    if sketch.dims() != b.dims() {
        return Err(TtError::Shape(format!("sketch dims {:?} vs right-hand side {:?}", sketch.dims(), b.dims())));
    }
    if sketch.rows() <= cfg.maxit {
        return Err(TtError::Invalid(format!("sketch_rows: {} rows cannot hold {} iterations", sketch.rows(), cfg.maxit)));
    }
    if let Some(frame) = variant.frame {
        if frame.dims() != b.dims() {
            return Err(TtError::Shape(format!("frame dims {:?} vs right-hand side {:?}", frame.dims(), b.dims())));
        }
    }
    let start = std::time::Instant::now();
    let mut report = SolveReport::new(variant.name, cfg.seed);
    if variant.frame.is_none() && cfg.combine_mode == CombineMode::Stta {
        report.warnings.push("combine_mode stta needs a recovery frame; using explicit combination".into());
    }
    let combine_stta = variant.frame.is_some() && cfg.combine_mode == CombineMode::Stta;
    let dims = b.dims();
    let (r0, x0) = initial_residual(a, b, x0)?;
    let sb = sketch.apply(b)?;
    let sb_norm = norm(&sb);
    let sr0 = match x0 {
        Some(_) => sketch.apply(&r0)?,
        None => sb.clone(),
    };
    let x0_pair = match (x0, variant.frame, variant.precond) {
        (Some(x), Some(frame), None) => Some(frame.sketch(x)?),
        _ => None,
    };
    let audit = Audit::default();
    let mut state = State {
        variant: &variant,
        cfg,
        a,
        sketch,
        sb: sb.clone(),
        dims: dims.clone(),
        x0,
        x0_pair,
        resident: VecDeque::new(),
        audit: &audit,
        offset: 0,
        pairs: Vec::new(),
        b_norm: b.norm(),
        a_norm: if variant.precond.is_some() {
            a.frobenius_norm() / dims.iter().map(|&n| n as f64).product::<f64>().sqrt()
        } else {
            0.0
        },
    };
    if sb_norm == 0.0 || norm(&sr0) == 0.0 {
        report.converged = true;
        let x = x0.cloned().unwrap_or_else(|| TtVector::zeros(&dims));
        report.total_time = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }
    let spec = RoundSpec::tol(cfg.eta * cfg.tol).with_max_rank(cfg.max_rank);
    let v1 = r0.round(&spec);
    let n1 = v1.norm();
    state.push_basis(v1.scale(1.0 / n1))?;

    let mut w_cols: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    let mut warned = false;
    let mut op_norm: f64 = 0.0;
    for k in 1..=cfg.maxit {
        let mut times = PhaseTimes::default();
        let mut clock = Stopwatch::start();
        let vk = state.resident.back().expect("basis is never empty");
        let av = match variant.precond {
            Some(p) => a.matvec(&p.apply_inverse(vk)?)?,
            None => a.matvec(vk)?,
        };
        clock.lap(&mut times.matvec);
        let sav = sketch.apply(&av)?;
        let scale = norm(&sav);
        op_norm = op_norm.max(scale);
        w_cols.push(sav);
        clock.lap(&mut times.sketch);

        let lo = state.window_start();
        let mut h = Vec::with_capacity(state.resident.len() - lo);
        for v in state.resident.range(lo..) {
            h.push(av.dot(v)?);
        }
        let z = if combine_stta {
            let frame = variant.frame.expect("stta combination needs a frame");
            let pair = frame.sketch(&av)?;
            clock.lap(&mut times.sketch);
            let mut refs = vec![&pair];
            refs.extend(&state.pairs[state.offset + lo..]);
            let mut coeffs = vec![1.0];
            coeffs.extend(h.iter().map(|hj| -hj));
            let combined = SketchPair::combine(&refs, &coeffs)?;
            clock.lap(&mut times.orth);
            combined.recover_with_rcond(&spec, SketchPair::combination_rcond(&refs, &coeffs, &combined))?
        } else {
            let mut terms = vec![(1.0, &av)];
            terms.extend(h.iter().zip(state.resident.range(lo..)).map(|(&hj, v)| (-hj, &v.v)));
            let z = TtVector::linear_combination(&terms)?;
            clock.lap(&mut times.orth);
            z.round(&spec)
        };
        let hn = z.norm();
        clock.lap(&mut times.round);
        let breakdown = hn <= BREAKDOWN_RATIO * scale;
        if breakdown {
            report.breakdown = true;
            report.max_rank.push(z.max_rank());
        } else {
            let v = z.scale(1.0 / hn);
            report.max_rank.push(v.max_rank());
            state.push_basis(v)?;
            clock.lap(&mut times.sketch);
            state.trim();
        }

        let w = Mat::from_fn(sketch.rows(), k, |i, j| w_cols[j][i]);
        let lsq = sketched_lsq(w.as_ref(), &sr0)?;
        clock.lap(&mut times.lsq);
        if lsq.condition_ratio < CONDITION_WARNING && !warned {
            warned = true;
            report.warnings.push(format!(
                "sketched basis image is ill-conditioned at iteration {k} (sigma_min/sigma_max = {:.3e})",
                lsq.condition_ratio
            ));
        }
        let relres = lsq.residual / sb_norm;
        y = lsq.y;
        report.iterations = k;
        report.res_sketched.push(relres);
        if cfg.track_true_residual {
            let x = state.solution(&y, sb_norm, op_norm)?;
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
    let x = state.solution(&y, sb_norm, op_norm)?;
    report.final_recovery_time = t.elapsed().as_secs_f64();
    report.peak_resident_basis = audit.peak.get();
    report.total_time = start.elapsed().as_secs_f64();
    Ok((x, report))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
