//! Exponential-sum approximate inverses of Kronecker sums.
//!
//! `1/z ≈ Σ α_j exp(-β_j z)` on an interval `[λ_min, λ_max]` turns into
//! `(A_1 ⊕ ... ⊕ A_d)^{-1} ≈ Σ α_j ⊗_i exp(-β_j A_i)`, which acts on a TT vector by
//! mode products and keeps the ranks of each term.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, TtError};
use crate::linalg::view;
use crate::stta::StreamFrame;
use crate::tt::{mode_multiply, RoundSpec, TtVector};

/// Right preconditioner interface: the solvers only ever need `P^{-1} v`.
pub trait Preconditioner {
    fn apply_inverse(&self, v: &TtVector) -> Result<TtVector>;

    /// `P^{-1} v` with internal roundings at relative tolerance `rel_tol` and no rank cap.
    fn apply_inverse_tol(&self, v: &TtVector, rel_tol: f64) -> Result<TtVector> {
        let _ = rel_tol;
        self.apply_inverse(v)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply_inverse(&self, v: &TtVector) -> Result<TtVector> {
        Ok(v.clone())
    }
}

/// Number of log-spaced sample points used to fit and to certify an exponential sum.
pub const EXPSUM_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct ExpSum {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `max |z E(z) - 1|` over the sample points of the fitted interval.
    pub bound: f64,
}

impl ExpSum {
    pub fn eval(&self, z: f64) -> f64 {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a * (-b * z).exp()).sum()
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `max |z E(z) - 1|` over `samples` log-spaced points of `[lo, hi]`.
    pub fn max_rel_error(&self, lo: f64, hi: f64, samples: usize) -> f64 {
        log_grid(lo, hi, samples).into_iter().map(|z| (z * self.eval(z) - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn log_grid(lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    if samples <= 1 || hi <= lo {
        return vec![lo; samples.max(1)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..samples).map(|i| (a + (b - a) * i as f64 / (samples - 1) as f64).exp()).collect()
}

fn check_interval(lambda_min: f64, lambda_max: f64, zeta: usize) -> Result<()> {
    if !(lambda_min > 0.0) || !lambda_min.is_finite() {
        return Err(TtError::Domain(format!("lambda_min must be positive, got {lambda_min}")));
    }
    if !(lambda_max >= lambda_min) || !lambda_max.is_finite() {
        return Err(TtError::Domain(format!("need lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]")));
    }
    if zeta == 0 {
        return Err(TtError::Invalid("an exponential sum needs at least one term".into()));
    }
    Ok(())
}

/// Trapezoid rule on `1/z = ∫ exp(-z e^s + s) ds` with `zeta` nodes `s_j = s_lo + j h`:
/// `α_j = h e^{s_j}`, `β_j = e^{s_j}`. The step and window are picked by a grid search
/// minimising the sampled error on the interval.
pub fn expsum_trapezoid(lambda_min: f64, lambda_max: f64, zeta: usize) -> Result<ExpSum> {
    check_interval(lambda_min, lambda_max, zeta)?;
    let ratio = lambda_max / lambda_min;
    let z = log_grid(1.0, ratio, EXPSUM_SAMPLES);
    let mut best = (f64::INFINITY, 1.0, 0.0);
    for hi in 0..35 {
        let h = 0.3 + 1.7 * hi as f64 / 34.0;
        for si in 0..61 {
            let s_lo = -ratio.ln() - 12.0 + 15.0 * si as f64 / 60.0;
            let (la, lb) = trapezoid_nodes(s_lo, h, zeta);
            let err = max_abs(&residuals(&z, &la, &lb));
            if err < best.0 {
                best = (err, h, s_lo);
            }
        }
    }
    let (la, lb) = trapezoid_nodes(best.2, best.1, zeta);
    Ok(scaled(&la, &lb, lambda_min, lambda_max))
}

/// Coefficients for `1/z` on `[lambda_min, lambda_max]`: the best trapezoid rule from
/// [`expsum_trapezoid`], refined jointly in `(log α, log β)` by Lawson-weighted
/// Levenberg-Marquardt steps towards the minimax fit. The returned bound is measured.
pub fn expsum_coeffs(lambda_min: f64, lambda_max: f64, zeta: usize) -> Result<ExpSum> {
    let start = expsum_trapezoid(lambda_min, lambda_max, zeta)?;
    let ratio = lambda_max / lambda_min;
    // work on the normalised interval [1, ratio]
    let la: Vec<f64> = start.alpha.iter().map(|a| (a * lambda_min).ln()).collect();
    let lb: Vec<f64> = start.beta.iter().map(|b| (b * lambda_min).ln()).collect();
    let z = log_grid(1.0, ratio, EXPSUM_SAMPLES);
    let (la, lb) = lawson_refine(&z, la, lb, 1500);
    let refined = scaled(&la, &lb, lambda_min, lambda_max);
    Ok(if refined.bound < start.bound { refined } else { start })
}

fn trapezoid_nodes(s_lo: f64, h: f64, zeta: usize) -> (Vec<f64>, Vec<f64>) {
    let s: Vec<f64> = (0..zeta).map(|j| s_lo + h * j as f64).collect();
    (s.iter().map(|s| h.ln() + s).collect(), s)
}

fn scaled(la: &[f64], lb: &[f64], lo: f64, hi: f64) -> ExpSum {
    let mut out = ExpSum {
        alpha: la.iter().map(|a| a.exp() / lo).collect(),
        beta: lb.iter().map(|b| b.exp() / lo).collect(),
        bound: 0.0,
    };
    out.bound = out.max_rel_error(lo, hi, EXPSUM_SAMPLES);
    out
}

fn residuals(z: &[f64], la: &[f64], lb: &[f64]) -> Vec<f64> {
    z.iter()
        .map(|&z| z * la.iter().zip(lb).map(|(a, b)| (a - z * b.exp()).exp()).sum::<f64>() - 1.0)
        .collect()
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn lawson_refine(z: &[f64], mut la: Vec<f64>, mut lb: Vec<f64>, iters: usize) -> (Vec<f64>, Vec<f64>) {
    let (m, k) = (z.len(), la.len());
    let p = 2 * k;
    let mut w = vec![1.0f64; m];
    let mut lambda = 1e-2;
    let mut r = residuals(z, &la, &lb);
    let mut best = (max_abs(&r), la.clone(), lb.clone());
    let wsse = |w: &[f64], r: &[f64]| w.iter().zip(r).map(|(w, r)| w * r * r).sum::<f64>();
    for _ in 0..iters {
        // Jacobian of r with respect to (log α, log β), weighted by sqrt(w)
        let jac = Mat::from_fn(m, p, |i, c| {
            let j = c % k;
            let term = z[i] * (la[j] - z[i] * lb[j].exp()).exp();
            let d = if c < k { term } else { -term * z[i] * lb[j].exp() };
            d * w[i].sqrt()
        });
        let rw = Mat::from_fn(m, 1, |i, _| r[i] * w[i].sqrt());
        let gram = jac.transpose() * &jac;
        let grad = jac.transpose() * &rw;
        let trace: f64 = (0..p).map(|i| gram[(i, i)]).sum();
        let current = wsse(&w, &r);
        let mut accepted = false;
        for _ in 0..30 {
            let sys = Mat::from_fn(p, p, |i, j| {
                let mut v = gram[(i, j)];
                if i == j {
                    v += lambda * gram[(i, i)] + 1e-14 * trace / p as f64;
                }
                v
            });
            let mut step = sys.partial_piv_lu().solve(&grad);
            let big = (0..p).fold(0.0f64, |a, i| a.max(step[(i, 0)].abs()));
            let shrink = if big > 0.5 { 0.5 / big } else { 1.0 };
            if !big.is_finite() {
                lambda *= 4.0;
                continue;
            }
            step *= faer::Scale(-shrink);
            let nla: Vec<f64> = (0..k).map(|j| la[j] + step[(j, 0)]).collect();
            let nlb: Vec<f64> = (0..k).map(|j| lb[j] + step[(k + j, 0)]).collect();
            let nr = residuals(z, &nla, &nlb);
            if wsse(&w, &nr) < current {
                (la, lb, r) = (nla, nlb, nr);
                lambda = (lambda / 3.0).max(1e-10);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        let err = max_abs(&r);
        if err < best.0 {
            best = (err, la.clone(), lb.clone());
        }
        if !accepted {
            break;
        }
        // Lawson update pushes weight towards the current error peaks
        let peak = err.max(f64::MIN_POSITIVE);
        w.iter_mut().zip(&r).for_each(|(w, r)| *w *= r.abs() / peak);
        let wmax = w.iter().cloned().fold(0.0, f64::max);
        w.iter_mut().for_each(|w| *w = (*w / wmax).max(1e-8));
    }
    (best.1, best.2)
}

/// `exp(m)` by scaling and squaring with a degree-13 Padé approximant (lower degrees for
/// small norms).
pub fn matrix_exp(m: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return shape_err(format!("matrix exponential of a {}x{} matrix", n, m.ncols()));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let norm1 = (0..n).map(|j| (0..n).map(|i| m[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Err(TtError::Domain("matrix exponential of a non-finite matrix".into()));
    }
    let eye = Mat::<f64>::identity(n, n);
    const THETA: [(usize, f64); 4] = [(3, 1.495585217958292e-2), (5, 2.539398330063230e-1), (7, 9.504178996162932e-1), (9, 2.097847961257068)];
    for (deg, theta) in THETA {
        if norm1 <= theta {
            return pade_low(m, &eye, deg);
        }
    }
    const THETA13: f64 = 5.371920351148152;
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let a = m.to_owned() * faer::Scale(0.5f64.powi(s));
    let b: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let sc = |c: f64, x: &Mat<f64>| x * faer::Scale(c);
    let inner_u = sc(b[13], &a6) + sc(b[11], &a4) + sc(b[9], &a2);
    let u = &a * (&a6 * &inner_u + sc(b[7], &a6) + sc(b[5], &a4) + sc(b[3], &a2) + sc(b[1], &eye));
    let inner_v = sc(b[12], &a6) + sc(b[10], &a4) + sc(b[8], &a2);
    let v = &a6 * &inner_v + sc(b[6], &a6) + sc(b[4], &a4) + sc(b[2], &a2) + sc(b[0], &eye);
    let mut r = pade_solve(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_low(m: MatRef<'_, f64>, eye: &Mat<f64>, deg: usize) -> Result<Mat<f64>> {
    let b: &[f64] = match deg {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        _ => &[17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0],
    };
    let a2 = m * m;
    let mut pow = eye.clone();
    let mut u_inner = eye * faer::Scale(b[1]);
    let mut v = eye * faer::Scale(b[0]);
    for j in 1..=deg / 2 {
        pow = &pow * &a2;
        u_inner += &pow * faer::Scale(b[2 * j + 1]);
        v += &pow * faer::Scale(b[2 * j]);
    }
    let u = m * &u_inner;
    Ok(pade_solve(&u, &v))
}

/// `(V - U)^{-1} (V + U)`.
fn pade_solve(u: &Mat<f64>, v: &Mat<f64>) -> Mat<f64> {
    let p = v + u;
    let q = v - u;
    q.partial_piv_lu().solve(&p)
}

/// Interval `[λ_min, λ_max]` meant to contain the spectrum of the Kronecker sum of `factors`.
///
/// `λ_max` sums per-factor Gershgorin upper bounds. `λ_min` sums the smallest eigenvalue of
/// each factor's symmetric part; when a symmetric part is indefinite (possible for
/// non-normal factors with real positive spectrum) the smallest real part of the factor's
/// eigenvalues is used instead. The result is floored at `1e-8 λ_max`.
pub fn spectral_interval(factors: &[Mat<f64>]) -> Result<(f64, f64)> {
    if factors.is_empty() {
        return Err(TtError::Invalid("no factors".into()));
    }
    let mut lo = 0.0;
    let mut hi = 0.0;
    for f in factors {
        let n = f.nrows();
        if f.ncols() != n {
            return shape_err(format!("factor of shape {}x{} is not square", n, f.ncols()));
        }
        hi += (0..n)
            .map(|i| f[(i, i)] + (0..n).filter(|&j| j != i).map(|j| f[(i, j)].abs()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let sym = Mat::from_fn(n, n, |i, j| 0.5 * (f[(i, j)] + f[(j, i)]));
        let eig = sym
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| TtError::Numerical(format!("symmetric eigensolver: {e:?}")))?;
        let mut smallest = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if smallest <= 0.0 {
            let ev = f.eigenvalues().map_err(|e| TtError::Numerical(format!("eigensolver: {e:?}")))?;
            smallest = ev.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        }
        lo += smallest;
    }
    Ok((lo.max(1e-8 * hi), hi))
}

/// How the `ζ` preconditioner terms are summed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulation {
    /// Add one term at a time, rounding after each addition.
    #[default]
    Sequential,
    /// Sketch every term against one frame, sum the sketches, recover once.
    Stta,
}

/// `P^{-1} = sign · Σ_j α_j ⊗_i exp(-β_j A_i)`.
///
/// `sign` lets a caller precondition an operator whose Kronecker-sum part is `-(⊕ A_i)`
/// with positive-definite-oriented `A_i`.
#[derive(Clone, Debug)]
pub struct ExpSumPreconditioner {
    factors: Vec<Mat<f64>>,
    expsum: ExpSum,
    // exps[j][i] = exp(-β_j A_i), row-major
    exps: Vec<Vec<Vec<f64>>>,
    sign: f64,
    round: RoundSpec,
    accumulation: Accumulation,
    oversampling: usize,
    seed: u64,
}

impl ExpSumPreconditioner {
    /// Fits a `zeta`-term sum on [`spectral_interval`] of `factors`.
    pub fn new(factors: Vec<Mat<f64>>, zeta: usize, round: RoundSpec) -> Result<Self> {
        let (lo, hi) = spectral_interval(&factors)?;
        let expsum = expsum_coeffs(lo, hi, zeta)?;
        Self::with_coeffs(factors, expsum, round)
    }

    pub fn with_coeffs(factors: Vec<Mat<f64>>, expsum: ExpSum, round: RoundSpec) -> Result<Self> {
        round.validate()?;
        if expsum.is_empty() || expsum.alpha.len() != expsum.beta.len() {
            return Err(TtError::Invalid("exponential sum needs matching, nonempty α and β".into()));
        }
        if let Some(b) = expsum.beta.iter().find(|b| !(**b >= 0.0)) {
            return Err(TtError::Domain(format!("exponent β = {b} must be nonnegative")));
        }
        let mut exps = Vec::with_capacity(expsum.len());
        for &b in &expsum.beta {
            let mut per_mode = Vec::with_capacity(factors.len());
            for f in &factors {
                let e = matrix_exp((f * faer::Scale(-b)).as_ref())?;
                per_mode.push(crate::linalg::to_row_major(e.as_ref()));
            }
            exps.push(per_mode);
        }
        Ok(Self { factors, expsum, exps, sign: 1.0, round, accumulation: Accumulation::Sequential, oversampling: 20, seed: 0 })
    }

    /// Rounding tolerance for `P^{-1} v` that keeps `A P^{-1} v` within `target` relative error:
    /// a relative perturbation of `P^{-1} v` is amplified by up to `lambda_max / lambda_min`.
    pub fn application_tol(target: f64, lambda_min: f64, lambda_max: f64) -> f64 {
        (target * lambda_min / lambda_max).max(f64::EPSILON)
    }

    pub fn with_sign(mut self, sign: f64) -> Self {
        self.sign = sign;
        self
    }

    pub fn with_accumulation(mut self, accumulation: Accumulation, oversampling: usize, seed: u64) -> Self {
        self.accumulation = accumulation;
        self.oversampling = oversampling;
        self.seed = seed;
        self
    }

    pub fn with_round(mut self, round: RoundSpec) -> Self {
        self.round = round;
        self
    }

    pub fn expsum(&self) -> &ExpSum {
        &self.expsum
    }

    pub fn factors(&self) -> &[Mat<f64>] {
        &self.factors
    }

    pub fn round_spec(&self) -> &RoundSpec {
        &self.round
    }

    /// Term `j` of the sum: `sign α_j ⊗_i exp(-β_j A_i) v`, same ranks as `v`.
    pub fn term(&self, j: usize, v: &TtVector) -> Result<TtVector> {
        if v.dims() != self.factors.iter().map(|f| f.nrows()).collect::<Vec<_>>() {
            return shape_err(format!("preconditioner modes do not match vector dims {:?}", v.dims()));
        }
        let mut cores: Vec<_> = v
            .cores()
            .iter()
            .zip(&self.exps[j])
            .map(|(c, e)| mode_multiply(c, view(e, c.mode(), c.mode())))
            .collect();
        let last = cores.len() - 1;
        cores[last].data_mut().iter_mut().for_each(|x| *x *= self.sign * self.expsum.alpha[j]);
        TtVector::new(cores)
    }

    /// Sum of all terms without rounding; ranks are `ζ` times those of `v`.
    pub fn apply_unrounded(&self, v: &TtVector) -> Result<TtVector> {
        let terms = (0..self.expsum.len()).map(|j| self.term(j, v)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<(f64, &TtVector)> = terms.iter().map(|t| (1.0, t)).collect();
        TtVector::linear_combination(&refs)
    }

    fn apply_sequential(&self, v: &TtVector, spec: &RoundSpec) -> Result<TtVector> {
        let mut acc = self.term(0, v)?;
        for j in 1..self.expsum.len() {
            acc = acc.add(&self.term(j, v)?)?.round(spec);
        }
        Ok(acc.round(spec))
    }

    fn apply_stta(&self, v: &TtVector) -> Result<TtVector> {
        let dims = v.dims();
        let cap = |r: usize| self.round.max_rank.map_or(r, |m| r.min(m));
        let ranks: Vec<usize> = v.ranks()[1..dims.len()].iter().map(|&r| cap(r * self.expsum.len())).collect();
        let frame = StreamFrame::new(&dims, &ranks, self.oversampling, self.seed)?;
        let mut acc = frame.sketch(&self.term(0, v)?)?;
        for j in 1..self.expsum.len() {
            acc.add_scaled(1.0, &frame.sketch(&self.term(j, v)?)?)?;
        }
        acc.recover(&self.round)
    }
}

impl Preconditioner for ExpSumPreconditioner {
    fn apply_inverse(&self, v: &TtVector) -> Result<TtVector> {
        match self.accumulation {
            Accumulation::Sequential => self.apply_sequential(v, &self.round),
            Accumulation::Stta => self.apply_stta(v),
        }
    }

    fn apply_inverse_tol(&self, v: &TtVector, rel_tol: f64) -> Result<TtVector> {
        self.apply_sequential(v, &RoundSpec::tol(rel_tol))
    }
}
