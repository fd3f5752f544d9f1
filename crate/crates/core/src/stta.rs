//! Streaming two-sided TT approximation.
//!
//! A [`StreamFrame`] holds two random TT tensors: `X` (recovery ranks `r`) contracted from the
//! right and `Y` (ranks `ℓ > r`) contracted from the left. Sketching a TT vector produces a
//! [`SketchPair`] of small per-core blocks; pairs from one frame can be combined linearly and
//! the combination recovered as a TT without ever forming the combined tensor.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result, TtError};
use crate::linalg::{matmul_rm, pinv, view};
use crate::tt::{Core, RoundSpec, TtVector};

/// Relative singular-value cutoff of the pseudo-inverses used in recovery.
pub const RECOVERY_RCOND: f64 = 1e-12;
/// Safety factor on `eps * cancellation` in [`SketchPair::combination_rcond`].
pub const COMBINATION_NOISE: f64 = 100.0;

/// Random Gaussian TT tensor with core `k` entries drawn from N(0, 1/(r_{k-1} n_k r_k)).
#[derive(Clone, Debug)]
pub struct TtDrm {
    tt: TtVector,
    seed: u64,
}

impl TtDrm {
    /// `ranks` are the `d - 1` interior ranks.
    pub fn new(dims: &[usize], ranks: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(dims, ranks, &mut rng, seed)
    }

    fn with_rng(dims: &[usize], ranks: &[usize], rng: &mut ChaCha8Rng, seed: u64) -> Result<Self> {
        if ranks.contains(&0) {
            return Err(TtError::Invalid("DRM ranks must be positive".into()));
        }
        let tt = TtVector::random_with(dims, ranks, rng, |l, n, r| 1.0 / ((l * n * r) as f64).sqrt())?;
        Ok(Self { tt, seed })
    }

    pub fn tt(&self) -> &TtVector {
        &self.tt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Largest meaningful rank at each interior bond: `min(prod left dims, prod right dims)`.
pub fn unfolding_rank_bounds(dims: &[usize]) -> Vec<usize> {
    (1..dims.len())
        .map(|k| {
            let left = dims[..k].iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX);
            let right = dims[k..].iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX);
            left.min(right)
        })
        .collect()
}

fn left_products(dims: &[usize]) -> Vec<usize> {
    (1..dims.len())
        .map(|k| dims[..k].iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX))
        .collect()
}

#[derive(Clone, Debug)]
pub struct StreamFrame {
    x: TtDrm,
    y: TtDrm,
}

impl StreamFrame {
    /// Frame with recovery ranks `r` and left ranks `ℓ = r + oversampling`.
    ///
    /// Ranks are clipped to what the unfoldings can hold: `r_k` to the unfolding rank bound and
    /// `ℓ_k` to the number of rows of the left unfolding. Where the latter binds `ℓ_k` may equal
    /// `r_k`; the left contraction is then square and recovery stays exact.
    pub fn new(dims: &[usize], recovery_ranks: &[usize], oversampling: usize, seed: u64) -> Result<Self> {
        if recovery_ranks.len() + 1 != dims.len() {
            return shape_err(format!("{} modes need {} recovery ranks", dims.len(), dims.len().saturating_sub(1)));
        }
        let bounds = unfolding_rank_bounds(dims);
        let rows = left_products(dims);
        let r: Vec<usize> = recovery_ranks.iter().zip(&bounds).map(|(&r, &b)| r.clamp(1, b)).collect();
        let l: Vec<usize> = r.iter().zip(&rows).map(|(&r, &m)| (r + oversampling.max(1)).min(m)).collect();
        Self::with_ranks(dims, &r, &l, seed)
    }

    /// Frame with explicit ranks; requires `ℓ_k ≥ r_k` at every bond.
    pub fn with_ranks(dims: &[usize], recovery_ranks: &[usize], left_ranks: &[usize], seed: u64) -> Result<Self> {
        if left_ranks.len() != recovery_ranks.len() {
            return shape_err("recovery and left rank profiles differ in length");
        }
        if let Some(k) = (0..left_ranks.len()).find(|&k| left_ranks[k] < recovery_ranks[k]) {
            return Err(TtError::Invalid(format!(
                "left rank {} below recovery rank {} at bond {}",
                left_ranks[k],
                recovery_ranks[k],
                k + 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = TtDrm::with_rng(dims, recovery_ranks, &mut rng, seed)?;
        let y = TtDrm::with_rng(dims, left_ranks, &mut rng, seed)?;
        Ok(Self { x, y })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.x.tt.dims()
    }

    /// Recovery ranks including the boundary ones.
    pub fn recovery_ranks(&self) -> Vec<usize> {
        self.x.tt.ranks()
    }

    pub fn left_ranks(&self) -> Vec<usize> {
        self.y.tt.ranks()
    }

    pub fn right_drm(&self) -> &TtDrm {
        &self.x
    }

    pub fn left_drm(&self) -> &TtDrm {
        &self.y
    }

    /// Two-sided sketch of `t`: one left sweep for the `Y` contractions, one right sweep for
    /// the `X` contractions, then `Ψ_k = L_k C_k R_{k+1}` and `Ω_k = L_k R_k`.
    pub fn sketch(&self, t: &TtVector) -> Result<SketchPair> {
        if t.dims() != self.dims() {
            return shape_err(format!("frame dims {:?} vs tensor dims {:?}", self.dims(), t.dims()));
        }
        let d = t.ndim();
        let (c, xc, yc) = (t.cores(), self.x.tt.cores(), self.y.tt.cores());

        // right[k]: t_k x r_k contraction of cores k.. with X; right[d] = 1
        let mut right: Vec<Vec<f64>> = vec![Vec::new(); d + 1];
        right[d] = vec![1.0];
        for k in (1..d).rev() {
            let (tl, n, tr) = c[k].shape();
            let rr = xc[k].right();
            let m = matmul_rm(c[k].left_unfolding(), view(&right[k + 1], tr, rr));
            right[k] = matmul_rm(view(&m, tl, n * rr), xc[k].right_unfolding().transpose());
        }

        let mut psi = Vec::with_capacity(d);
        let mut omega = Vec::with_capacity(d - 1);
        let mut left = vec![1.0];
        for k in 0..d {
            let (tl, n, tr) = c[k].shape();
            let lk = yc[k].left();
            // a = L_k C_k as (ℓ_k n) x t_{k+1}
            let a = matmul_rm(view(&left, lk, tl), c[k].right_unfolding());
            let rr = xc[k].right();
            let p = matmul_rm(view(&a, lk * n, tr), view(&right[k + 1], tr, rr));
            psi.push(Core::from_vec(lk, n, rr, p));
            if k + 1 < d {
                left = matmul_rm(yc[k].left_unfolding().transpose(), view(&a, lk * n, tr));
                let lr = yc[k].right();
                let om = matmul_rm(view(&left, lr, tr), view(&right[k + 1], tr, rr));
                omega.push(Mat::from_fn(lr, rr, |i, j| om[i * rr + j]));
            }
        }
        Ok(SketchPair { psi, omega })
    }
}

/// Per-core sketches of one tensor against one frame.
///
/// `psi[k]` is stored core-shaped `ℓ_k x n_k x r_{k+1}` (with `ℓ_0 = r_d = 1`), `omega[k-1]`
/// is `ℓ_k x r_k` for the interior bonds `k = 1..d-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchPair {
    psi: Vec<Core>,
    omega: Vec<Mat<f64>>,
}

impl SketchPair {
    pub fn psi(&self) -> &[Core] {
        &self.psi
    }

    pub fn omega(&self) -> &[Mat<f64>] {
        &self.omega
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            psi: self.psi.iter().map(|c| Core::zeros(c.left(), c.mode(), c.right())).collect(),
            omega: self.omega.iter().map(|m| Mat::zeros(m.nrows(), m.ncols())).collect(),
        }
    }

    fn same_frame(&self, other: &Self) -> bool {
        self.psi.len() == other.psi.len()
            && self.psi.iter().zip(&other.psi).all(|(a, b)| a.shape() == b.shape())
            && self.omega.iter().zip(&other.omega).all(|(a, b)| a.shape() == b.shape())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &SketchPair) -> Result<()> {
        if !self.same_frame(other) {
            return shape_err("sketch pairs come from different frames");
        }
        for (a, b) in self.psi.iter_mut().zip(&other.psi) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += alpha * y);
        }
        for (a, b) in self.omega.iter_mut().zip(&other.omega) {
            *a += faer::Scale(alpha) * b;
        }
        Ok(())
    }

    /// Pseudo-inverse cutoff for recovering `combined = Σ coeffs[i] * pairs[i]`: the default
    /// [`RECOVERY_RCOND`], raised to the rounding noise left by cancellation in the sum.
    pub fn combination_rcond(pairs: &[&SketchPair], coeffs: &[f64], combined: &SketchPair) -> f64 {
        let mut worst: f64 = 1.0;
        for (k, om) in combined.omega.iter().enumerate() {
            let total = om.norm_l2();
            let gross: f64 = pairs.iter().zip(coeffs).map(|(p, c)| c.abs() * p.omega[k].norm_l2()).sum();
            if total > 0.0 {
                worst = worst.max(gross / total);
            }
        }
        RECOVERY_RCOND.max(COMBINATION_NOISE * f64::EPSILON * worst)
    }

    /// Weighted sum `Σ coeffs[i] * pairs[i]`.
    pub fn combine(pairs: &[&SketchPair], coeffs: &[f64]) -> Result<SketchPair> {
        if pairs.is_empty() || pairs.len() != coeffs.len() {
            return Err(TtError::Invalid(format!("{} pairs with {} coefficients", pairs.len(), coeffs.len())));
        }
        let mut out = pairs[0].zeros_like();
        for (p, &c) in pairs.iter().zip(coeffs) {
            out.add_scaled(c, p)?;
        }
        Ok(out)
    }

    /// Recovers the TT whose core `k` has right unfolding `Ω_k^† Ψ_k` (`Ω_0 = 1`), then rounds.
    pub fn recover(&self, spec: &RoundSpec) -> Result<TtVector> {
        self.recover_with_rcond(spec, RECOVERY_RCOND)
    }

    /// [`SketchPair::recover`] with an explicit relative cutoff for the pseudo-inverses.
    pub fn recover_with_rcond(&self, spec: &RoundSpec, rcond: f64) -> Result<TtVector> {
        let dims: Vec<usize> = self.psi.iter().map(|c| c.mode()).collect();
        let psi_zero = self.psi.iter().all(|c| c.data().iter().all(|&x| x == 0.0));
        if psi_zero {
            return Ok(TtVector::zeros(&dims));
        }
        let mut cores = Vec::with_capacity(self.psi.len());
        cores.push(self.psi[0].clone());
        for (k, om) in self.omega.iter().enumerate() {
            if om.norm_max() == 0.0 {
                return Err(TtError::DegenerateRecovery(format!("Ω at bond {} vanishes while Ψ does not", k + 1)));
            }
            let p = &self.psi[k + 1];
            let inv = pinv(om.as_ref(), rcond)?;
            let data = matmul_rm(inv.as_ref(), p.right_unfolding());
            cores.push(Core::from_vec(inv.nrows(), p.mode(), p.right(), data));
        }
        Ok(TtVector::new(cores)?.round(spec))
    }
}
