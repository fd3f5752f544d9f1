use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::core::Core;
use crate::error::{shape_err, Result, TtError};
use crate::linalg::{frob, matmul_rm, qr_r, thin_qr, thin_svd, to_row_major, truncation_rank, view};

/// Default cap on the number of entries a dense oracle may materialize.
pub const DEFAULT_DENSE_CAP: usize = 1_000_000;

/// Rounding controls: relative Frobenius tolerance plus an optional cap on every TT-rank.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundSpec {
    pub rel_tol: f64,
    #[serde(default)]
    pub max_rank: Option<usize>,
}

impl RoundSpec {
    pub fn tol(rel_tol: f64) -> Self {
        Self { rel_tol, max_rank: None }
    }

    pub fn new(rel_tol: f64, max_rank: Option<usize>) -> Result<Self> {
        let spec = Self { rel_tol, max_rank };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_max_rank(mut self, max_rank: Option<usize>) -> Self {
        self.max_rank = max_rank;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol >= 0.0) || !self.rel_tol.is_finite() {
            return Err(TtError::Invalid(format!("rel_tol must be finite and >= 0, got {}", self.rel_tol)));
        }
        if self.max_rank == Some(0) {
            return Err(TtError::Invalid("max_rank must be >= 1".into()));
        }
        Ok(())
    }
}

/// A dense d-mode array in row-major (first index slowest) order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(&dims, usize::MAX)?;
        if len != data.len() {
            return shape_err(format!("dims {dims:?} hold {len} entries but {} were given", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn norm(&self) -> f64 {
        frob(&self.data)
    }
}

pub(crate) fn checked_len(dims: &[usize], cap: usize) -> Result<usize> {
    let mut total: u128 = 1;
    for &n in dims {
        total = total.saturating_mul(n as u128);
    }
    if total > cap as u128 {
        return Err(TtError::Size { entries: total, cap });
    }
    Ok(total as usize)
}

/// A tensor in tensor-train format: `d` cores with ranks `1 = r_0, r_1, ..., r_d = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtVector {
    cores: Vec<Core>,
}

impl TtVector {
    /// Validates boundary ranks and rank chaining.
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(TtError::Invalid("a TT vector needs at least one core".into()));
        }
        if cores[0].left() != 1 || cores[cores.len() - 1].right() != 1 {
            return shape_err("boundary ranks must be 1");
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].right() != w[1].left() {
                return shape_err(format!(
                    "rank mismatch between cores {k} and {}: {} vs {}",
                    k + 1,
                    w[0].right(),
                    w[1].left()
                ));
            }
        }
        if cores.iter().any(|c| c.mode() == 0 || c.left() == 0 || c.right() == 0) {
            return shape_err("mode sizes and ranks must be positive");
        }
        Ok(Self { cores })
    }

    pub(crate) fn from_cores_unchecked(cores: Vec<Core>) -> Self {
        debug_assert!(Self::new(cores.clone()).is_ok());
        Self { cores }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self { cores: dims.iter().map(|&n| Core::zeros(1, n, 1)).collect() }
    }

    /// Separable tensor `f_1 ⊗ f_2 ⊗ ... ⊗ f_d`.
    pub fn rank_one(factors: &[Vec<f64>]) -> Result<Self> {
        let cores = factors.iter().map(|f| Core::from_vec(1, f.len(), 1, f.clone())).collect();
        Self::new(cores)
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self { cores: dims.iter().map(|&n| Core::from_vec(1, n, 1, vec![1.0; n])).collect() }
    }

    /// Gaussian random cores with the given interior ranks (`ranks.len() == d - 1`).
    pub fn random(dims: &[usize], ranks: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(dims, ranks, &mut rng, |_, _, _| 1.0)
    }

    /// Random cores where core `k` entries are N(0, 1) scaled by `std(l, n, r)`.
    pub(crate) fn random_with<R: rand::Rng>(
        dims: &[usize],
        ranks: &[usize],
        rng: &mut R,
        std: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        if dims.is_empty() || ranks.len() + 1 != dims.len() {
            return shape_err(format!("{} modes need {} interior ranks, got {}", dims.len(), dims.len().saturating_sub(1), ranks.len()));
        }
        let full: Vec<usize> = std::iter::once(1).chain(ranks.iter().copied()).chain(std::iter::once(1)).collect();
        let mut cores = Vec::with_capacity(dims.len());
        for (k, &n) in dims.iter().enumerate() {
            let (l, r) = (full[k], full[k + 1]);
            let sd = std(l, n, r);
            let data = (0..l * n * r).map(|_| { let z: f64 = StandardNormal.sample(rng); sd * z }).collect::<Vec<f64>>();
            cores.push(Core::from_vec(l, n, r, data));
        }
        Self::new(cores)
    }

    pub fn ndim(&self) -> usize {
        self.cores.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(Core::mode).collect()
    }

    /// Full rank profile `(r_0, ..., r_d)` including the unit boundary ranks.
    pub fn ranks(&self) -> Vec<usize> {
        std::iter::once(1).chain(self.cores.iter().map(Core::right)).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.cores.iter().map(Core::right).chain(self.cores.iter().map(Core::left)).max().unwrap_or(1)
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    /// Number of stored floating-point entries.
    pub fn storage(&self) -> usize {
        self.cores.iter().map(|c| c.data().len()).sum()
    }

    fn check_same_dims(&self, other: &TtVector) -> Result<()> {
        if self.ndim() != other.ndim() || self.cores.iter().zip(&other.cores).any(|(a, b)| a.mode() != b.mode()) {
            return shape_err(format!("dims {:?} vs {:?}", self.dims(), other.dims()));
        }
        Ok(())
    }

    /// TT-SVD of a dense tensor.
    pub fn from_dense(tensor: &DenseTensor, spec: &RoundSpec) -> Result<Self> {
        spec.validate()?;
        let dims = &tensor.dims;
        checked_len(dims, usize::MAX)?;
        if dims.is_empty() || dims.iter().any(|&n| n == 0) {
            return Err(TtError::Invalid("tensor must be nonempty".into()));
        }
        let d = dims.len();
        let norm = tensor.norm();
        if norm == 0.0 {
            return Ok(Self::zeros(dims));
        }
        if d == 1 {
            return Ok(Self { cores: vec![Core::from_vec(1, dims[0], 1, tensor.data.clone())] });
        }
        let delta = spec.rel_tol * norm / ((d - 1) as f64).sqrt();
        let mut cores = Vec::with_capacity(d);
        let mut rest = tensor.data.clone();
        let mut r_prev = 1;
        let mut cols = tensor.data.len();
        for &n in &dims[..d - 1] {
            cols /= n;
            let rows = r_prev * n;
            let svd = thin_svd(view(&rest, rows, cols))?;
            let r = truncation_rank(&svd.s, delta, spec.max_rank);
            cores.push(Core::from_vec(r_prev, n, r, to_row_major(svd.u.get(.., ..r))));
            let mut sv = svd.v.get(.., ..r).transpose().to_owned();
            for i in 0..r {
                for j in 0..cols {
                    sv[(i, j)] *= svd.s[i];
                }
            }
            rest = to_row_major(sv.as_ref());
            r_prev = r;
        }
        cores.push(Core::from_vec(r_prev, dims[d - 1], 1, rest));
        Self::new(cores)
    }

    /// Dense contraction of the core chain, limited to [`DEFAULT_DENSE_CAP`] entries.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_with_cap(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_with_cap(&self, cap: usize) -> Result<DenseTensor> {
        let dims = self.dims();
        checked_len(&dims, cap)?;
        let mut acc = vec![1.0];
        let mut rows = 1;
        for core in &self.cores {
            let m = matmul_rm(view(&acc, rows, core.left()), core.right_unfolding());
            rows *= core.mode();
            acc = m;
        }
        DenseTensor::new(dims, acc)
    }

    /// `Σ c_i t_i` assembled exactly by block-diagonal core concatenation. The rank profile
    /// of the result is the sum of the input profiles.
    pub fn linear_combination(terms: &[(f64, &TtVector)]) -> Result<Self> {
        let Some(&(_, first)) = terms.first() else {
            return Err(TtError::Invalid("empty linear combination".into()));
        };
        for (_, t) in &terms[1..] {
            first.check_same_dims(t)?;
        }
        let d = first.ndim();
        if d == 1 {
            let n = first.cores[0].mode();
            let mut data = vec![0.0; n];
            for (c, t) in terms {
                for (o, x) in data.iter_mut().zip(t.cores[0].data()) {
                    *o += c * x;
                }
            }
            return Ok(Self { cores: vec![Core::from_vec(1, n, 1, data)] });
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let n = first.cores[k].mode();
            let left: usize = if k == 0 { 1 } else { terms.iter().map(|(_, t)| t.cores[k].left()).sum() };
            let right: usize = if k == d - 1 { 1 } else { terms.iter().map(|(_, t)| t.cores[k].right()).sum() };
            let mut core = Core::zeros(left, n, right);
            let (mut lo, mut ro) = (0, 0);
            for (c, t) in terms {
                let src = &t.cores[k];
                let scale = if k == 0 { *c } else { 1.0 };
                for a in 0..src.left() {
                    for i in 0..n {
                        for b in 0..src.right() {
                            core.set(lo + a, i, ro + b, scale * src.get(a, i, b));
                        }
                    }
                }
                if k > 0 {
                    lo += src.left();
                }
                if k < d - 1 {
                    ro += src.right();
                }
            }
            cores.push(core);
        }
        Ok(Self { cores })
    }

    pub fn add(&self, other: &TtVector) -> Result<Self> {
        Self::linear_combination(&[(1.0, self), (1.0, other)])
    }

    pub fn sub(&self, other: &TtVector) -> Result<Self> {
        Self::linear_combination(&[(1.0, self), (-1.0, other)])
    }

    /// `alpha * self`; the factor is folded into the last core.
    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale_in_place(alpha);
        out
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        if let Some(last) = self.cores.last_mut() {
            last.scale(alpha);
        }
    }

    /// Euclidean inner product by left-to-right contraction of the two core chains.
    pub fn dot(&self, other: &TtVector) -> Result<f64> {
        self.check_same_dims(other)?;
        let mut m = vec![1.0];
        for (a, b) in self.cores.iter().zip(&other.cores) {
            // (ra x rb) * (rb x n rb') -> ra x (n rb') == (ra n) x rb'
            let x = matmul_rm(view(&m, a.left(), b.left()), b.right_unfolding());
            m = matmul_rm(a.left_unfolding().transpose(), view(&x, a.left() * a.mode(), b.right()));
        }
        Ok(m[0])
    }

    /// Frobenius norm computed from the triangular factors of a left-to-right QR sweep,
    /// which avoids the cancellation a Gram-based `sqrt(dot)` suffers on small residuals.
    pub fn norm(&self) -> f64 {
        let mut r = vec![1.0];
        let mut rows = 1;
        for core in &self.cores {
            let m = matmul_rm(view(&r, rows, core.left()), core.right_unfolding());
            let tall = view(&m, rows * core.mode(), core.right());
            let rf = qr_r(tall);
            rows = rf.nrows();
            r = to_row_major(rf.as_ref());
        }
        frob(&r)
    }

    /// True when `norm` is at round-off level relative to the product of the core norms,
    /// which bounds `||v||` from above. Exact cancellations such as `a - a` land here.
    fn is_cancellation_residue(&self, norm: f64) -> bool {
        let log_bound: f64 = self.cores.iter().map(|c| frob(c.data()).ln()).sum();
        let eps = f64::EPSILON * 16.0 * self.ndim() as f64;
        norm.ln() < log_bound + eps.ln()
    }

    /// TT-SVD rounding: a right-to-left QR sweep followed by a left-to-right truncated-SVD
    /// sweep. Each of the `d - 1` bonds is truncated with budget `rel_tol * ||v|| / sqrt(d - 1)`,
    /// so the total error is at most `rel_tol * ||v||` unless `max_rank` binds.
    pub fn round(&self, spec: &RoundSpec) -> Self {
        let d = self.ndim();
        if d == 1 {
            return self.clone();
        }
        let mut cores = right_orthogonalize(&self.cores);
        let norm = frob(cores[0].data());
        if norm == 0.0 || self.is_cancellation_residue(norm) {
            return Self::zeros(&self.dims());
        }
        let delta = spec.rel_tol * norm / ((d - 1) as f64).sqrt();
        for k in 0..d - 1 {
            let (l, n, r) = cores[k].shape();
            let svd = thin_svd(cores[k].left_unfolding()).expect("svd of a finite core");
            let keep = truncation_rank(&svd.s, delta, spec.max_rank);
            cores[k] = Core::from_vec(l, n, keep, to_row_major(svd.u.get(.., ..keep)));
            // carry diag(s) V^T into the next core
            let mut sv = svd.v.get(.., ..keep).transpose().to_owned();
            for i in 0..keep {
                for j in 0..r {
                    sv[(i, j)] *= svd.s[i];
                }
            }
            let next = &cores[k + 1];
            let data = matmul_rm(sv.as_ref(), next.right_unfolding());
            cores[k + 1] = Core::from_vec(keep, next.mode(), next.right(), data);
        }
        Self { cores }
    }

    /// Multiplies mode `k` by `matrix` (`m x n_k`, row-major). Ranks are unchanged.
    pub fn mode_product(&self, k: usize, matrix: faer::MatRef<'_, f64>) -> Result<Self> {
        if k >= self.ndim() || matrix.ncols() != self.cores[k].mode() {
            return shape_err(format!("mode product on mode {k} with a {}x{} matrix", matrix.nrows(), matrix.ncols()));
        }
        let mut out = self.clone();
        out.cores[k] = mode_multiply(&self.cores[k], matrix);
        Ok(out)
    }

}

pub(crate) fn mode_multiply(core: &Core, matrix: faer::MatRef<'_, f64>) -> Core {
    let (l, n, r) = core.shape();
    let m = matrix.nrows();
    let mm = core.mode_major();
    let prod = matmul_rm(matrix, view(&mm, n, l * r));
    Core::from_mode_major(l, m, r, &prod)
}

/// Makes cores `1..d` right-orthogonal (their right unfoldings have orthonormal rows),
/// pushing the triangular factors into core 0. Ranks shrink where the unfoldings are thin.
pub(crate) fn right_orthogonalize(cores: &[Core]) -> Vec<Core> {
    let d = cores.len();
    let mut out = cores.to_vec();
    for k in (1..d).rev() {
        let (_, n, r) = out[k].shape();
        // M = R^T Q^T with M^T = Q R
        let (q, rf) = thin_qr(out[k].right_unfolding().transpose());
        let p = q.ncols();
        out[k] = Core::from_vec(p, n, r, to_row_major(q.transpose()));
        let prev = &out[k - 1];
        let data = matmul_rm(prev.left_unfolding(), rf.transpose());
        out[k - 1] = Core::from_vec(prev.left(), prev.mode(), p, data);
    }
    out
}
