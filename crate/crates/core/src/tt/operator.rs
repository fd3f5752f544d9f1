use faer::{Mat, MatRef};

use super::core::Core;
use super::vector::{checked_len, RoundSpec, TtVector, DEFAULT_DENSE_CAP};
use crate::error::{shape_err, Result, TtError};
use crate::linalg::{matmul_into, view, view_mut};

/// An order-4 operator core `left x rows x cols x right`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCore {
    left: usize,
    rows: usize,
    cols: usize,
    right: usize,
    data: Vec<f64>,
}

impl OpCore {
    pub fn zeros(left: usize, rows: usize, cols: usize, right: usize) -> Self {
        Self { left, rows, cols, right, data: vec![0.0; left * rows * cols * right] }
    }

    pub fn from_vec(left: usize, rows: usize, cols: usize, right: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), left * rows * cols * right, "operator core payload does not match its shape");
        Self { left, rows, cols, right, data }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.left, self.rows, self.cols, self.right)
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, j: usize, b: usize) -> f64 {
        self.data[((a * self.rows + i) * self.cols + j) * self.right + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, j: usize, b: usize, v: f64) {
        self.data[((a * self.rows + i) * self.cols + j) * self.right + b] = v;
    }

    /// Block `(a, b)` as a dense `rows x cols` matrix.
    pub fn block(&self, a: usize, b: usize) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(a, i, j, b))
    }

    pub fn set_block(&mut self, a: usize, b: usize, m: MatRef<'_, f64>) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                self.set(a, i, j, b, m[(i, j)]);
            }
        }
    }

    fn as_fused(&self) -> Core {
        Core::from_vec(self.left, self.rows * self.cols, self.right, self.data.clone())
    }

    fn from_fused(core: Core, rows: usize, cols: usize) -> Self {
        let (l, _, r) = core.shape();
        Self::from_vec(l, rows, cols, r, core.into_data())
    }
}

/// A linear map between TT spaces in operator TT format.
#[derive(Clone, Debug, PartialEq)]
pub struct TtOperator {
    cores: Vec<OpCore>,
}

impl TtOperator {
    pub fn new(cores: Vec<OpCore>) -> Result<Self> {
        if cores.is_empty() {
            return Err(TtError::Invalid("an operator needs at least one core".into()));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return shape_err("boundary operator ranks must be 1");
        }
        for w in cores.windows(2) {
            if w[0].right != w[1].left {
                return shape_err("operator rank chain is inconsistent");
            }
        }
        if cores.iter().any(|c| c.rows == 0 || c.cols == 0 || c.left == 0 || c.right == 0) {
            return shape_err("operator mode sizes and ranks must be positive");
        }
        Ok(Self { cores })
    }

    pub fn identity(dims: &[usize]) -> Self {
        let cores = dims
            .iter()
            .map(|&n| {
                let mut c = OpCore::zeros(1, n, n, 1);
                for i in 0..n {
                    c.set(0, i, i, 0, 1.0);
                }
                c
            })
            .collect();
        Self { cores }
    }

    pub fn zeros(row_dims: &[usize], col_dims: &[usize]) -> Result<Self> {
        if row_dims.len() != col_dims.len() {
            return shape_err("row and column mode counts differ");
        }
        Self::new(row_dims.iter().zip(col_dims).map(|(&m, &n)| OpCore::zeros(1, m, n, 1)).collect())
    }

    /// Rank-one operator `M_1 ⊗ ... ⊗ M_d`.
    pub fn kronecker(factors: &[Mat<f64>]) -> Result<Self> {
        let cores = factors
            .iter()
            .map(|f| {
                let mut c = OpCore::zeros(1, f.nrows(), f.ncols(), 1);
                c.set_block(0, 0, f.as_ref());
                c
            })
            .collect();
        Self::new(cores)
    }

    /// Kronecker sum `Σ_k I ⊗ ... ⊗ A_k ⊗ ... ⊗ I`, where `A_k` acts on mode `k`.
    /// Interior operator ranks are 2: one channel carries the identity, the other signals
    /// that the non-identity factor has already been placed.
    pub fn kron_sum(factors: &[Mat<f64>]) -> Result<Self> {
        if factors.is_empty() {
            return Err(TtError::Invalid("kron_sum needs at least one factor".into()));
        }
        for (k, f) in factors.iter().enumerate() {
            if f.nrows() != f.ncols() {
                return shape_err(format!("factor {k} is {}x{}, not square", f.nrows(), f.ncols()));
            }
        }
        let d = factors.len();
        if d == 1 {
            return Self::kronecker(factors);
        }
        let eye = |n: usize| Mat::<f64>::identity(n, n);
        let mut cores = Vec::with_capacity(d);
        for (k, f) in factors.iter().enumerate() {
            let n = f.nrows();
            let (l, r) = (if k == 0 { 1 } else { 2 }, if k == d - 1 { 1 } else { 2 });
            let mut c = OpCore::zeros(l, n, n, r);
            if k == 0 {
                // [A, I]
                c.set_block(0, 0, f.as_ref());
                c.set_block(0, 1, eye(n).as_ref());
            } else if k == d - 1 {
                // [I; A]
                c.set_block(0, 0, eye(n).as_ref());
                c.set_block(1, 0, f.as_ref());
            } else {
                // [I, 0; A, I]
                c.set_block(0, 0, eye(n).as_ref());
                c.set_block(1, 0, f.as_ref());
                c.set_block(1, 1, eye(n).as_ref());
            }
            cores.push(c);
        }
        Self::new(cores)
    }

    pub fn ndim(&self) -> usize {
        self.cores.len()
    }

    pub fn row_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.rows).collect()
    }

    pub fn col_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.cols).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        std::iter::once(1).chain(self.cores.iter().map(|c| c.right)).collect()
    }

    pub fn cores(&self) -> &[OpCore] {
        &self.cores
    }

    /// Exact `A v`; output ranks are the products of operator and vector ranks.
    pub fn matvec(&self, v: &TtVector) -> Result<TtVector> {
        if self.col_dims() != v.dims() {
            return shape_err(format!("operator columns {:?} vs vector dims {:?}", self.col_dims(), v.dims()));
        }
        let cores = self.cores.iter().zip(v.cores()).map(|(op, c)| apply_core(op, c)).collect();
        Ok(TtVector::from_cores_unchecked(cores))
    }

    fn check_same_shape(&self, other: &TtOperator) -> Result<()> {
        if self.row_dims() != other.row_dims() || self.col_dims() != other.col_dims() {
            return shape_err("operator dims differ");
        }
        Ok(())
    }

    fn to_fused(&self) -> TtVector {
        TtVector::from_cores_unchecked(self.cores.iter().map(OpCore::as_fused).collect())
    }

    fn from_fused(v: TtVector, rows: &[usize], cols: &[usize]) -> Self {
        let cores = v
            .into_cores()
            .into_iter()
            .zip(rows.iter().zip(cols))
            .map(|(c, (&m, &n))| OpCore::from_fused(c, m, n))
            .collect();
        Self { cores }
    }

    pub fn linear_combination(terms: &[(f64, &TtOperator)]) -> Result<Self> {
        let Some(&(_, first)) = terms.first() else {
            return Err(TtError::Invalid("empty linear combination".into()));
        };
        for (_, t) in &terms[1..] {
            first.check_same_shape(t)?;
        }
        let fused: Vec<TtVector> = terms.iter().map(|(_, t)| t.to_fused()).collect();
        let pairs: Vec<(f64, &TtVector)> = terms.iter().zip(&fused).map(|((c, _), f)| (*c, f)).collect();
        let sum = TtVector::linear_combination(&pairs)?;
        Ok(Self::from_fused(sum, &first.row_dims(), &first.col_dims()))
    }

    pub fn add(&self, other: &TtOperator) -> Result<Self> {
        Self::linear_combination(&[(1.0, self), (1.0, other)])
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        if let Some(last) = out.cores.last_mut() {
            last.data.iter_mut().for_each(|x| *x *= alpha);
        }
        out
    }

    /// Frobenius norm, with each core viewed as an order-3 core of mode size `rows * cols`.
    pub fn frobenius_norm(&self) -> f64 {
        self.to_fused().norm()
    }

    /// TT-SVD rounding with each core viewed as an order-3 core of mode size `rows * cols`.
    pub fn round(&self, spec: &RoundSpec) -> Self {
        let rounded = self.to_fused().round(spec);
        Self::from_fused(rounded, &self.row_dims(), &self.col_dims())
    }

    /// Dense matricization with row and column multi-indices in row-major order.
    pub fn to_dense(&self) -> Result<Mat<f64>> {
        self.to_dense_with_cap(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_with_cap(&self, cap: usize) -> Result<Mat<f64>> {
        let rows = checked_len(&self.row_dims(), cap)?;
        let cols = checked_len(&self.col_dims(), cap)?;
        checked_len(&[rows, cols], cap.saturating_mul(cap))?;
        // acc[a] is the (M x N) partial matrix for bond index a
        let mut acc: Vec<Mat<f64>> = vec![Mat::from_fn(1, 1, |_, _| 1.0)];
        for core in &self.cores {
            let (l, m, n, r) = core.shape();
            let (pm, pn) = (acc[0].nrows(), acc[0].ncols());
            let mut next = vec![Mat::<f64>::zeros(pm * m, pn * n); r];
            for a in 0..l {
                for (b, out) in next.iter_mut().enumerate() {
                    let blk = core.block(a, b);
                    if blk.norm_max() == 0.0 {
                        continue;
                    }
                    for (pi, pj) in (0..pm).flat_map(|i| (0..pn).map(move |j| (i, j))) {
                        let w = acc[a][(pi, pj)];
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..m {
                            for j in 0..n {
                                out[(pi * m + i, pj * n + j)] += w * blk[(i, j)];
                            }
                        }
                    }
                }
            }
            acc = next;
        }
        debug_assert_eq!((acc[0].nrows(), acc[0].ncols()), (rows, cols));
        Ok(acc.swap_remove(0))
    }
}

/// One core of `A v`: `G[(a, l), i, (b, l')] = Σ_j D[a, i, j, b] C[l, j, l']`.
fn apply_core(op: &OpCore, c: &Core) -> Core {
    let (ol, m, n, or) = op.shape();
    let (vl, _, vr) = c.shape();
    let width = vl * vr;
    let cm = c.mode_major(); // n x (vl * vr)
    let cm_view = view(&cm, n, width);
    let mut out = Core::zeros(ol * vl, m, or * vr);
    let mut prod = vec![0.0; m * width];
    for a in 0..ol {
        for b in 0..or {
            let base = (a * m * n) * or + b;
            // nonzeros of the (a, b) block; the Kronecker-sum cores are identities and tridiagonals
            let mut nz: Vec<(usize, usize, f64)> = Vec::new();
            let mut dense = false;
            'scan: for i in 0..m {
                for j in 0..n {
                    let v = op.data[base + (i * n + j) * or];
                    if v != 0.0 {
                        nz.push((i, j, v));
                        if nz.len() * 4 > m * n {
                            dense = true;
                            break 'scan;
                        }
                    }
                }
            }
            if !dense && nz.is_empty() {
                continue;
            }
            if dense {
                let blk = op.block(a, b);
                matmul_into(view_mut(&mut prod, m, width), blk.as_ref(), cm_view, false);
            } else {
                prod.iter_mut().for_each(|x| *x = 0.0);
                for &(i, j, v) in &nz {
                    let src = &cm[j * width..(j + 1) * width];
                    let dst = &mut prod[i * width..(i + 1) * width];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
            }
            // scatter prod[i, (l, l')] into out[(a, l), i, (b, l')]
            for l in 0..vl {
                for i in 0..m {
                    let src = &prod[i * width + l * vr..i * width + (l + 1) * vr];
                    let row = a * vl + l;
                    let start = (row * m + i) * (or * vr) + b * vr;
                    out.data_mut()[start..start + vr].copy_from_slice(src);
                }
            }
        }
    }
    out
}
