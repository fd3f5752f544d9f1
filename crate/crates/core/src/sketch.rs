//! Khatri-Rao Gaussian sketches of TT vectors.

use faer::MatRef;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result, TtError};
use crate::linalg::{matmul_rm, view};
use crate::tt::{mode_multiply, TtVector};

/// An `s x (n_1 ... n_d)` embedding whose row `j` is the Kronecker product of row `j`
/// of each factor `S_k`. Factor entries are N(0, s^{-1/d}) so a product row has
/// entries of variance `1/s`.
#[derive(Clone, Debug)]
pub struct KhatriRaoSketch {
    rows: usize,
    dims: Vec<usize>,
    // row-major s x n_k
    factors: Vec<Vec<f64>>,
    seed: u64,
}

impl KhatriRaoSketch {
    pub fn new(dims: &[usize], rows: usize, seed: u64) -> Result<Self> {
        if rows == 0 {
            return Err(TtError::Invalid("sketch must have at least one row".into()));
        }
        if dims.is_empty() || dims.contains(&0) {
            return shape_err(format!("invalid sketch dims {dims:?}"));
        }
        let d = dims.len() as f64;
        let std = (rows as f64).powf(-0.5 / d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = dims
            .iter()
            .map(|&n| (0..rows * n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); std * z }).collect::<Vec<f64>>())
            .collect();
        Ok(Self { rows, dims: dims.to_vec(), factors, seed })
    }

    /// Builds a sketch from explicit row-major `s x n_k` factors.
    pub fn from_factors(rows: usize, factors: Vec<Vec<f64>>) -> Result<Self> {
        if rows == 0 || factors.is_empty() || factors.iter().any(|f| f.is_empty() || f.len() % rows != 0) {
            return shape_err("factor lengths must be positive multiples of the row count");
        }
        let dims = factors.iter().map(|f| f.len() / rows).collect();
        Ok(Self { rows, dims, factors, seed: 0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn factor(&self, k: usize) -> MatRef<'_, f64> {
        view(&self.factors[k], self.rows, self.dims[k])
    }

    /// `S vec(v)` without densifying `v`.
    ///
    /// Each sketch row carries a running `1 x r_k` state through the cores; per core the
    /// factor is first contracted with the physical index for all rows at once.
    pub fn apply(&self, v: &TtVector) -> Result<Vec<f64>> {
        if v.dims() != self.dims {
            return shape_err(format!("sketch dims {:?} vs vector dims {:?}", self.dims, v.dims()));
        }
        let s = self.rows;
        let mut state = vec![1.0; s];
        let mut width = 1;
        for (k, core) in v.cores().iter().enumerate() {
            let (l, n, r) = core.shape();
            debug_assert_eq!(l, width);
            let mm = core.mode_major();
            // p[j, (a, b)] = sum_i S_k[j, i] C[a, i, b]
            let p = matmul_rm(self.factor(k), view(&mm, n, l * r));
            let mut next = vec![0.0; s * r];
            for j in 0..s {
                let row = &state[j * l..(j + 1) * l];
                let pj = &p[j * l * r..(j + 1) * l * r];
                let out = &mut next[j * r..(j + 1) * r];
                for (a, &x) in row.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for (o, &c) in out.iter_mut().zip(&pj[a * r..(a + 1) * r]) {
                        *o += x * c;
                    }
                }
            }
            state = next;
            width = r;
        }
        Ok(state)
    }
}

/// Applies `S_1 (x) ... (x) S_d` mode-wise, returning a TT with the same ranks.
/// Reference path for tests; factor `k` acts on mode `k`.
pub fn kron_sketch_apply(factors: &[MatRef<'_, f64>], v: &TtVector) -> Result<TtVector> {
    let dims = v.dims();
    if factors.len() != dims.len() || factors.iter().zip(&dims).any(|(f, &n)| f.ncols() != n) {
        return shape_err("Kronecker sketch factors do not match the vector modes");
    }
    let cores = v.cores().iter().zip(factors).map(|(c, f)| mode_multiply(c, *f)).collect();
    TtVector::new(cores)
}

#[cfg(test)]
mod tests {
    use faer::Mat;

    use super::*;

    fn dense_kr(sk: &KhatriRaoSketch) -> Mat<f64> {
        let total: usize = sk.dims().iter().product();
        Mat::from_fn(sk.rows(), total, |j, mut col| {
            let mut prod = 1.0;
            for k in (0..sk.dims().len()).rev() {
                let n = sk.dims()[k];
                prod *= sk.factor(k)[(j, col % n)];
                col /= n;
            }
            prod
        })
    }

    fn dense_apply(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum()).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() <= tol * scale
    }

    #[test]
    fn deterministic_given_seed() {
        let a = KhatriRaoSketch::new(&[2, 2], 4, 17).unwrap();
        let b = KhatriRaoSketch::new(&[2, 2], 4, 17).unwrap();
        let c = KhatriRaoSketch::new(&[2, 2], 4, 18).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_ne!(a.factors, c.factors);
        assert_eq!(a.factor(1).nrows(), 4);
        assert_eq!(a.factor(1).ncols(), 2);
    }

    #[test]
    fn single_mode_is_matvec() {
        let sk = KhatriRaoSketch::new(&[6], 5, 1).unwrap();
        let v = TtVector::random(&[6], &[], 2).unwrap();
        let x = v.cores()[0].data().to_vec();
        let want = dense_apply(&sk.factor(0).to_owned(), &x);
        assert!(close(&sk.apply(&v).unwrap(), &want, 1e-14));
    }

    #[test]
    fn matches_dense_khatri_rao() {
        let sk = KhatriRaoSketch::new(&[4, 4, 4], 7, 3).unwrap();
        let v = TtVector::random(&[4, 4, 4], &[3, 2], 4).unwrap();
        let want = dense_apply(&dense_kr(&sk), &v.to_dense().unwrap().data);
        assert!(close(&sk.apply(&v).unwrap(), &want, 1e-12));
    }

    #[test]
    fn linear_and_scale_equivariant() {
        let sk = KhatriRaoSketch::new(&[3, 5, 4], 9, 5).unwrap();
        let a = TtVector::random(&[3, 5, 4], &[2, 3], 6).unwrap();
        let b = TtVector::random(&[3, 5, 4], &[1, 2], 7).unwrap();
        let (sa, sb) = (sk.apply(&a).unwrap(), sk.apply(&b).unwrap());
        let sum: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x + y).collect();
        assert!(close(&sk.apply(&a.add(&b).unwrap()).unwrap(), &sum, 1e-12));
        let scaled: Vec<f64> = sa.iter().map(|x| -2.5 * x).collect();
        assert!(close(&sk.apply(&a.scale(-2.5)).unwrap(), &scaled, 1e-14));
        assert!(sk.apply(&TtVector::ones(&[3, 5])).is_err());
    }

    #[test]
    fn kron_reference() {
        let v = TtVector::random(&[3, 4], &[2], 8).unwrap();
        let eye3 = Mat::<f64>::identity(3, 3);
        let eye4 = Mat::<f64>::identity(4, 4);
        let same = kron_sketch_apply(&[eye3.as_ref(), eye4.as_ref()], &v).unwrap();
        assert_eq!(same.to_dense().unwrap(), v.to_dense().unwrap());

        let s1 = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64 - 2.0);
        let s2 = Mat::from_fn(5, 4, |i, j| ((i + 2 * j) % 5) as f64 * 0.5);
        let out = kron_sketch_apply(&[s1.as_ref(), s2.as_ref()], &v).unwrap();
        assert_eq!(out.ranks(), v.ranks());
        let kr = Mat::from_fn(10, 12, |p, q| s1[(p / 5, q / 4)] * s2[(p % 5, q % 4)]);
        let want = dense_apply(&kr, &v.to_dense().unwrap().data);
        assert!(close(&out.to_dense().unwrap().data, &want, 1e-13));
    }

    /// Statistical check with one rerun on a fresh seed range.
    fn statistical(check: impl Fn(u64) -> bool) {
        assert!(check(0) || check(1_000_000), "statistical property failed twice");
    }

    #[test]
    fn isometry_in_expectation() {
        statistical(|base| {
            let dims = [8; 4];
            let mut sum = 0.0;
            let mut worst: (f64, f64) = (f64::INFINITY, 0.0);
            for t in 0..200 {
                let v = TtVector::random(&dims, &[3, 2, 3], base + t).unwrap();
                let v = v.scale(1.0 / v.norm());
                let sk = KhatriRaoSketch::new(&dims, 400, base + 7919 * (t + 1)).unwrap();
                let y = sk.apply(&v).unwrap();
                let sq: f64 = y.iter().map(|x| x * x).sum();
                sum += sq;
                worst = (worst.0.min(sq), worst.1.max(sq));
            }
            let mean = sum / 200.0;
            (0.8..=1.2).contains(&mean) && worst.0 >= 0.3 && worst.1 <= 3.0
        });
    }

    #[test]
    fn inner_products_preserved_in_expectation() {
        statistical(|base| {
            let dims = [6; 3];
            let a = TtVector::random(&dims, &[2, 2], base + 1).unwrap();
            let b = TtVector::random(&dims, &[3, 2], base + 2).unwrap();
            let (a, b) = (a.scale(1.0 / a.norm()), b.scale(1.0 / b.norm()));
            let exact = a.dot(&b).unwrap();
            let trials = 100;
            let mut acc = 0.0;
            for t in 0..trials {
                let sk = KhatriRaoSketch::new(&dims, 200, base + 100 + t).unwrap();
                let (sa, sb) = (sk.apply(&a).unwrap(), sk.apply(&b).unwrap());
                acc += sa.iter().zip(&sb).map(|(x, y)| x * y).sum::<f64>() - exact;
            }
            (acc / trials as f64).abs() <= 0.1
        });
    }
}
