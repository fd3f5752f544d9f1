//! Thin wrappers over faer for the handful of dense kernels the TT code needs.
//!
//! All tensor payloads in this crate are stored row-major, so unfoldings of a core are
//! zero-copy `MatRef` views with a row stride.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};

use crate::error::{Result, TtError};

pub(crate) fn par() -> Par {
    faer::get_global_parallelism()
}

/// Row-major view of `data` as a `rows x cols` matrix.
pub(crate) fn view(data: &[f64], rows: usize, cols: usize) -> MatRef<'_, f64> {
    debug_assert_eq!(data.len(), rows * cols);
    MatRef::from_row_major_slice(data, rows, cols)
}

pub(crate) fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> MatMut<'_, f64> {
    debug_assert_eq!(data.len(), rows * cols);
    MatMut::from_row_major_slice_mut(data, rows, cols)
}

/// Copies any matrix into a fresh row-major buffer.
pub(crate) fn to_row_major(m: MatRef<'_, f64>) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows() * m.ncols()];
    view_mut(&mut out, m.nrows(), m.ncols()).copy_from(m);
    out
}

/// `a * b` written into a new row-major buffer.
pub(crate) fn matmul_rm(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Vec<f64> {
    let (m, n) = (a.nrows(), b.ncols());
    let mut out = vec![0.0; m * n];
    if a.ncols() > 0 {
        matmul(view_mut(&mut out, m, n), Accum::Replace, a, b, 1.0, par());
    }
    out
}

pub(crate) fn matmul_into(dst: MatMut<'_, f64>, a: MatRef<'_, f64>, b: MatRef<'_, f64>, accumulate: bool) {
    let accum = if accumulate { Accum::Add } else { Accum::Replace };
    matmul(dst, accum, a, b, 1.0, par());
}

/// Thin QR; returns `(Q, R)` with `Q` of shape `m x p`, `R` of shape `p x n`, `p = min(m, n)`.
pub(crate) fn thin_qr(a: MatRef<'_, f64>) -> (Mat<f64>, Mat<f64>) {
    let qr = a.qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R().to_owned();
    (q, r)
}

/// Only the triangular factor of a thin QR.
pub(crate) fn qr_r(a: MatRef<'_, f64>) -> Mat<f64> {
    a.qr().thin_R().to_owned()
}

pub(crate) struct ThinSvd {
    pub u: Mat<f64>,
    pub s: Vec<f64>,
    pub v: Mat<f64>,
}

/// Thin SVD with singular values sorted in decreasing order.
pub(crate) fn thin_svd(a: MatRef<'_, f64>) -> Result<ThinSvd> {
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return Ok(ThinSvd { u: Mat::zeros(m, 0), s: Vec::new(), v: Mat::zeros(n, 0) });
    }
    // Very tall inputs go through a QR first; the SVD then only sees the small factor.
    if m > 2 * n {
        let (q, r) = thin_qr(a);
        let inner = thin_svd(r.as_ref())?;
        let u = &q * &inner.u;
        return Ok(ThinSvd { u, s: inner.s, v: inner.v });
    }
    if n > 2 * m {
        let t = thin_svd(a.transpose())?;
        return Ok(ThinSvd { u: t.v, s: t.s, v: t.u });
    }
    let svd = a.thin_svd().map_err(|e| TtError::Numerical(format!("svd did not converge: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    Ok(ThinSvd { u: svd.U().to_owned(), s, v: svd.V().to_owned() })
}

/// Smallest rank whose discarded tail has Frobenius norm at most `delta`, clipped to
/// `[1, max_rank]`. `s` must be sorted in decreasing order.
pub(crate) fn truncation_rank(s: &[f64], delta: f64, max_rank: Option<usize>) -> usize {
    let mut keep = s.len();
    let mut tail = 0.0;
    let budget = delta * delta;
    while keep > 0 {
        let next = tail + s[keep - 1] * s[keep - 1];
        if next > budget {
            break;
        }
        tail = next;
        keep -= 1;
    }
    let keep = keep.max(1).min(s.len().max(1));
    match max_rank {
        Some(cap) => keep.min(cap.max(1)),
        None => keep,
    }
}

/// Moore-Penrose pseudo-inverse through the SVD; singular values below
/// `rcond * s_max` are treated as zero.
pub(crate) fn pinv(a: MatRef<'_, f64>, rcond: f64) -> Result<Mat<f64>> {
    let svd = thin_svd(a)?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let cutoff = rcond * smax;
    let (m, n) = (a.nrows(), a.ncols());
    let mut out = Mat::<f64>::zeros(n, m);
    if smax == 0.0 {
        return Ok(out);
    }
    let kept = svd.s.iter().take_while(|&&x| x > cutoff).count();
    let mut vs = svd.v.get(.., ..kept).to_owned();
    for j in 0..kept {
        let inv = 1.0 / svd.s[j];
        for i in 0..n {
            vs[(i, j)] *= inv;
        }
    }
    matmul_into(out.as_mut(), vs.as_ref(), svd.u.get(.., ..kept).transpose(), false);
    Ok(out)
}

pub(crate) fn frob(data: &[f64]) -> f64 {
    data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_rank_respects_budget_and_cap() {
        let s = [4.0, 2.0, 1.0, 0.5];
        assert_eq!(truncation_rank(&s, 0.0, None), 4);
        assert_eq!(truncation_rank(&s, 0.5, None), 3);
        // tail {1, 0.5} has norm sqrt(1.25)
        assert_eq!(truncation_rank(&s, 1.2, None), 2);
        assert_eq!(truncation_rank(&s, 1.0e9, None), 1);
        assert_eq!(truncation_rank(&s, 0.0, Some(2)), 2);
        assert_eq!(truncation_rank(&[0.0, 0.0], 0.0, None), 1);
    }

    #[test]
    fn pinv_of_full_rank_tall_matrix_is_left_inverse() {
        let a = Mat::<f64>::from_fn(7, 3, |i, j| ((i * 3 + j * 5) % 7) as f64 + if i == j { 2.0 } else { 0.0 });
        let p = pinv(a.as_ref(), 1e-12).unwrap();
        let id = &p * &a;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        for (m, n) in [(3, 11), (11, 3), (5, 5)] {
            let a = Mat::<f64>::from_fn(m, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64);
            let svd = thin_svd(a.as_ref()).unwrap();
            let k = svd.s.len();
            let mut us = svd.u.clone();
            for j in 0..k {
                for i in 0..m {
                    us[(i, j)] *= svd.s[j];
                }
            }
            let back = &us * svd.v.transpose();
            for i in 0..m {
                for j in 0..n {
                    assert!((back[(i, j)] - a[(i, j)]).abs() < 1e-12);
                }
            }
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
