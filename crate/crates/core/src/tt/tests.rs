use faer::Mat;
use proptest::prelude::*;

use super::*;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Element-wise evaluation of the core-chain product, independent of `to_dense`.
fn dense_entrywise(v: &TtVector) -> Vec<f64> {
    let dims = v.dims();
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = vec![0; dims.len()];
        let mut rem = flat;
        for k in (0..dims.len()).rev() {
            idx[k] = rem % dims[k];
            rem /= dims[k];
        }
        let mut row = vec![1.0];
        for (k, c) in v.cores().iter().enumerate() {
            let mut next = vec![0.0; c.right()];
            for (a, ra) in row.iter().enumerate() {
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += ra * c.get(a, idx[k], b);
                }
            }
            row = next;
        }
        out.push(row[0]);
    }
    out
}

fn dense_op_entrywise(op: &TtOperator) -> Mat<f64> {
    let rows = op.row_dims();
    let cols = op.col_dims();
    let (m, n): (usize, usize) = (rows.iter().product(), cols.iter().product());
    let split = |mut flat: usize, dims: &[usize]| {
        let mut idx = vec![0; dims.len()];
        for k in (0..dims.len()).rev() {
            idx[k] = flat % dims[k];
            flat /= dims[k];
        }
        idx
    };
    Mat::from_fn(m, n, |p, q| {
        let (ii, jj) = (split(p, &rows), split(q, &cols));
        let mut row = vec![1.0];
        for (k, c) in op.cores().iter().enumerate() {
            let mut next = vec![0.0; c.right()];
            for (a, ra) in row.iter().enumerate() {
                for (b, nb) in next.iter_mut().enumerate() {
                    *nb += ra * c.get(a, ii[k], jj[k], b);
                }
            }
            row = next;
        }
        row[0]
    })
}

fn kron(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows() * b.nrows(), a.ncols() * b.ncols(), |i, j| {
        a[(i / b.nrows(), j / b.ncols())] * b[(i % b.nrows(), j % b.ncols())]
    })
}

fn explicit_kron_sum(factors: &[Mat<f64>]) -> Mat<f64> {
    let n_total: usize = factors.iter().map(|f| f.nrows()).product();
    let mut sum = Mat::<f64>::zeros(n_total, n_total);
    for k in 0..factors.len() {
        let mut term = Mat::<f64>::identity(1, 1);
        for (j, f) in factors.iter().enumerate() {
            let piece = if j == k { f.clone() } else { Mat::identity(f.nrows(), f.nrows()) };
            term = kron(&term, &piece);
        }
        sum += term;
    }
    sum
}

fn tridiagonal(n: usize, seed: u64) -> Mat<f64> {
    let v = TtVector::random(&[3 * n], &[], seed).unwrap();
    let r = v.cores()[0].data().to_vec();
    Mat::from_fn(n, n, |i, j| match i as i64 - j as i64 {
        0 => r[i],
        1 => r[n + i],
        -1 => r[2 * n + i],
        _ => 0.0,
    })
}

fn matvec_dense(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

fn random_dense(dims: &[usize], seed: u64) -> DenseTensor {
    let n: usize = dims.iter().product();
    let v = TtVector::random(&[n], &[], seed).unwrap();
    DenseTensor::new(dims.to_vec(), v.cores()[0].data().to_vec()).unwrap()
}

#[test]
fn from_dense_separable_tensor_has_unit_ranks() {
    let (u, v, w) = ([1.0, 2.0], [0.5, -1.0, 3.0], [2.0, 1.0, 0.0, -1.0]);
    let mut data = Vec::new();
    for a in u {
        for b in v {
            for c in w {
                data.push(a * b * c);
            }
        }
    }
    let t = DenseTensor::new(vec![2, 3, 4], data.clone()).unwrap();
    let tt = TtVector::from_dense(&t, &RoundSpec::tol(1e-12)).unwrap();
    assert_eq!(tt.ranks(), vec![1, 1, 1, 1]);
    assert!(rel_err(&tt.to_dense().unwrap().data, &data) < 1e-14);
}

#[test]
fn from_dense_zero_tensor() {
    let t = DenseTensor::new(vec![2, 3, 2], vec![0.0; 12]).unwrap();
    for tol in [0.0, 1e-3, 0.5] {
        let tt = TtVector::from_dense(&t, &RoundSpec::tol(tol)).unwrap();
        assert_eq!(tt.ranks(), vec![1, 1, 1, 1]);
        assert!(tt.cores().iter().all(|c| c.data().iter().all(|&x| x == 0.0)));
    }
}

#[test]
fn from_dense_random_round_trip() {
    let t = random_dense(&[4, 4, 4], 11);
    let tt = TtVector::from_dense(&t, &RoundSpec::tol(1e-14)).unwrap();
    assert!(rel_err(&tt.to_dense().unwrap().data, &t.data) < 1e-13);
    let exact = TtVector::from_dense(&t, &RoundSpec::tol(0.0)).unwrap();
    assert!(rel_err(&dense_entrywise(&exact), &t.data) < 1e-13);
}

#[test]
fn from_dense_rejects_overflowing_dims() {
    let t = DenseTensor { dims: vec![usize::MAX, 4], data: vec![1.0] };
    assert!(matches!(TtVector::from_dense(&t, &RoundSpec::tol(0.0)), Err(crate::TtError::Size { .. })));
}

#[test]
fn to_dense_examples() {
    let ones = TtVector::ones(&[2, 2, 2]);
    assert_eq!(ones.to_dense().unwrap().data, vec![1.0; 8]);
    let single = TtVector::rank_one(&[vec![1.0, -2.0, 3.0]]).unwrap();
    assert_eq!(single.to_dense().unwrap().data, vec![1.0, -2.0, 3.0]);
    let big = TtVector::ones(&[100, 100, 101]);
    assert!(matches!(big.to_dense(), Err(crate::TtError::Size { .. })));
    assert!(big.to_dense_with_cap(2_000_000).is_ok());
}

#[test]
fn add_rank_profile_is_sum() {
    let a = TtVector::random(&[3, 4, 5], &[2, 3], 1).unwrap();
    let b = TtVector::random(&[3, 4, 5], &[1, 2], 2).unwrap();
    let c = a.add(&b).unwrap();
    assert_eq!(c.ranks(), vec![1, 3, 5, 1]);
    let want: Vec<f64> = dense_entrywise(&a).iter().zip(dense_entrywise(&b)).map(|(x, y)| x + y).collect();
    assert!(rel_err(&dense_entrywise(&c), &want) < 1e-13);
    assert!(a.add(&TtVector::ones(&[3, 4, 4])).is_err());
}

#[test]
fn a_minus_a_rounds_to_zero() {
    let a = TtVector::random(&[3, 4, 5, 2], &[2, 3, 2], 5).unwrap();
    let z = a.add(&a.scale(-1.0)).unwrap().round(&RoundSpec::tol(1e-12));
    assert_eq!(z.ranks(), vec![1; 5]);
    assert!(z.to_dense().unwrap().norm() < 1e-12 * a.norm());
}

#[test]
fn scale_examples() {
    let a = TtVector::random(&[3, 3, 3], &[2, 2], 9).unwrap();
    assert_eq!(a.scale(1.0).to_dense().unwrap(), a.to_dense().unwrap());
    assert_eq!(a.scale(0.0).norm(), 0.0);
    assert!((a.scale(3.0).norm() - 3.0 * a.norm()).abs() < 1e-13 * a.norm());
    assert_eq!(a.scale(2.0).ranks(), a.ranks());
}

#[test]
fn dot_and_norm_examples() {
    let ones = TtVector::ones(&[2, 2, 2]);
    assert_eq!(ones.dot(&ones).unwrap(), 8.0);
    assert!((ones.norm() - 8f64.sqrt()).abs() < 1e-15);
    assert_eq!(TtVector::zeros(&[3, 4]).norm(), 0.0);

    let a = TtVector::random(&[5, 5, 5], &[3, 2], 21).unwrap();
    let b = TtVector::random(&[5, 5, 5], &[2, 4], 22).unwrap();
    let (da, db) = (dense_entrywise(&a), dense_entrywise(&b));
    let want: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
    assert!((a.dot(&b).unwrap() - want).abs() < 1e-12 * want.abs().max(1.0));
    let nrm: f64 = da.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((a.norm() - nrm).abs() < 1e-12 * nrm);
    assert!(a.dot(&a).unwrap() >= 0.0);
}

#[test]
fn matvec_identity_and_rank_product() {
    let v = TtVector::random(&[4, 4, 4], &[3, 3], 3).unwrap();
    let id = TtOperator::identity(&[4, 4, 4]);
    let w = id.matvec(&v).unwrap();
    assert_eq!(w.ranks(), v.ranks());
    assert!(rel_err(&w.to_dense().unwrap().data, &v.to_dense().unwrap().data) < 1e-15);

    let f: Vec<Mat<f64>> = (0..3).map(|k| tridiagonal(4, 40 + k)).collect();
    let op = TtOperator::kron_sum(&f).unwrap();
    assert_eq!(op.ranks(), vec![1, 2, 2, 1]);
    let av = op.matvec(&v).unwrap();
    assert_eq!(av.ranks(), vec![1, 6, 6, 1]);
    let want = matvec_dense(&explicit_kron_sum(&f), &dense_entrywise(&v));
    assert!(rel_err(&dense_entrywise(&av), &want) < 1e-13);
}

#[test]
fn matvec_with_dense_random_operator() {
    // random operator cores exercise the dense block path
    let mut cores = Vec::new();
    let ranks = [1, 2, 3, 1];
    let dims = [(3, 4), (2, 4), (4, 4)];
    for k in 0..3 {
        let (m, n) = dims[k];
        let raw = TtVector::random(&[ranks[k] * m * n * ranks[k + 1]], &[], 100 + k as u64).unwrap();
        cores.push(OpCore::from_vec(ranks[k], m, n, ranks[k + 1], raw.cores()[0].data().to_vec()));
    }
    let op = TtOperator::new(cores).unwrap();
    let v = TtVector::random(&[4, 4, 4], &[2, 2], 8).unwrap();
    let av = op.matvec(&v).unwrap();
    assert_eq!(av.dims(), vec![3, 2, 4]);
    let want = matvec_dense(&dense_op_entrywise(&op), &dense_entrywise(&v));
    assert!(rel_err(&dense_entrywise(&av), &want) < 1e-13);
    let dense = op.to_dense().unwrap();
    let oracle = dense_op_entrywise(&op);
    assert!((&dense - &oracle).norm_max() < 1e-14);
    assert!(op.matvec(&TtVector::ones(&[4, 4])).is_err());
}

#[test]
fn round_examples() {
    let a = TtVector::random(&[4, 5, 6, 3], &[2, 2, 2], 31).unwrap();
    let kept = a.round(&RoundSpec::tol(1e-14));
    assert!(rel_err(&kept.to_dense().unwrap().data, &a.to_dense().unwrap().data) < 1e-13);

    let a = TtVector::random(&[4, 4, 4], &[2, 2], 32).unwrap();
    let twice = a.add(&a).unwrap();
    assert_eq!(twice.ranks(), vec![1, 4, 4, 1]);
    let back = twice.round(&RoundSpec::tol(1e-12));
    assert_eq!(back.ranks(), vec![1, 2, 2, 1]);

    let v = TtVector::random(&[6, 6, 6, 6], &[5, 8, 5], 33).unwrap();
    let r = v.round(&RoundSpec::tol(0.1));
    let err = rel_err(&r.to_dense().unwrap().data, &v.to_dense().unwrap().data);
    assert!(err <= 0.1, "{err}");
    assert!(r.max_rank() <= v.max_rank());
}

#[test]
fn round_with_binding_cap() {
    let v = TtVector::random(&[6, 6, 6, 6], &[5, 8, 5], 34).unwrap();
    let r = v.round(&RoundSpec::tol(0.0).with_max_rank(Some(3)));
    assert!(r.ranks().iter().all(|&x| x <= 3));
    // the cap is the only truncation, so the result equals the rank-3 TT-SVD of the dense tensor
    let oracle = TtVector::from_dense(&v.to_dense().unwrap(), &RoundSpec::tol(0.0).with_max_rank(Some(3))).unwrap();
    assert!(rel_err(&r.to_dense().unwrap().data, &oracle.to_dense().unwrap().data) < 1e-10);
}

#[test]
fn zero_rounds_to_unit_ranks() {
    let z = TtVector::random(&[3, 3, 3], &[2, 2], 1).unwrap().scale(0.0);
    let r = z.round(&RoundSpec::tol(1e-8));
    assert_eq!(r.ranks(), vec![1, 1, 1, 1]);
    assert_eq!(r.norm(), 0.0);
}

#[test]
fn operator_add_and_round() {
    let f: Vec<Mat<f64>> = (0..3).map(|k| tridiagonal(4, 50 + k)).collect();
    let a = TtOperator::kron_sum(&f).unwrap();
    let z = TtOperator::zeros(&[4, 4, 4], &[4, 4, 4]).unwrap();
    let sum = a.add(&z).unwrap();
    assert!((&sum.to_dense().unwrap() - &a.to_dense().unwrap()).norm_max() < 1e-15);

    let g: Vec<Mat<f64>> = (0..3).map(|k| tridiagonal(4, 60 + k)).collect();
    let b = TtOperator::kron_sum(&g).unwrap();
    let ab = a.add(&b).unwrap();
    assert_eq!(ab.ranks(), vec![1, 4, 4, 1]);
    let want = &explicit_kron_sum(&f) + &explicit_kron_sum(&g);
    assert!((&dense_op_entrywise(&ab) - &want).norm_max() < 1e-13);
    // a sum of Kronecker sums is a Kronecker sum
    let rounded = ab.round(&RoundSpec::tol(1e-13));
    assert_eq!(rounded.ranks(), vec![1, 2, 2, 1]);
    assert!((&dense_op_entrywise(&rounded) - &want).norm_max() < 1e-12);
}

#[test]
fn kron_sum_examples() {
    let a = tridiagonal(5, 70);
    let one = TtOperator::kron_sum(std::slice::from_ref(&a)).unwrap();
    assert!((&one.to_dense().unwrap() - &a).norm_max() == 0.0);

    let eye = Mat::<f64>::identity(3, 3);
    let two = TtOperator::kron_sum(&[eye.clone(), eye]).unwrap();
    let d = two.to_dense().unwrap();
    assert!((&d - &(Mat::<f64>::identity(9, 9) * faer::Scale(2.0))).norm_max() == 0.0);

    let f: Vec<Mat<f64>> = (0..3).map(|k| tridiagonal(4, 80 + k)).collect();
    let op = TtOperator::kron_sum(&f).unwrap();
    assert!((&op.to_dense().unwrap() - &explicit_kron_sum(&f)).norm_max() < 1e-13);
    assert!(TtOperator::kron_sum(&[Mat::<f64>::zeros(2, 3)]).is_err());
}

fn arb_tt() -> impl Strategy<Value = TtVector> {
    (1usize..=4, any::<u64>()).prop_flat_map(|(d, seed)| {
        (proptest::collection::vec(1usize..=6, d), proptest::collection::vec(1usize..=4, d - 1))
            .prop_map(move |(dims, ranks)| TtVector::random(&dims, &ranks, seed).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rounding_contract(v in arb_tt()) {
        let dense = v.to_dense().unwrap();
        for theta in [1e-2, 1e-6, 1e-10] {
            let r = v.round(&RoundSpec::tol(theta));
            let err = rel_err(&r.to_dense().unwrap().data, &dense.data);
            prop_assert!(err <= theta, "theta {theta}: err {err}");
            // idempotence of the rank profile
            prop_assert_eq!(r.round(&RoundSpec::tol(theta)).ranks(), r.ranks());
        }
    }

    #[test]
    fn arithmetic_commutes_with_densification(v in arb_tt(), seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let dims = v.dims();
        let ranks: Vec<usize> = (1..dims.len()).map(|k| 1 + (k % 3)).collect();
        let w = TtVector::random(&dims, &ranks, seed).unwrap();
        let (dv, dw) = (dense_entrywise(&v), dense_entrywise(&w));
        let sum: Vec<f64> = dv.iter().zip(&dw).map(|(a, b)| a + alpha * b).collect();
        let got = v.add(&w.scale(alpha)).unwrap();
        prop_assert!(rel_err(&dense_entrywise(&got), &sum) < 1e-12);

        let f: Vec<Mat<f64>> = dims.iter().enumerate().map(|(k, &n)| tridiagonal(n, seed ^ k as u64)).collect();
        let op = TtOperator::kron_sum(&f).unwrap();
        let av = op.matvec(&v).unwrap();
        let want = matvec_dense(&explicit_kron_sum(&f), &dv);
        prop_assert!(rel_err(&dense_entrywise(&av), &want) < 1e-12);
        let expected: Vec<usize> = op.ranks().iter().zip(v.ranks()).map(|(a, b)| a * b).collect();
        prop_assert_eq!(av.ranks(), expected);
    }

    #[test]
    fn norm_consistency(v in arb_tt()) {
        let n = v.norm();
        prop_assert!((n * n - v.dot(&v).unwrap()).abs() <= 1e-10 * n * n);
    }
}
