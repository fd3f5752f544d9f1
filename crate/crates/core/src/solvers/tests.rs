use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::precond::IdentityPreconditioner;
use crate::tt::RoundSpec;
use crate::problems::{convection_diffusion, dense_reference, markov_chain, ConvectionDiffusionSpec, MarkovSpec, Problem};

fn pde(d: usize, n: usize) -> Problem {
    convection_diffusion(&ConvectionDiffusionSpec::new(d, n)).unwrap()
}

fn dense_solution(p: &Problem) -> Vec<f64> {
    let (a, b) = dense_reference(p, 1 << 12).unwrap();
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = a.partial_piv_lu().solve(&rhs);
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

fn rel_diff(x: &TtVector, reference: &[f64]) -> f64 {
    let xd = x.to_dense().unwrap().data;
    let num: f64 = xd.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    num / reference.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cfg(maxit: usize, tol: f64) -> SolverConfig {
    SolverConfig { maxit, tol, seed: 7, ..Default::default() }
}

#[test]
fn identity_system_converges_in_one_iteration() {
    let dims = [3, 4, 2];
    let a = TtOperator::identity(&dims);
    let b = TtVector::rank_one(&[vec![1.0, 2.0, 3.0], vec![1.0, -1.0, 0.5, 2.0], vec![0.3, 1.0]]).unwrap();
    let c = cfg(10, 1e-8);
    for kind in [SolverKind::TtGmres, SolverKind::TtSgmresVanilla, SolverKind::TtSgmres] {
        let (x, rep) = solve(kind, &a, &b, None, None, &c).unwrap();
        assert!(rep.converged, "{kind:?}");
        assert_eq!(rep.iterations, 1, "{kind:?}");
        let err = TtVector::linear_combination(&[(1.0, &x), (-1.0, &b)]).unwrap().norm() / b.norm();
        assert!(err < 1e-10, "{kind:?}: {err}");
    }
    let (x, rep) = solve(SolverKind::TtSpgmres, &a, &b, None, Some(&IdentityPreconditioner), &c).unwrap();
    assert_eq!(rep.iterations, 1);
    assert!(true_residual(&a, &b, &x).unwrap() < 1e-10);
}

#[test]
fn sketched_lsq_examples() {
    // Orthonormal columns: y = W^T rhs.
    let q = Mat::from_fn(4, 2, |i, j| match (i, j) {
        (0, 0) | (1, 1) => 0.6,
        (1, 0) => -0.8,
        (0, 1) => 0.8,
        _ => 0.0,
    });
    let rhs = [1.0, 2.0, 3.0, 4.0];
    let sol = sketched_lsq(q.as_ref(), &rhs).unwrap();
    assert!((sol.y[0] - (0.6 - 1.6)).abs() < 1e-14);
    assert!((sol.y[1] - (0.8 + 1.2)).abs() < 1e-14);
    assert!((sol.residual - 5.0).abs() < 1e-12);

    // Single column: y = w.rhs / w.w.
    let w = Mat::from_fn(4, 1, |i, _| (i + 1) as f64);
    let sol = sketched_lsq(w.as_ref(), &rhs).unwrap();
    assert!((sol.y[0] - 1.0).abs() < 1e-14);
    assert!(sol.residual < 1e-12);

    // Random well-conditioned: normal equations oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Mat::from_fn(30, 6, |_, _| rng.random::<f64>() - 0.5);
    let rhs: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
    let sol = sketched_lsq(w.as_ref(), &rhs).unwrap();
    let wtw = w.transpose() * &w;
    let wtb = w.transpose() * Mat::from_fn(30, 1, |i, _| rhs[i]);
    let y = wtw.partial_piv_lu().solve(&wtb);
    for j in 0..6 {
        assert!((sol.y[j] - y[(j, 0)]).abs() < 1e-10);
    }
    assert!(sketched_lsq(w.as_ref(), &rhs[..29]).is_err());
}

#[test]
fn true_residual_examples() {
    let p = pde(3, 4);
    let dims = p.rhs.dims();
    assert!(true_residual(&TtOperator::identity(&dims), &p.rhs, &p.rhs).unwrap() < 1e-14);
    assert!((true_residual(&p.operator, &p.rhs, &TtVector::zeros(&dims)).unwrap() - 1.0).abs() < 1e-14);

    let x = TtVector::random(&dims, &[2, 2], 11).unwrap();
    let (a, b) = dense_reference(&p, 1 << 12).unwrap();
    let xd = x.to_dense().unwrap().data;
    let r: f64 = (0..b.len())
        .map(|i| {
            let ax: f64 = (0..b.len()).map(|j| a[(i, j)] * xd[j]).sum();
            (b[i] - ax).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let expected = r / b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let got = true_residual(&p.operator, &p.rhs, &x).unwrap();
    assert!((got - expected).abs() < 1e-10 * expected);
}

#[test]
fn gmres_matches_dense_solve() {
    let p = pde(3, 5);
    let reference = dense_solution(&p);
    let (x, rep) = tt_gmres(&p.operator, &p.rhs, None, &cfg(100, 1e-10)).unwrap();
    assert!(rep.converged);
    assert!(rel_diff(&x, &reference) < 1e-8, "{}", rel_diff(&x, &reference));
    assert_eq!(rep.res_sketched.len(), rep.iterations);
    assert_eq!(rep.max_rank.len(), rep.iterations);
    assert_eq!(rep.times.len(), rep.iterations);
}

#[test]
fn sgmres_reaches_dense_accuracy_on_both_generators() {
    let markov = markov_chain(&MarkovSpec::new(3, 5, 1)).unwrap();
    for p in [pde(3, 5), markov] {
        for mode in [CombineMode::Explicit, CombineMode::Stta] {
            let c = SolverConfig { combine_mode: mode, solution_rank: 25, ..cfg(100, 1e-8) };
            let (x, rep) = solve(SolverKind::TtSgmres, &p.operator, &p.rhs, None, None, &c).unwrap();
            assert!(rep.converged, "{mode:?}");
            let res = true_residual(&p.operator, &p.rhs, &x).unwrap();
            assert!(res <= 1e-6, "{mode:?}: {res}");
        }
    }
}

#[test]
fn full_window_without_truncation_matches_gmres() {
    let p = pde(3, 4);
    let c = SolverConfig { window: 100, eta: 1e-6, ..cfg(60, 1e-11) };
    let (xg, _) = tt_gmres(&p.operator, &p.rhs, None, &c).unwrap();
    let (xv, rv) = solve(SolverKind::TtSgmresVanilla, &p.operator, &p.rhs, None, None, &c).unwrap();
    assert!(rv.converged);
    let rg = true_residual(&p.operator, &p.rhs, &xg).unwrap();
    let rs = true_residual(&p.operator, &p.rhs, &xv).unwrap();
    assert!(rg < 1e-8 && rs < 1e-8, "{rg} {rs}");
    let diff = TtVector::linear_combination(&[(1.0, &xg), (-1.0, &xv)]).unwrap().norm() / xg.norm();
    assert!(diff < 1e-8, "{diff}");
}

#[test]
fn identity_preconditioner_reproduces_sgmres() {
    let p = pde(3, 5);
    let c = cfg(30, 1e-6);
    let s = c.default_sketch(&p.rhs.dims()).unwrap();
    let f = c.default_frame(&p.rhs).unwrap();
    let (x1, r1) = tt_sgmres(&p.operator, &p.rhs, None, &c, &s, &f).unwrap();
    let (x2, r2) = tt_spgmres(&p.operator, &IdentityPreconditioner, &p.rhs, None, &c, &s, &f).unwrap();
    assert_eq!(r1.res_sketched, r2.res_sketched);
    assert_eq!(r1.max_rank, r2.max_rank);
    assert_eq!(x1, x2);
}

#[test]
fn window_is_respected_and_residuals_are_monotone() {
    let p = pde(3, 6);
    for window in [1, 3] {
        let c = SolverConfig { window, force_iterations: true, ..cfg(30, 1e-6) };
        let (_, rep) = solve(SolverKind::TtSgmres, &p.operator, &p.rhs, None, None, &c).unwrap();
        assert_eq!(rep.iterations, 30);
        assert!(rep.peak_resident_basis <= window + 1, "{}", rep.peak_resident_basis);
        for pair in rep.res_sketched.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{window} {:?}", rep.res_sketched);
        }
    }
    let c = SolverConfig { force_iterations: true, ..cfg(20, 1e-6) };
    let (_, rep) = solve(SolverKind::TtSgmresVanilla, &p.operator, &p.rhs, None, None, &c).unwrap();
    assert_eq!(rep.peak_resident_basis, 21);
}

#[test]
fn runs_are_deterministic() {
    let p = pde(3, 5);
    let c = SolverConfig { track_true_residual: true, ..cfg(20, 1e-7) };
    let (x1, r1) = solve(SolverKind::TtSgmres, &p.operator, &p.rhs, None, None, &c).unwrap();
    let (x2, r2) = solve(SolverKind::TtSgmres, &p.operator, &p.rhs, None, None, &c).unwrap();
    assert_eq!(x1, x2);
    assert_eq!(r1.res_sketched, r2.res_sketched);
    assert_eq!(r1.res_true, r2.res_true);
    assert!(r1.res_true.iter().all(|r| r.is_some()));
}

#[test]
fn nonzero_initial_guess_is_included_in_the_solution() {
    let p = pde(3, 5);
    let reference = dense_solution(&p);
    let x_exact = TtVector::from_dense(
        &crate::tt::DenseTensor::new(p.rhs.dims(), reference.clone()).unwrap(),
        &RoundSpec::tol(1e-3),
    )
    .unwrap();
    for kind in [SolverKind::TtGmres, SolverKind::TtSgmresVanilla, SolverKind::TtSgmres] {
        let c = SolverConfig { solution_rank: 25, ..cfg(100, 1e-8) };
        let (x, rep) = solve(kind, &p.operator, &p.rhs, Some(&x_exact), None, &c).unwrap();
        assert!(rep.converged, "{kind:?}");
        assert!(true_residual(&p.operator, &p.rhs, &x).unwrap() < 1e-6, "{kind:?}");
    }
}

#[test]
fn maxit_without_convergence_is_reported() {
    let p = pde(3, 8);
    let (_, rep) = solve(SolverKind::TtSgmres, &p.operator, &p.rhs, None, None, &cfg(3, 1e-12)).unwrap();
    assert!(!rep.converged);
    assert_eq!(rep.iterations, 3);
}

#[test]
fn config_validation_names_the_key() {
    let cases = [
        (SolverConfig { tol: 1.5, ..Default::default() }, "tol"),
        (SolverConfig { window: 0, ..Default::default() }, "window"),
        (SolverConfig { eta: 0.0, ..Default::default() }, "eta"),
        (SolverConfig { maxit: 10, sketch_rows: Some(10), ..Default::default() }, "sketch_rows"),
        (SolverConfig { maxit: 0, ..Default::default() }, "maxit"),
    ];
    for (c, key) in cases {
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains(key), "{msg}");
    }
    let parsed: SolverConfig = toml::from_str("maxit = 50\ntol = 1e-5\ncombine_mode = \"stta\"").unwrap();
    assert_eq!(parsed.sketch_rows(), 100);
    assert_eq!(parsed.combine_mode, CombineMode::Stta);
    assert!(toml::from_str::<SolverConfig>("maxitt = 5").is_err());
}

#[test]
fn solve_rejects_mismatched_shapes_and_preconditioner_use() {
    let p = pde(3, 4);
    let b = TtVector::ones(&[4, 4, 5]);
    let c = cfg(5, 1e-4);
    assert!(solve(SolverKind::TtGmres, &p.operator, &b, None, None, &c).is_err());
    assert!(solve(SolverKind::TtSpgmres, &p.operator, &p.rhs, None, None, &c).is_err());
    assert!(solve(SolverKind::TtSgmres, &p.operator, &p.rhs, None, Some(&IdentityPreconditioner), &c).is_err());
    assert_eq!(SolverKind::parse("tt_sgmres"), Some(SolverKind::TtSgmres));
    assert_eq!(SolverKind::parse("nope"), None);
}
