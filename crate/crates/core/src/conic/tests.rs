use super::*;
use crate::linalg::{smat, svec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn solve(p: &ConicProblem) -> SolveResult {
    p.solve(&ClarabelBackend, &SolverSettings::default()).unwrap()
}

#[test]
fn lp_lower_bound() {
    let mut p = ConicProblem::new();
    let x = p.add_scalar("x");
    let e = p.scalar_expr(x);
    p.add_nonneg(vec![e.clone().minus(&LinExpr::constant(1.0))]);
    p.add_linear_objective(&e);
    let r = solve(&p);
    assert!(r.is_optimal());
    assert!((r.scalar(x) - 1.0).abs() < 1e-7);
    assert!((r.objective - 1.0).abs() < 1e-7);
}

#[test]
fn psd_two_by_two_bound() {
    let mut p = ConicProblem::new();
    let t = p.add_scalar("t");
    let te = p.scalar_expr(t);
    let m = AffineMatrix::from_fn(2, 2, |r, c| if r == c { LinExpr::constant(1.0) } else { te.clone() });
    p.add_psd(&m);
    p.add_linear_objective(&te.scaled(-1.0));
    let r = solve(&p);
    assert!(r.is_optimal());
    assert!((r.scalar(t) - 1.0).abs() < 1e-6);
}

#[test]
fn logdet_under_identity_bound() {
    let mut p = ConicProblem::new();
    let e = p.add_symmetric("E", 3, true);
    let em = p.sym_expr(e);
    p.add_psd(&AffineMatrix::identity(3).sub(&em));
    p.add_logdet_max(e, 1.0);
    let r = solve(&p);
    assert!(r.is_optimal());
    assert!(r.objective.abs() < 1e-6, "objective {}", r.objective);
    assert!((r.symmetric(e) - DMatrix::identity(3, 3)).amax() < 1e-5);
}

#[test]
fn infeasible_is_reported() {
    let mut p = ConicProblem::new();
    let x = p.add_scalar("x");
    let e = p.scalar_expr(x);
    p.add_nonneg(vec![e.clone().minus(&LinExpr::constant(1.0)), e.scaled(-1.0)]);
    let r = solve(&p);
    assert_eq!(r.status, SolveStatus::Infeasible);
}

#[test]
fn objective_update_reuses_prepared_problem() {
    // min (x-1)^2 + c x
    let mut p = ConicProblem::new();
    let x = p.add_scalar("x");
    let e = p.scalar_expr(x);
    p.add_sum_squares(1.0, vec![e.clone().minus(&LinExpr::constant(1.0))]);
    let low = p.lower(LowerOptions::default()).unwrap();
    let settings = SolverSettings::default();
    let mut prep = ClarabelBackend.prepare(&low.form, &settings).unwrap();
    for c in [0.0, 1.0, -2.0] {
        let q = low.q_with_delta(&[c]);
        let r = low.finish(prep.solve(Some(&q)).unwrap(), &settings);
        assert!((r.scalar(x) - (1.0 - c / 2.0)).abs() < 1e-6);
    }
}

#[test]
fn check_point_reports_violation() {
    let mut p = ConicProblem::new();
    let x = p.add_vector("x", 2);
    let v = p.vector_expr(x);
    p.add_soc(vec![LinExpr::constant(1.0), v.get(0, 0).clone(), v.get(1, 0).clone()]);
    assert!(p.max_violation(&[0.6, 0.8]) < 1e-12);
    assert!((p.max_violation(&[1.2, 1.6]) - 1.0).abs() < 1e-12);
}

#[test]
fn dump_lists_every_cone() {
    let mut p = ConicProblem::new();
    let e = p.add_symmetric("E", 2, true);
    p.add_logdet_max(e, 1.0);
    let d = p.dump();
    assert!(d.contains("var E sym(2,psd=true)"));
    assert!(d.contains("cone psd 2"));
    assert!(d.contains("logdet 0"));
}

fn random_least_squares(seed: u64, lift: bool) -> (Vec<f64>, f64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let mut p = ConicProblem::new();
    let x = p.add_vector("x", n);
    let xe = p.vector_expr(x);
    let a = DMatrix::from_fn(4, n, |_, _| rng.random_range(-1.0..1.0));
    let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ax = xe.left_mul(&a);
    let res: Vec<LinExpr> = (0..4).map(|k| ax.get(k, 0).clone().minus(&LinExpr::constant(b[k]))).collect();
    p.add_sum_squares(0.5 + rng.random_range(0.0..2.0), res);
    // box keeps the problem bounded even if A is rank deficient
    for k in 0..n {
        let e = xe.get(k, 0).clone();
        p.add_nonneg(vec![e.clone().plus(&LinExpr::constant(5.0)), LinExpr::constant(5.0).minus(&e)]);
    }
    let low = p.lower(LowerOptions { lift_quadratics: lift }).unwrap();
    let s = SolverSettings::default();
    let mut prep = ClarabelBackend.prepare(&low.form, &s).unwrap();
    let r = low.finish(prep.solve(None).unwrap(), &s);
    assert!(r.is_optimal());
    (r.x.clone(), p.objective_at(&r.x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lifted_quadratics_match_native(seed in any::<u64>()) {
        let (_, f_native) = random_least_squares(seed, false);
        let (_, f_lift) = random_least_squares(seed, true);
        prop_assert!((f_native - f_lift).abs() < 1e-6 * (1.0 + f_native.abs()));
    }

    #[test]
    fn logdet_matches_eigenvalue_oracle(seed in any::<u64>(), dim in 1usize..=4) {
        // max log det X s.t. X ⪯ T has optimum X = T, value log det T
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let t = &g * g.transpose() + DMatrix::identity(dim, dim) * 0.5;
        let mut p = ConicProblem::new();
        let x = p.add_symmetric("X", dim, true);
        let xm = p.sym_expr(x);
        p.add_psd(&AffineMatrix::constant(&t).sub(&xm));
        p.add_logdet_max(x, 1.0);
        let r = solve(&p);
        prop_assert!(r.is_optimal());
        let oracle: f64 = nalgebra::SymmetricEigen::new(t.clone()).eigenvalues.iter().map(|l| l.ln()).sum();
        prop_assert!((-r.objective - oracle).abs() < 1e-6, "got {} want {}", -r.objective, oracle);
        let sv = svec(&t);
        prop_assert!((smat(sv.as_slice(), dim) - &t).amax() < 1e-12);
    }
}
