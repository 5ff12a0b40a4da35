use dsmpc::admm::{AdmmParams, ConicAgent, ConsensusAgent};
use dsmpc::conic::{Cone, ConicProblem, LinExpr, SolverSettings};
use dsmpc::error::MpcError;
use dsmpc::local_mpc::{
    build_local_problem, check_feedback_feasibility, solve_centralized, solve_distributed, solve_local, ConsensusLayout,
    InitCondition, MpcContext,
};
use dsmpc::model::build_network;
use nalgebra::DVector;
use proptest::prelude::*;

mod common;

fn scalar_ctx(a: f64, c: f64, constraint: Option<(f64, f64, f64)>, horizon: usize) -> MpcContext {
    let cfg = common::config_from_toml(&common::scalar_toml(a, 1.0, c, constraint, horizon));
    let ing = common::design_for(&cfg);
    MpcContext::new(build_network(&cfg).unwrap(), ing, horizon, cfg.mpc.epsilon).unwrap()
}

fn with_horizon(ctx: &MpcContext, horizon: usize) -> MpcContext {
    MpcContext::new(ctx.net.clone(), ctx.ingredients.clone(), horizon, ctx.epsilon).unwrap()
}

fn local_solve(ctx: &MpcContext, i: usize, x: &[DVector<f64>], alpha: f64) -> Result<dsmpc::local_mpc::LocalTrajectory, MpcError> {
    let init = InitCondition::feedback(x);
    let layout = ConsensusLayout::new(&ctx.net, ctx.horizon);
    let lp = build_local_problem(ctx, &layout, i, &init, alpha)?;
    solve_local(&lp, ctx, &init)
}

#[test]
fn benchmark_agent_problem_has_one_covariance_lmi_per_stage() {
    let ctx = common::benchmark_ctx();
    let init = InitCondition::feedback(&common::benchmark_x0());
    let layout = ConsensusLayout::new(&ctx.net, ctx.horizon);
    let lp = build_local_problem(&ctx, &layout, 0, &init, ctx.ingredients.subsystems[0].alpha0).unwrap();
    let cones = lp.problem.cones();
    // [[Σ⁺ − A_K Σ̂ A_Kᵀ − C_K Σ̂ C_Kᵀ, g], [gᵀ, 1]] for n = 2
    assert_eq!(cones.iter().filter(|c| **c == Cone::Psd(3)).count(), 15);
    assert_eq!(cones.iter().filter(|c| matches!(c, Cone::Zero(2))).count(), 15);
    assert_eq!(cones.iter().filter(|c| matches!(c, Cone::SecondOrder(_))).count(), 1);
    // stage 0 is constant under the feedback strategy; rows t = 1..N−1 remain
    assert_eq!(cones.iter().filter(|c| matches!(c, Cone::Nonneg(_))).count(), 14);
    assert_eq!(lp.vars.v.len(), 15);
}

#[test]
fn zero_terminal_level_forces_origin() {
    let ctx = common::benchmark_ctx();
    let traj = local_solve(&ctx, 0, &common::benchmark_x0(), 0.0).unwrap();
    let zn = &traj.z[&0][ctx.horizon];
    assert!(zn.amax() <= 1e-5, "z(N) = {zn}");
}

#[test]
fn origin_is_the_unconstrained_optimum() {
    let ctx = scalar_ctx(0.9, 0.1, None, 5);
    let x = vec![DVector::zeros(1)];
    let traj = local_solve(&ctx, 0, &x, ctx.ingredients.alpha).unwrap();
    assert!(traj.objective.abs() <= 1e-6);
    assert!(traj.v.iter().all(|v| v.amax() <= 1e-5));
    assert!(traj.z[&0].iter().all(|z| z.amax() <= 1e-5));
}

#[test]
fn unreachable_terminal_set_is_locally_infeasible() {
    let ctx = with_horizon(&common::benchmark_ctx(), 1);
    match local_solve(&ctx, 2, &common::benchmark_x0(), 0.0) {
        Err(MpcError::LocalInfeasible { agent: 2 }) => {}
        other => panic!("expected local infeasibility, got {other:?}"),
    }
}

#[test]
fn feasibility_flags() {
    let ctx = common::benchmark_ctx();
    let x0 = common::benchmark_x0();
    for i in 0..3 {
        assert!(check_feedback_feasibility(&ctx, i, &x0, ctx.ingredients.subsystems[i].alpha0));
    }
    // H x = 1 exceeds the tightened bound of the first subsystem's row at stage 0
    let short = with_horizon(&ctx, 1);
    let mut bad = x0.clone();
    bad[0] = DVector::from_vec(vec![-1.0, 0.0]);
    assert!(!check_feedback_feasibility(&short, 0, &bad, short.ingredients.subsystems[0].alpha0));

    let free = scalar_ctx(0.9, 0.0, None, 3);
    for x in [0.0, 5.0, -100.0] {
        assert!(check_feedback_feasibility(&free, 0, &[DVector::from_element(1, x)], free.ingredients.alpha));
    }
}

#[test]
fn single_system_network_solves_agree() {
    let ctx = scalar_ctx(1.1, 0.05, Some((1.0, 2.0, 0.8)), 6);
    let x = vec![DVector::from_element(1, 0.8)];
    let alphas = [ctx.ingredients.alpha];
    let local = local_solve(&ctx, 0, &x, alphas[0]).unwrap();
    let init = InitCondition::feedback(&x);
    let central = solve_centralized(&ctx, &init, &alphas).unwrap();
    assert!((local.objective - central.objective).abs() <= 1e-6 * central.objective.max(1.0));
    for (a, b) in local.v.iter().zip(&central.v[0]) {
        assert!((a - b).amax() <= 1e-5);
    }
    let params = AdmmParams { rho: 10.0, eps_c: 1e-8, max_iter: 500 };
    let dist = solve_distributed(&ctx, &init, &alphas, &params, None).unwrap();
    assert!(dist.converged);
    assert!((dist.objective - central.objective).abs() <= 1e-5 * central.objective.max(1.0));
}

#[test]
fn agents_hold_consistent_copies() {
    let ctx = common::benchmark_ctx();
    let init = InitCondition::feedback(&common::benchmark_x0());
    let alphas: Vec<f64> = ctx.ingredients.subsystems.iter().map(|s| s.alpha0).collect();
    let eps_c = 1e-4;
    let plan = solve_distributed(&ctx, &init, &alphas, &AdmmParams { rho: 10.0, eps_c, max_iter: 500 }, None).unwrap();
    assert!(plan.converged);
    for l in 0..3 {
        let holders: Vec<_> = plan.copies.iter().filter(|c| c.z.contains_key(&l)).collect();
        assert_eq!(holders.len(), ctx.net.neighborhood(l).len());
        for a in &holders {
            for b in &holders {
                for t in 1..ctx.horizon {
                    assert!((&a.z[&l][t] - &b.z[&l][t]).amax() <= 2.0 * eps_c);
                    assert!((&a.sigma[&l][t] - &b.sigma[&l][t]).amax() <= 2.0 * eps_c);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn relaxing_the_terminal_level_never_hurts(a1 in 0.0..0.05f64, a2 in 0.0..0.05f64) {
        let ctx = common::benchmark_ctx();
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let x0 = common::benchmark_x0();
        let j_lo = local_solve(&ctx, 1, &x0, lo).unwrap().objective;
        let j_hi = local_solve(&ctx, 1, &x0, hi).unwrap().objective;
        prop_assert!(j_hi <= j_lo + 1e-6 * j_lo.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With `f(y) = ‖y − c‖²` the augmented subproblem has the closed-form
    /// minimiser `y = (2c − λ + ρ ξ) / (2 + ρ)`.
    #[test]
    fn augmented_lagrangian_assembly(
        c in prop::collection::vec(-5.0..5.0f64, 1..=4),
        lam_seed in prop::collection::vec(-5.0..5.0f64, 4),
        xi_seed in prop::collection::vec(-5.0..5.0f64, 4),
        rho in 0.1..50.0f64,
    ) {
        let n = c.len();
        let mut p = ConicProblem::new();
        let y = p.add_vector("y", n);
        let info = p.var_info(y).clone();
        let exprs: Vec<LinExpr> = (0..n).map(|k| p.entry(y, k).minus(&LinExpr::constant(c[k]))).collect();
        p.add_sum_squares(1.0, exprs);
        let vars: Vec<usize> = (info.offset..info.offset + n).collect();
        let mut agent = ConicAgent::new(0, p, vars, (0..n).collect(), rho, SolverSettings::default()).unwrap();
        let lam = &lam_seed[..n];
        let xi = &xi_seed[..n];
        let sol = agent.solve(lam, xi).unwrap();
        for k in 0..n {
            let expect = (2.0 * c[k] - lam[k] + rho * xi[k]) / (2.0 + rho);
            prop_assert!((sol[k] - expect).abs() <= 1e-6 * (1.0 + expect.abs()), "{} vs {}", sol[k], expect);
        }
        let own: f64 = sol.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!((agent.own_objective() - own).abs() <= 1e-6 * (1.0 + own));
    }
}
