use dsmpc::admm::AdmmParams;
use dsmpc::controller::{Controller, ControllerOptions, SolveMode, StepDiagnostics};
use dsmpc::error::ControllerError;
use dsmpc::local_mpc::{MpcContext, Strategy};
use dsmpc::model::build_network;
use dsmpc::simulator::plant_step;
use nalgebra::DVector;

mod common;

fn options(mode: SolveMode, eps_c: f64) -> ControllerOptions {
    ControllerOptions { mode, admm: AdmmParams { rho: 10.0, eps_c, max_iter: 1000 }, debug_shift_check: true }
}

/// Closed loop on the noise-free plant.
fn nominal_run(ctx: MpcContext, opts: ControllerOptions, x0: Vec<DVector<f64>>, steps: usize) -> Vec<StepDiagnostics> {
    let mut ctrl = Controller::new(ctx, opts);
    let mut x = x0;
    let zero = vec![0.0; x.len()];
    let mut out = Vec::new();
    for _ in 0..steps {
        let (u, diag) = ctrl.step(&x).unwrap();
        x = plant_step(&ctrl.ctx.net, &x, &u, &zero);
        out.push(diag);
    }
    out
}

#[test]
fn first_step_applies_the_first_planned_input() {
    let ctx = common::benchmark_ctx();
    let x0 = common::benchmark_x0();
    let mut ctrl = Controller::new(ctx, options(SolveMode::Distributed, 1e-4));
    let (u, diag) = ctrl.step(&x0).unwrap();
    assert_eq!(diag.k, 0);
    assert_eq!(diag.strategy, Strategy::Feedback);
    assert!(diag.flags.iter().all(|&f| f));
    let plan = ctrl.state.previous.as_ref().unwrap();
    for (i, ui) in u.iter().enumerate() {
        // z(0|0) = x(0), so the feedback correction vanishes
        assert!((ui - &plan.v[i][0]).amax() <= 1e-12);
    }
    assert_eq!(ctrl.state.k, 1);
}

#[test]
fn decoupled_network_keeps_terminal_levels() {
    let cfg = common::config_from_toml(common::DECOUPLED);
    let ing = common::design_for(&cfg);
    let ctx = MpcContext::new(build_network(&cfg).unwrap(), ing, cfg.mpc.horizon, cfg.mpc.epsilon).unwrap();
    let initial: Vec<f64> = ctx.ingredients.subsystems.iter().map(|s| s.alpha0).collect();
    let x0 = cfg.simulation.x0.iter().map(|v| DVector::from_vec(v.clone())).collect();
    let diags = nominal_run(ctx, options(SolveMode::Centralized, 1e-6), x0, 4);
    for d in &diags {
        assert!(d.alpha_change.abs() <= 1e-8, "step {}: {:e}", d.k, d.alpha_change);
        for (a, b) in d.alphas.iter().zip(&initial) {
            assert!((a - b).abs() <= 1e-7);
        }
    }
}

#[test]
fn nominal_closed_loop_cost_decreases() {
    let diags = nominal_run(common::benchmark_ctx(), options(SolveMode::Distributed, 1e-6), common::benchmark_x0(), 6);
    for pair in diags.windows(2) {
        let (now, next) = (&pair[0], &pair[1]);
        let slack = 1e-3 * now.objective;
        println!("k {}: J {:.6} -> {:.6}, stage {:.6}", now.k, now.objective, next.objective, now.stage_cost);
        assert!(next.objective <= now.objective - now.stage_cost + slack, "step {}", now.k);
    }
}

#[test]
fn terminal_level_ledger_and_shifted_plan() {
    let eps_c = 1e-4;
    let diags = nominal_run(common::benchmark_ctx(), options(SolveMode::Distributed, eps_c), common::benchmark_x0(), 4);
    for d in &diags {
        assert!(d.converged);
        assert!(d.ledger_ok, "step {}: {:e}", d.k, d.alpha_change);
        assert!(d.alpha_change <= 10.0 * eps_c);
        let viol = d.shift_violation.unwrap();
        println!("k {}: shift violation {viol:e}", d.k);
        assert!(viol <= 1e-3, "step {}: shifted plan violates by {viol:e}", d.k);
    }
}

#[test]
fn centralized_shifted_plan_is_admissible() {
    let diags = nominal_run(common::benchmark_ctx(), options(SolveMode::Centralized, 1e-6), common::benchmark_x0(), 4);
    for d in &diags {
        let viol = d.shift_violation.unwrap();
        assert!(viol <= 1e-6, "step {}: {viol:e}", d.k);
        assert!(d.alpha_change.abs() <= 1e-6, "step {}: {:e}", d.k, d.alpha_change);
    }
}

#[test]
fn infeasible_start_halts_at_the_first_step() {
    let ctx = common::benchmark_ctx();
    let short = MpcContext::new(ctx.net.clone(), ctx.ingredients.clone(), 1, ctx.epsilon).unwrap();
    let mut x0 = common::benchmark_x0();
    x0[2] = DVector::from_vec(vec![10.0, 0.0]);
    let mut ctrl = Controller::new(short, options(SolveMode::Distributed, 1e-4));
    assert_eq!(ctrl.step(&x0).unwrap_err(), ControllerError::BothStrategiesInfeasible { k: 0 });
}
