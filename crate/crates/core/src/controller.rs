//! Online receding-horizon loop: strategy selection, network solve,
//! feedback control and terminal-level update.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmParams;
use crate::error::{ControllerError, MpcError};
use crate::local_mpc::{
    build_centralized, check_feedback_feasibility, shifted_plan, solve_centralized, solve_distributed, InitCondition,
    MpcContext, Plan, Strategy,
};
use crate::model::CouplingGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Consensus ADMM over the agents' local problems.
    Distributed,
    /// One conic program for the whole network.
    Centralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerOptions {
    pub mode: SolveMode,
    pub admm: AdmmParams,
    /// Check each step that the shifted plan is admissible at the next step.
    pub debug_shift_check: bool,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self { mode: SolveMode::Distributed, admm: AdmmParams::default(), debug_shift_check: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub k: usize,
    pub previous: Option<Plan>,
    /// `α_i(k)`.
    pub alphas: Vec<f64>,
    pub last_strategy: Option<Strategy>,
}

/// Structured per-step record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub k: usize,
    /// Local feedback-strategy feasibility flags before dissemination.
    pub flags: Vec<bool>,
    pub strategy: Strategy,
    /// All flags were set but the network solve with feedback failed.
    pub feedback_fallback: bool,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// `J*(k)`.
    pub objective: f64,
    /// `Σ_i ‖z_i(0|k)‖²_Q + ‖v_i(0|k)‖²_R`.
    pub stage_cost: f64,
    /// `α_i(k+1)`.
    pub alphas: Vec<f64>,
    /// `Σ_i z_Nᵀ(N|k) Γ z_N(N|k)`.
    pub alpha_change: f64,
    /// `alpha_change ≤ 10 ε_c`.
    pub ledger_ok: bool,
    /// Largest constraint violation of the shifted plan at `k + 1`.
    pub shift_violation: Option<f64>,
    #[serde(skip)]
    pub solve_seconds: f64,
}

/// Global AND of the flags by neighbourhood min-exchange; entry `i` is
/// what agent `i` knows after the flooding rounds.
pub fn disseminate_flags(graph: &CouplingGraph, flags: &[bool]) -> Vec<bool> {
    let vals: Vec<f64> = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    graph.min_consensus(&vals).into_iter().map(|v| v > 0.5).collect()
}

/// Feedback iff every flag is set; otherwise prediction, which needs the
/// previous optimum.
pub fn select_strategy(k: usize, flags: &[bool], has_previous: bool) -> Result<Strategy, ControllerError> {
    if flags.iter().all(|&f| f) {
        Ok(Strategy::Feedback)
    } else if has_previous {
        Ok(Strategy::Prediction)
    } else {
        Err(ControllerError::MissingPreviousSolution { k })
    }
}

pub struct Controller {
    pub ctx: MpcContext,
    pub options: ControllerOptions,
    pub state: ControllerState,
}

impl Controller {
    /// Starts from the per-subsystem levels stored in the ingredients.
    pub fn new(ctx: MpcContext, options: ControllerOptions) -> Self {
        let alphas = ctx.ingredients.subsystems.iter().map(|s| s.alpha0).collect();
        Self { ctx, options, state: ControllerState { k: 0, previous: None, alphas, last_strategy: None } }
    }

    fn solve(&self, init: &InitCondition) -> Result<Plan, MpcError> {
        match self.options.mode {
            SolveMode::Distributed => solve_distributed(&self.ctx, init, &self.state.alphas, &self.options.admm, None),
            SolveMode::Centralized => solve_centralized(&self.ctx, init, &self.state.alphas),
        }
    }

    fn prediction_init(&self) -> Option<InitCondition> {
        let prev = self.state.previous.as_ref()?;
        Some(InitCondition::prediction(
            prev.z.iter().map(|zi| zi[1].clone()).collect(),
            prev.sigma.iter().map(|si| si[1].clone()).collect(),
        ))
    }

    /// One pass of the online loop for the measured per-subsystem states.
    pub fn step(&mut self, x: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, StepDiagnostics), ControllerError> {
        let k = self.state.k;
        let net = &self.ctx.net;
        let m = net.count();
        let started = Instant::now();

        let flags: Vec<bool> =
            (0..m).into_par_iter().map(|i| check_feedback_feasibility(&self.ctx, i, x, self.state.alphas[i])).collect();
        let known = disseminate_flags(&net.graph, &flags);
        let has_previous = self.state.previous.is_some();
        let mut strategy = select_strategy(k, &known, has_previous).map_err(|e| match e {
            ControllerError::MissingPreviousSolution { k: 0 } => ControllerError::BothStrategiesInfeasible { k: 0 },
            other => other,
        })?;

        let mut feedback_fallback = false;
        let plan = loop {
            match strategy {
                Strategy::Feedback => match self.solve(&InitCondition::feedback(x)) {
                    Ok(p) => break p,
                    Err(e) if has_previous => {
                        log::warn!("step {k}: feedback solve failed with all flags set ({e}); using prediction");
                        feedback_fallback = true;
                        strategy = Strategy::Prediction;
                    }
                    Err(MpcError::Conic(e)) => return Err(MpcError::Conic(e).into()),
                    Err(e) => {
                        log::error!("step {k}: feedback solve failed and no previous solution exists ({e})");
                        return Err(ControllerError::BothStrategiesInfeasible { k });
                    }
                },
                Strategy::Prediction => {
                    let init = self.prediction_init().ok_or(ControllerError::MissingPreviousSolution { k })?;
                    match self.solve(&init) {
                        Ok(p) => break p,
                        Err(e) => {
                            log::error!("step {k}: prediction solve failed ({e}); halting");
                            return Err(ControllerError::AssumptionViolation { k, detail: e.to_string() });
                        }
                    }
                }
            }
        };
        if !plan.converged {
            log::warn!("step {k}: consensus stopped at {} iterations, residual {:e}", plan.iterations, plan.residual);
        }

        let ings = &self.ctx.ingredients.subsystems;
        let mut u = Vec::with_capacity(m);
        let mut stage_cost = 0.0;
        let mut alpha_change = 0.0;
        let mut alphas = self.state.alphas.clone();
        for i in 0..m {
            let s = &net.subsystems[i];
            let ing = &ings[i];
            let x_n = net.stack_neighborhood(i, x);
            let z0_n = plan.z_neighborhood(net, i, 0);
            let v0 = &plan.v[i][0];
            u.push(v0 + &ing.k * (x_n - z0_n));
            let z0 = &plan.z[i][0];
            stage_cost += z0.dot(&(&s.q * z0)) + v0.dot(&(&s.r * v0));
            let zn = plan.z_neighborhood(net, i, plan.horizon());
            let delta = zn.dot(&(&ing.gamma * &zn));
            alphas[i] += delta;
            alpha_change += delta;
        }
        let ledger_ok = alpha_change <= 10.0 * self.options.admm.eps_c;
        if !ledger_ok {
            log::warn!("step {k}: terminal levels grew by {alpha_change:e}");
        }

        let shift_violation = self.options.debug_shift_check.then(|| {
            let (init, shifted) = shifted_plan(&self.ctx, &plan);
            match build_centralized(&self.ctx, &init, &alphas) {
                Ok(cp) => cp.problem.max_violation(&cp.point_from_plan(&shifted)),
                Err(_) => f64::INFINITY,
            }
        });

        let diag = StepDiagnostics {
            k,
            flags,
            strategy,
            feedback_fallback,
            iterations: plan.iterations,
            converged: plan.converged,
            residual: plan.residual,
            objective: plan.objective,
            stage_cost,
            alphas: alphas.clone(),
            alpha_change,
            ledger_ok,
            shift_violation,
            solve_seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "step {k}: {:?}, {} iterations, J* = {:.6}, alpha sum = {:.6e}",
            strategy,
            plan.iterations,
            plan.objective,
            alphas.iter().sum::<f64>()
        );
        self.state = ControllerState { k: k + 1, previous: Some(plan), alphas, last_strategy: Some(strategy) };
        Ok((u, diag))
    }
}
