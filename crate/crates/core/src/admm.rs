//! Synchronous consensus ADMM.
//!
//! Every agent owns a local copy `y_i` of some entries of the public vector
//! `ξ`; `global_ids()[k]` names the entry of `ξ` that `y_i[k]` copies. One
//! round is: all agents solve their augmented-Lagrangian subproblem, each
//! public entry is replaced by the mean of its copies, and multipliers are
//! updated with `λ_i += ρ (y_i − E_i ξ)`.
//!
//! Averaging visits agents in index order, so results do not depend on how
//! the parallel solves are scheduled.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{
    ClarabelBackend, ConicBackend, ConicProblem, LoweredProblem, LowerOptions, PreparedProblem, SolveResult,
    SolveStatus, SolverSettings,
};
use crate::error::{ConicError, MpcError};

pub trait ConsensusAgent: Send {
    /// Public entry copied by each local consensus component.
    fn global_ids(&self) -> &[usize];
    /// Minimise `f_i(y) + λᵀ(y − ξ_loc) + ρ/2 ‖y − ξ_loc‖²` and return `y`.
    fn solve(&mut self, lambda: &[f64], xi_local: &[f64]) -> Result<Vec<f64>, MpcError>;
    /// Own objective `f_i` at the last solution.
    fn own_objective(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    pub rho: f64,
    pub eps_c: f64,
    pub max_iter: usize,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self { rho: 10.0, eps_c: 1e-4, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub xi: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub iteration: usize,
    /// `‖E_i ξ − y_i‖_∞` per iteration and agent.
    pub residual_history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    pub y: Vec<Vec<f64>>,
    pub state: ConsensusState,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Floats exchanged between agents over the whole run.
    pub message_floats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub agent: usize,
    pub residual: f64,
    pub objective: f64,
}

/// Copy-set sizes of every public entry.
fn copy_counts(ids: &[&[usize]], n_global: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_global];
    for a in ids {
        for &g in *a {
            counts[g] += 1;
        }
    }
    counts
}

/// Average copies into `ξ`, visiting agents in index order.
pub fn average_copies(ids: &[&[usize]], y: &[Vec<f64>], n_global: usize) -> Vec<f64> {
    let counts = copy_counts(ids, n_global);
    let mut xi = vec![0.0; n_global];
    for (a, yi) in ids.iter().zip(y) {
        for (&g, &v) in a.iter().zip(yi) {
            xi[g] += v;
        }
    }
    for (x, &c) in xi.iter_mut().zip(&counts) {
        if c > 0 {
            *x /= c as f64;
        }
    }
    xi
}

/// Run consensus ADMM from `λ = 0`, `ξ = 0`.
pub fn run_consensus<A: ConsensusAgent>(
    agents: &mut [A],
    n_global: usize,
    params: &AdmmParams,
    mut trace: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<ConsensusOutcome, MpcError> {
    let mut state = ConsensusState {
        xi: vec![0.0; n_global],
        lambda: agents.iter().map(|a| vec![0.0; a.global_ids().len()]).collect(),
        iteration: 0,
        residual_history: Vec::new(),
    };
    let mut y: Vec<Vec<f64>> = Vec::new();
    let mut converged = false;
    let mut message_floats = 0usize;
    while state.iteration < params.max_iter {
        let xi_snapshot = state.xi.clone();
        let lambdas = &state.lambda;
        let results: Vec<Result<Vec<f64>, MpcError>> = agents
            .par_iter_mut()
            .zip(lambdas.par_iter())
            .map(|(agent, lam)| {
                let local: Vec<f64> = agent.global_ids().iter().map(|&g| xi_snapshot[g]).collect();
                agent.solve(lam, &local)
            })
            .collect();
        y = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        state.iteration += 1;

        let ids: Vec<&[usize]> = agents.iter().map(|a| a.global_ids()).collect();
        // each copy is sent once to the owner set and the average is sent back
        message_floats += 2 * ids.iter().map(|a| a.len()).sum::<usize>();
        state.xi = average_copies(&ids, &y, n_global);

        let mut residuals = Vec::with_capacity(agents.len());
        for (i, a) in ids.iter().enumerate() {
            let mut r: f64 = 0.0;
            for (k, &g) in a.iter().enumerate() {
                let diff = y[i][k] - state.xi[g];
                state.lambda[i][k] += params.rho * diff;
                r = r.max(diff.abs());
            }
            residuals.push(r);
        }
        if let Some(cb) = trace.as_deref_mut() {
            for (i, r) in residuals.iter().enumerate() {
                cb(&TraceRow { iteration: state.iteration, agent: i, residual: *r, objective: agents[i].own_objective() });
            }
        }
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        state.residual_history.push(residuals);
        log::trace!("admm iteration {} residual {:e}", state.iteration, worst);
        if worst <= params.eps_c {
            converged = true;
            break;
        }
    }
    let objective = agents.iter().map(|a| a.own_objective()).sum();
    Ok(ConsensusOutcome { y, iterations: state.iteration, state, converged, objective, message_floats })
}

/// Write a trace as CSV: `iteration,agent,residual,objective`.
pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// A [`ConsensusAgent`] backed by a conic problem whose consensus
/// components are plain user variables.
///
/// The quadratic part `ρ/2 ‖y‖²` is added once at construction; every
/// round only rewrites the linear objective.
pub struct ConicAgent {
    pub index: usize,
    lowered: LoweredProblem,
    prepared: Box<dyn PreparedProblem>,
    consensus_vars: Vec<usize>,
    global_ids: Vec<usize>,
    rho: f64,
    settings: SolverSettings,
    own: ConicProblem,
    last: Option<SolveResult>,
}

impl ConicAgent {
    /// `problem` holds the agent's own objective and constraints;
    /// `consensus_vars[k]` is the flat user-variable index copied into
    /// public entry `global_ids[k]`.
    pub fn new(
        index: usize,
        problem: ConicProblem,
        consensus_vars: Vec<usize>,
        global_ids: Vec<usize>,
        rho: f64,
        settings: SolverSettings,
    ) -> Result<Self, ConicError> {
        assert_eq!(consensus_vars.len(), global_ids.len());
        let own = problem.clone();
        let mut p = problem;
        if rho > 0.0 {
            p.add_sum_squares(0.5 * rho, consensus_vars.iter().map(|&v| crate::conic::LinExpr::var(v)).collect());
        }
        let lowered = p.lower(LowerOptions::default())?;
        let prepared = ClarabelBackend.prepare(&lowered.form, &settings)?;
        Ok(Self { index, lowered, prepared, consensus_vars, global_ids, rho, settings, own, last: None })
    }

    pub fn last(&self) -> Option<&SolveResult> {
        self.last.as_ref()
    }

    pub fn problem(&self) -> &ConicProblem {
        &self.own
    }

    /// Solve with a raw user-level linear objective delta.
    pub fn solve_with_delta(&mut self, delta: &[f64]) -> Result<&SolveResult, MpcError> {
        let q = self.lowered.q_with_delta(delta);
        let raw = self.prepared.solve(Some(&q))?;
        let res = self.lowered.finish(raw, &self.settings);
        match res.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Err(MpcError::LocalInfeasible { agent: self.index }),
            s => {
                return Err(MpcError::NumericalFailure { agent: self.index, detail: format!("{s:?}") });
            }
        }
        self.last = Some(res);
        Ok(self.last.as_ref().unwrap())
    }
}

impl ConsensusAgent for ConicAgent {
    fn global_ids(&self) -> &[usize] {
        &self.global_ids
    }

    fn solve(&mut self, lambda: &[f64], xi_local: &[f64]) -> Result<Vec<f64>, MpcError> {
        let mut delta = vec![0.0; self.own.num_vars()];
        for ((&v, &l), &x) in self.consensus_vars.iter().zip(lambda).zip(xi_local) {
            // λᵀy + ρ/2‖y − ξ‖² = ρ/2‖y‖² + (λ − ρξ)ᵀy + const
            delta[v] += l - self.rho * x;
        }
        let vars = self.consensus_vars.clone();
        let res = self.solve_with_delta(&delta)?;
        Ok(vars.iter().map(|&v| res.x[v]).collect())
    }

    fn own_objective(&self) -> f64 {
        self.last.as_ref().map_or(f64::NAN, |r| self.own.objective_at(&r.x))
    }
}
