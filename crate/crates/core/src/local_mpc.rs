//! Per-agent stochastic MPC subproblems and the centralized reference.
//!
//! Agent `i` holds copies of the mean `z_j(t)` and covariance `Σ_j(t)` of
//! every `j ∈ N_i` for `t = 1..N−1`; these copies are the consensus
//! components. Stage `t = 0` is fixed by the initial condition, and the
//! inputs `v_i` and the terminal pair `(z_i(N), Σ_i(N))` only appear in the
//! owner's constraints, so they stay private.
//!
//! Constraints of agent `i` only involve its own rows: nominal dynamics,
//! tightened chance constraints, covariance propagation, terminal ellipsoid
//! and terminal covariance bound. The same builder emits them for the
//! consensus subproblem and for the centralized problem through a map of
//! affine handles.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{
    AffineMatrix, ClarabelBackend, ConicProblem, LinExpr, SolveResult, SolveStatus, SolverSettings, VarId,
};
use crate::admm::{run_consensus, AdmmParams, ConicAgent, TraceRow};
use crate::covariance::{compact_propagation_lmi, const_column, ClosedLoop};
use crate::error::MpcError;
use crate::linalg;
use crate::model::NetworkModel;
use crate::synthesis::TerminalIngredients;
use crate::tightening::RowTightening;

/// Tolerance on constant rows and on negative terminal levels.
pub const CONSTANT_ROW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Measured state, zero covariance.
    Feedback,
    /// Shifted previous optimum.
    Prediction,
}

/// Initial mean and covariance of every subsystem (each agent reads only
/// its neighbourhood; neighbours' values are broadcast with the flags).
#[derive(Debug, Clone, PartialEq)]
pub struct InitCondition {
    pub strategy: Strategy,
    pub x0: Vec<DVector<f64>>,
    pub sigma0: Vec<DMatrix<f64>>,
}

impl InitCondition {
    pub fn feedback(x: &[DVector<f64>]) -> Self {
        Self {
            strategy: Strategy::Feedback,
            x0: x.to_vec(),
            sigma0: x.iter().map(|xi| DMatrix::zeros(xi.len(), xi.len())).collect(),
        }
    }

    pub fn prediction(z1: Vec<DVector<f64>>, sigma1: Vec<DMatrix<f64>>) -> Self {
        Self { strategy: Strategy::Prediction, x0: z1, sigma0: sigma1 }
    }
}

#[derive(Debug, Clone)]
struct AgentData {
    closed_loop: ClosedLoop,
    state_rows: Vec<RowTightening>,
    input_rows: Vec<RowTightening>,
    /// `Lᵀ` with `P_i = L Lᵀ`.
    p_factor_t: DMatrix<f64>,
}

/// Everything the online problems need besides the initial condition and
/// the terminal levels.
#[derive(Debug, Clone)]
pub struct MpcContext {
    pub net: NetworkModel,
    pub ingredients: TerminalIngredients,
    pub horizon: usize,
    pub epsilon: f64,
    pub settings: SolverSettings,
    agents: Vec<AgentData>,
}

impl MpcContext {
    pub fn new(net: NetworkModel, ingredients: TerminalIngredients, horizon: usize, epsilon: f64) -> Result<Self, MpcError> {
        assert!(horizon >= 1, "horizon must be at least 1");
        if !ingredients.matches(&net) {
            return Err(MpcError::GlobalInfeasible("terminal ingredients do not match the network".into()));
        }
        let mut agents = Vec::with_capacity(net.count());
        for (i, s) in net.subsystems.iter().enumerate() {
            let ing = &ingredients.subsystems[i];
            let tight = |rows: &[crate::model::ChanceRow]| -> Result<Vec<RowTightening>, MpcError> {
                rows.iter()
                    .map(|r| RowTightening::new(r, epsilon).map_err(|e| MpcError::GlobalInfeasible(e.to_string())))
                    .collect()
            };
            let l = linalg::cholesky_lower(&ing.p)
                .map_err(|e| MpcError::GlobalInfeasible(format!("terminal weight of subsystem {i}: {e}")))?;
            agents.push(AgentData {
                closed_loop: ClosedLoop::new(&net, i, &ing.k),
                state_rows: tight(&s.state_rows)?,
                input_rows: tight(&s.input_rows)?,
                p_factor_t: l.transpose(),
            });
        }
        Ok(Self { net, ingredients, horizon, epsilon, settings: SolverSettings::default(), agents })
    }

    pub fn closed_loop(&self, i: usize) -> &ClosedLoop {
        &self.agents[i].closed_loop
    }
}

/// Affine handles of the trajectory entries one agent's constraints use,
/// keyed by `(subsystem, t)`.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryHandles {
    pub z: BTreeMap<(usize, usize), AffineMatrix>,
    pub sigma: BTreeMap<(usize, usize), AffineMatrix>,
    pub v: BTreeMap<(usize, usize), AffineMatrix>,
}

/// Emit the objective and constraints of agent `i` into `p`.
///
/// Constant rows (stage 0) are checked instead of emitted: under the
/// feedback strategy a violation makes the problem infeasible; under the
/// prediction strategy they are skipped, since the shifted optimum met them
/// one step earlier up to the consensus tolerance.
pub fn add_agent_block(
    p: &mut ConicProblem,
    ctx: &MpcContext,
    i: usize,
    init: &InitCondition,
    alpha_i: f64,
    h: &TrajectoryHandles,
) -> Result<(), MpcError> {
    let net = &ctx.net;
    let s = &net.subsystems[i];
    let ag = &ctx.agents[i];
    let ing = &ctx.ingredients.subsystems[i];
    let n_h = ctx.horizon;
    let nb = net.neighborhood(i);
    let infeasible = || MpcError::LocalInfeasible { agent: i };

    let z_n = |t: usize| -> AffineMatrix {
        AffineMatrix::blocks(&nb.iter().map(|&j| vec![Some(h.z[&(j, t)].clone())]).collect::<Vec<_>>())
    };
    let sigma_n = |t: usize| -> AffineMatrix {
        AffineMatrix::block_diag(&nb.iter().map(|&j| h.sigma[&(j, t)].clone()).collect::<Vec<_>>())
    };

    // cost
    for t in 0..n_h {
        p.add_weighted_norm(&h.z[&(i, t)], &s.q);
        p.add_weighted_norm(&h.v[&(i, t)], &s.r);
    }
    p.add_weighted_norm(&h.z[&(i, n_h)], &ing.p);

    let emit_row = |p: &mut ConicProblem, slack: LinExpr| -> Result<(), MpcError> {
        if slack.is_constant() {
            if init.strategy == Strategy::Feedback && slack.constant < -CONSTANT_ROW_TOL {
                return Err(infeasible());
            }
            return Ok(());
        }
        p.add_nonneg(vec![slack]);
        Ok(())
    };

    for t in 0..n_h {
        let zn = z_n(t);
        let sn = sigma_n(t);
        let v = &h.v[&(i, t)];
        // nominal dynamics
        let next = zn.left_mul(&ag.closed_loop.a_n).add(&v.left_mul(&s.b));
        let z_next = &h.z[&(i, t + 1)];
        p.add_eq((0..s.n).map(|r| z_next.get(r, 0).clone().minus(next.get(r, 0))).collect());
        // chance rows
        for row in &ag.state_rows {
            emit_row(p, row.slack_expr(&h.z[&(i, t)], &h.sigma[&(i, t)], None))?;
        }
        for row in &ag.input_rows {
            emit_row(p, row.slack_expr(v, &sn, Some(&ing.k)))?;
        }
        // covariance propagation
        let g = ag.closed_loop.offset_expr(&zn, v);
        p.add_psd(&compact_propagation_lmi(&ag.closed_loop, &h.sigma[&(i, t + 1)], &sn, &g));
    }

    // terminal ellipsoid ‖Lᵀ z‖ ≤ √α
    if alpha_i < -CONSTANT_ROW_TOL {
        return Err(infeasible());
    }
    let lz = h.z[&(i, n_h)].left_mul(&ag.p_factor_t);
    let mut cone = vec![LinExpr::constant(alpha_i.max(0.0).sqrt())];
    cone.extend((0..s.n).map(|r| lz.get(r, 0).clone()));
    p.add_soc(cone);
    // terminal covariance
    p.add_psd(&AffineMatrix::constant(&ing.sigma_f).sub(&h.sigma[&(i, n_h)]));
    Ok(())
}

fn const_sym(m: &DMatrix<f64>) -> AffineMatrix {
    AffineMatrix::constant(m)
}

/// Public consensus vector layout: `z_j(t)` then `svec Σ_j(t)` for every
/// subsystem `j` and `t = 1..N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusLayout {
    pub horizon: usize,
    z_off: Vec<Vec<usize>>,
    s_off: Vec<Vec<usize>>,
    pub len: usize,
}

impl ConsensusLayout {
    pub fn new(net: &NetworkModel, horizon: usize) -> Self {
        let mut z_off = Vec::new();
        let mut s_off = Vec::new();
        let mut acc = 0;
        for s in &net.subsystems {
            let mut zo = Vec::new();
            let mut so = Vec::new();
            for _ in 1..horizon {
                zo.push(acc);
                acc += s.n;
                so.push(acc);
                acc += linalg::svec_len(s.n);
            }
            z_off.push(zo);
            s_off.push(so);
        }
        Self { horizon, z_off, s_off, len: acc }
    }

    /// Offset of `z_j(t)`, `1 ≤ t ≤ N−1`.
    pub fn z(&self, j: usize, t: usize) -> usize {
        self.z_off[j][t - 1]
    }

    /// Offset of `svec Σ_j(t)`, `1 ≤ t ≤ N−1`.
    pub fn sigma(&self, j: usize, t: usize) -> usize {
        self.s_off[j][t - 1]
    }
}

/// Variable ids of one agent's trajectory copies.
#[derive(Debug, Clone, Default)]
pub struct LocalVars {
    /// `(j, t) → z` copy for `1 ≤ t ≤ N−1`, plus `(i, N)`.
    pub z: BTreeMap<(usize, usize), VarId>,
    pub sigma: BTreeMap<(usize, usize), VarId>,
    /// `t → v_i(t)`.
    pub v: Vec<VarId>,
}

/// A built local problem together with its consensus map.
#[derive(Debug, Clone)]
pub struct LocalProblem {
    pub agent: usize,
    pub problem: ConicProblem,
    pub vars: LocalVars,
    /// Flat user-variable indices of the consensus components.
    pub consensus_vars: Vec<usize>,
    /// Matching public entries.
    pub global_ids: Vec<usize>,
}

/// Build the local problem of agent `i` without consensus terms; the
/// augmented-Lagrangian part is added by the ADMM agent wrapper.
pub fn build_local_problem(
    ctx: &MpcContext,
    layout: &ConsensusLayout,
    i: usize,
    init: &InitCondition,
    alpha_i: f64,
) -> Result<LocalProblem, MpcError> {
    let net = &ctx.net;
    let n_h = ctx.horizon;
    let mut p = ConicProblem::new();
    let mut vars = LocalVars::default();
    let mut h = TrajectoryHandles::default();
    let mut consensus_vars = Vec::new();
    let mut global_ids = Vec::new();
    for &j in net.neighborhood(i) {
        let nj = net.subsystems[j].n;
        h.z.insert((j, 0), const_column(&init.x0[j]));
        h.sigma.insert((j, 0), const_sym(&init.sigma0[j]));
        for t in 1..n_h {
            let zid = p.add_vector(&format!("z{j}_{t}"), nj);
            // neighbour copies are left free: consensus with the owner's
            // propagation bound already makes them PSD at the fixed point
            let sid = p.add_symmetric(&format!("S{j}_{t}"), nj, false);
            h.z.insert((j, t), p.vector_expr(zid));
            h.sigma.insert((j, t), p.sym_expr(sid));
            vars.z.insert((j, t), zid);
            vars.sigma.insert((j, t), sid);
            // a copy set with one member carries no coupling
            if net.neighborhood(j).len() < 2 {
                continue;
            }
            let zi = p.var_info(zid).clone();
            let si = p.var_info(sid).clone();
            consensus_vars.extend(zi.offset..zi.offset + zi.len);
            global_ids.extend(layout.z(j, t)..layout.z(j, t) + zi.len);
            consensus_vars.extend(si.offset..si.offset + si.len);
            global_ids.extend(layout.sigma(j, t)..layout.sigma(j, t) + si.len);
        }
    }
    let s = &net.subsystems[i];
    let zn = p.add_vector(&format!("z{i}_{n_h}"), s.n);
    let sn = p.add_symmetric(&format!("S{i}_{n_h}"), s.n, false);
    h.z.insert((i, n_h), p.vector_expr(zn));
    h.sigma.insert((i, n_h), p.sym_expr(sn));
    vars.z.insert((i, n_h), zn);
    vars.sigma.insert((i, n_h), sn);
    for t in 0..n_h {
        let v = p.add_vector(&format!("v{i}_{t}"), s.m);
        h.v.insert((i, t), p.vector_expr(v));
        vars.v.push(v);
    }
    add_agent_block(&mut p, ctx, i, init, alpha_i, &h)?;
    Ok(LocalProblem { agent: i, problem: p, vars, consensus_vars, global_ids })
}

/// One agent's solution: inputs, and its copies of the neighbourhood
/// trajectories (`t = 0..N−1` for neighbours, `t = 0..N` for itself).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrajectory {
    pub agent: usize,
    pub v: Vec<DVector<f64>>,
    pub z: BTreeMap<usize, Vec<DVector<f64>>>,
    pub sigma: BTreeMap<usize, Vec<DMatrix<f64>>>,
    /// Own stage and terminal cost at this solution.
    pub objective: f64,
}

impl LocalProblem {
    pub fn extract(&self, res: &SolveResult, init: &InitCondition, horizon: usize) -> LocalTrajectory {
        let mut z = BTreeMap::new();
        let mut sigma = BTreeMap::new();
        let members: Vec<usize> = self.vars.z.keys().map(|&(j, _)| j).collect();
        for j in members {
            if z.contains_key(&j) {
                continue;
            }
            let last = if j == self.agent { horizon } else { horizon - 1 };
            let mut zs = vec![init.x0[j].clone()];
            let mut ss = vec![init.sigma0[j].clone()];
            for t in 1..=last {
                zs.push(res.vector(self.vars.z[&(j, t)]));
                ss.push(res.symmetric(self.vars.sigma[&(j, t)]));
            }
            z.insert(j, zs);
            sigma.insert(j, ss);
        }
        LocalTrajectory {
            agent: self.agent,
            v: self.vars.v.iter().map(|&id| res.vector(id)).collect(),
            z,
            sigma,
            objective: self.problem.objective_at(&res.x),
        }
    }
}

fn solve_status(res: &SolveResult, agent: usize) -> Result<(), MpcError> {
    match res.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(MpcError::LocalInfeasible { agent }),
        s => Err(MpcError::NumericalFailure { agent, detail: format!("{s:?}") }),
    }
}

/// Solve a local problem on its own (no consensus terms).
pub fn solve_local(lp: &LocalProblem, ctx: &MpcContext, init: &InitCondition) -> Result<LocalTrajectory, MpcError> {
    let res = lp.problem.solve(&ClarabelBackend, &ctx.settings)?;
    solve_status(&res, lp.agent)?;
    Ok(lp.extract(&res, init, ctx.horizon))
}

/// Literal local check of the feedback strategy: the agent's own problem
/// with consensus terms disabled admits a feasible point. Solver failures
/// count as infeasible.
pub fn check_feedback_feasibility(ctx: &MpcContext, i: usize, x: &[DVector<f64>], alpha_i: f64) -> bool {
    let init = InitCondition::feedback(x);
    let layout = ConsensusLayout::new(&ctx.net, ctx.horizon);
    let lp = match build_local_problem(ctx, &layout, i, &init, alpha_i) {
        Ok(lp) => lp,
        Err(_) => return false,
    };
    match solve_local(&lp, ctx, &init) {
        Ok(_) => true,
        Err(MpcError::LocalInfeasible { .. }) => false,
        Err(e) => {
            log::warn!("feasibility check of agent {i} failed: {e}");
            false
        }
    }
}

/// Network-wide predicted trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// `v[i][t]`, `t = 0..N−1`.
    pub v: Vec<Vec<DVector<f64>>>,
    /// `z[i][t]`, `t = 0..N`.
    pub z: Vec<Vec<DVector<f64>>>,
    /// `sigma[i][t]`, `t = 0..N`.
    pub sigma: Vec<Vec<DMatrix<f64>>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final `max_i ‖E_i ξ − y_i‖_∞` (zero for single-copy solves).
    pub residual: f64,
    pub message_floats: usize,
    /// Per-agent copies (consensus solves only).
    pub copies: Vec<LocalTrajectory>,
}

impl Plan {
    pub fn horizon(&self) -> usize {
        self.v.first().map_or(0, Vec::len)
    }

    /// `z_{N_i}(t)`.
    pub fn z_neighborhood(&self, net: &NetworkModel, i: usize, t: usize) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = self.z.iter().map(|zi| zi[t].clone()).collect();
        net.stack_neighborhood(i, &parts)
    }

    /// Largest entry-wise gap of the inputs.
    pub fn input_gap(&self, other: &Plan) -> f64 {
        self.v
            .iter()
            .zip(&other.v)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).amax()))
            .fold(0.0, f64::max)
    }
}

/// Centralized problem: one copy of every trajectory entry.
#[derive(Debug, Clone)]
pub struct CentralizedProblem {
    pub problem: ConicProblem,
    /// `(i, t) → id` for `1 ≤ t ≤ N`.
    pub z: BTreeMap<(usize, usize), VarId>,
    pub sigma: BTreeMap<(usize, usize), VarId>,
    pub v: BTreeMap<(usize, usize), VarId>,
}

pub fn build_centralized(ctx: &MpcContext, init: &InitCondition, alphas: &[f64]) -> Result<CentralizedProblem, MpcError> {
    let net = &ctx.net;
    let n_h = ctx.horizon;
    let mut p = ConicProblem::new();
    let mut all = TrajectoryHandles::default();
    let mut z = BTreeMap::new();
    let mut sigma = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (j, s) in net.subsystems.iter().enumerate() {
        all.z.insert((j, 0), const_column(&init.x0[j]));
        all.sigma.insert((j, 0), const_sym(&init.sigma0[j]));
        for t in 1..=n_h {
            let zid = p.add_vector(&format!("z{j}_{t}"), s.n);
            let sid = p.add_symmetric(&format!("S{j}_{t}"), s.n, false);
            all.z.insert((j, t), p.vector_expr(zid));
            all.sigma.insert((j, t), p.sym_expr(sid));
            z.insert((j, t), zid);
            sigma.insert((j, t), sid);
        }
        for t in 0..n_h {
            let vid = p.add_vector(&format!("v{j}_{t}"), s.m);
            all.v.insert((j, t), p.vector_expr(vid));
            v.insert((j, t), vid);
        }
    }
    for i in 0..net.count() {
        add_agent_block(&mut p, ctx, i, init, alphas[i], &all).map_err(|e| match e {
            MpcError::LocalInfeasible { agent } => {
                MpcError::GlobalInfeasible(format!("constant constraint of subsystem {agent} violated"))
            }
            other => other,
        })?;
    }
    Ok(CentralizedProblem { problem: p, z, sigma, v })
}

impl CentralizedProblem {
    /// Flat variable vector of a plan, for constraint checks.
    pub fn point_from_plan(&self, plan: &Plan) -> Vec<f64> {
        let mut x = vec![0.0; self.problem.num_vars()];
        for (&(i, t), &id) in &self.z {
            let off = self.problem.var_info(id).offset;
            x[off..off + plan.z[i][t].len()].copy_from_slice(plan.z[i][t].as_slice());
        }
        for (&(i, t), &id) in &self.sigma {
            let off = self.problem.var_info(id).offset;
            let sv = linalg::svec(&plan.sigma[i][t]);
            x[off..off + sv.len()].copy_from_slice(sv.as_slice());
        }
        for (&(i, t), &id) in &self.v {
            let off = self.problem.var_info(id).offset;
            x[off..off + plan.v[i][t].len()].copy_from_slice(plan.v[i][t].as_slice());
        }
        x
    }

    fn plan_from(&self, res: &SolveResult, init: &InitCondition, m: usize, n_h: usize) -> Plan {
        let mut z = Vec::with_capacity(m);
        let mut sigma = Vec::with_capacity(m);
        let mut v = Vec::with_capacity(m);
        for i in 0..m {
            let mut zi = vec![init.x0[i].clone()];
            let mut si = vec![init.sigma0[i].clone()];
            for t in 1..=n_h {
                zi.push(res.vector(self.z[&(i, t)]));
                si.push(res.symmetric(self.sigma[&(i, t)]));
            }
            z.push(zi);
            sigma.push(si);
            v.push((0..n_h).map(|t| res.vector(self.v[&(i, t)])).collect());
        }
        Plan { v, z, sigma, objective: res.objective, iterations: 0, converged: true, residual: 0.0, message_floats: 0, copies: Vec::new() }
    }
}

/// Solve the network problem as one conic program (reference for the
/// consensus solve).
pub fn solve_centralized(ctx: &MpcContext, init: &InitCondition, alphas: &[f64]) -> Result<Plan, MpcError> {
    let cp = build_centralized(ctx, init, alphas)?;
    let res = cp.problem.solve(&ClarabelBackend, &ctx.settings)?;
    match res.status {
        SolveStatus::Optimal => Ok(cp.plan_from(&res, init, ctx.net.count(), ctx.horizon)),
        SolveStatus::Infeasible => Err(MpcError::GlobalInfeasible("centralized problem is infeasible".into())),
        s => Err(MpcError::NumericalFailure { agent: usize::MAX, detail: format!("centralized solve: {s:?}") }),
    }
}

/// Candidate for the next step under the prediction strategy: the plan
/// shifted by one stage and extended with the terminal controller, with the
/// terminal covariance set to its bound.
pub fn shifted_plan(ctx: &MpcContext, plan: &Plan) -> (InitCondition, Plan) {
    let net = &ctx.net;
    let n_h = ctx.horizon;
    let m = net.count();
    let mut z = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    let mut v = Vec::with_capacity(m);
    for i in 0..m {
        let ing = &ctx.ingredients.subsystems[i];
        let zn = plan.z_neighborhood(net, i, n_h);
        let v_last = &ing.k * &zn;
        let z_next = &ctx.agents[i].closed_loop.a_k * &zn;
        let mut zi: Vec<DVector<f64>> = plan.z[i][1..].to_vec();
        zi.push(z_next);
        let mut si: Vec<DMatrix<f64>> = plan.sigma[i][1..].to_vec();
        si.push(ing.sigma_f.clone());
        let mut vi: Vec<DVector<f64>> = plan.v[i][1..].to_vec();
        vi.push(v_last);
        z.push(zi);
        sigma.push(si);
        v.push(vi);
    }
    let init = InitCondition::prediction(
        (0..m).map(|i| plan.z[i][1].clone()).collect(),
        (0..m).map(|i| plan.sigma[i][1].clone()).collect(),
    );
    let shifted = Plan { v, z, sigma, objective: f64::NAN, iterations: 0, converged: true, residual: 0.0, message_floats: 0, copies: Vec::new() };
    (init, shifted)
}

/// Solve the network problem by consensus ADMM over the agents' local
/// problems. Shared stages come from the averaged public vector; inputs and
/// terminal pairs from their owners.
pub fn solve_distributed(
    ctx: &MpcContext,
    init: &InitCondition,
    alphas: &[f64],
    params: &AdmmParams,
    trace: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<Plan, MpcError> {
    let net = &ctx.net;
    let n_h = ctx.horizon;
    let layout = ConsensusLayout::new(net, n_h);
    let locals: Vec<LocalProblem> =
        (0..net.count()).map(|i| build_local_problem(ctx, &layout, i, init, alphas[i])).collect::<Result<_, _>>()?;
    let mut agents: Vec<ConicAgent> = locals
        .iter()
        .map(|lp| {
            ConicAgent::new(lp.agent, lp.problem.clone(), lp.consensus_vars.clone(), lp.global_ids.clone(), params.rho, ctx.settings)
        })
        .collect::<Result<_, _>>()?;
    let out = run_consensus(&mut agents, layout.len, params, trace)?;
    if !out.converged {
        log::debug!("consensus stopped at {} iterations above tolerance", out.iterations);
    }
    let copies: Vec<LocalTrajectory> = locals
        .iter()
        .zip(&agents)
        .map(|(lp, a)| lp.extract(a.last().expect("agent solved at least once"), init, n_h))
        .collect();
    let xi = &out.state.xi;
    let mut z = Vec::with_capacity(net.count());
    let mut sigma = Vec::with_capacity(net.count());
    for (i, s) in net.subsystems.iter().enumerate() {
        let mut zi = vec![init.x0[i].clone()];
        let mut si = vec![init.sigma0[i].clone()];
        let shared = net.neighborhood(i).len() >= 2;
        for t in 1..n_h {
            if shared {
                let zo = layout.z(i, t);
                zi.push(DVector::from_column_slice(&xi[zo..zo + s.n]));
                let so = layout.sigma(i, t);
                si.push(linalg::smat(&xi[so..so + linalg::svec_len(s.n)], s.n));
            } else {
                zi.push(copies[i].z[&i][t].clone());
                si.push(copies[i].sigma[&i][t].clone());
            }
        }
        zi.push(copies[i].z[&i][n_h].clone());
        si.push(copies[i].sigma[&i][n_h].clone());
        z.push(zi);
        sigma.push(si);
    }
    Ok(Plan {
        v: copies.iter().map(|c| c.v.clone()).collect(),
        z,
        sigma,
        objective: copies.iter().map(|c| c.objective).sum(),
        iterations: out.iterations,
        converged: out.converged,
        residual: out.state.residual_history.last().map_or(f64::INFINITY, |r| r.iter().copied().fold(0.0, f64::max)),
        message_floats: out.message_floats,
        copies,
    })
}
