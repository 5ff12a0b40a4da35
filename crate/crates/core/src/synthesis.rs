//! Offline design of terminal ingredients.
//!
//! Per subsystem the design variables are `E_i = P_i⁻¹`, the structured
//! gain factor `Y_i = K_i E_{N_i}` and the relaxation factor
//! `F_i = E_{N_i} Γ_i E_{N_i}`, with `E_{N_i} = blkdiag(E_j, j ∈ N_i)`.
//! The terminal covariance bound is fixed to `E_{N_i}` and the feedback
//! factor of the covariance LMI to `Y_i`, which keeps the whole problem an
//! LMI. The volume of the terminal ellipsoid is maximised through
//! `Σ log det E_i`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::admm::{run_consensus, AdmmParams, ConicAgent};
use crate::conic::{AffineMatrix, ConicProblem, LinExpr, LogDetMode, SolveStatus, SolverSettings, VarId};
use crate::error::{IoError, SynthesisError};
use crate::linalg;
use crate::model::{assemble_global, NetworkModel};
use crate::tightening::RowTightening;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthesisMode {
    Monolithic,
    Consensus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub mode: SynthesisMode,
    pub settings: SolverSettings,
    pub logdet: LogDetMode,
    /// Consensus mode only.
    pub admm: AdmmParams,
    /// Linearisation parameter of the chance-constraint tightening.
    pub epsilon: f64,
    /// When set to `κ`, every tightened terminal row keeps
    /// `t̃h ≥ κ (1 − ε/2) h`, which is affine in `E_i` for state rows and an
    /// LMI in `(Y_i, E_{N_i})` for input rows. `None` leaves the terminal
    /// covariance unconstrained, in which case the terminal set may be empty.
    pub terminal_row_fraction: Option<f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            mode: SynthesisMode::Monolithic,
            // the invariance residual is checked at 1e-6 after recovery
            settings: SolverSettings { feas_tol: 1e-10, gap_tol: 1e-10, ..SolverSettings::default() },
            logdet: LogDetMode::Exact,
            admm: AdmmParams { rho: 1e4, eps_c: 1e-6, max_iter: 1000 },
            epsilon: 0.5,
            terminal_row_fraction: Some(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemIngredients {
    pub neighborhood: Vec<usize>,
    /// Terminal weight `P_i`.
    #[serde(with = "crate::serde_mat")]
    pub p: DMatrix<f64>,
    /// Structured gain `K_{N_i}` (`m_i × d_i`).
    #[serde(with = "crate::serde_mat")]
    pub k: DMatrix<f64>,
    /// Relaxation weight `Γ_{N_i}` (`d_i × d_i`, indefinite).
    #[serde(with = "crate::serde_mat")]
    pub gamma: DMatrix<f64>,
    /// Covariance cap: `E_{N_i} ⪰ ψ_i I`.
    pub psi: f64,
    /// Terminal covariance bound `Σ_{f,i} = E_i`.
    #[serde(with = "crate::serde_mat")]
    pub sigma_f: DMatrix<f64>,
    /// `E_{N_i}`.
    #[serde(with = "crate::serde_mat")]
    pub sigma_f_neighborhood: DMatrix<f64>,
    pub alpha0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalIngredients {
    pub model_hash: String,
    pub mode: SynthesisMode,
    /// Global terminal-set level.
    pub alpha: f64,
    pub subsystems: Vec<SubsystemIngredients>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    State,
    Input,
    Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaBound {
    pub kind: BoundKind,
    /// `None` for the network-wide covariance bound.
    pub subsystem: Option<usize>,
    pub row: usize,
    /// Tightened right-hand side (zero for the covariance bound).
    pub tightened_bound: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub alpha: f64,
    pub bounds: Vec<AlphaBound>,
    /// Index into `bounds` of the smallest bound.
    pub binding: usize,
}

/// Handles of one subsystem's design variables inside a conic problem.
struct DesignHandles {
    /// `E_j` for `j ∈ N_i`, in neighbourhood order.
    e: Vec<AffineMatrix>,
    y: AffineMatrix,
    f: AffineMatrix,
    phi: LinExpr,
}

fn e_neighborhood(h: &DesignHandles) -> AffineMatrix {
    AffineMatrix::block_diag(&h.e)
}

/// Cost-decrease LMI, covariance LMI and covariance-cap LMI of subsystem `i`.
fn add_subsystem_lmis(p: &mut ConicProblem, net: &NetworkModel, i: usize, h: &DesignHandles) {
    let s = &net.subsystems[i];
    let d = net.neighborhood_dim(i);
    let (n, m) = (s.n, s.m);
    let off = net.block_offset(i, i).unwrap();
    let pos = net.neighborhood(i).binary_search(&i).unwrap();
    let e_i = &h.e[pos];
    let e_n = e_neighborhood(h);

    let ga = e_n.left_mul(&net.a_neighborhood(i)).add(&h.y.left_mul(&s.b));
    let gc = e_n.left_mul(&net.c_neighborhood(i)).add(&h.y.left_mul(&s.d));

    // Ē_i: E_i lifted into the neighbourhood
    let mut e_bar = AffineMatrix::zeros(d, d);
    let mut e_row = AffineMatrix::zeros(n, d);
    for r in 0..n {
        for c in 0..n {
            *e_bar.get_mut(off + r, off + c) = e_i.get(r, c).clone();
            *e_row.get_mut(r, off + c) = e_i.get(r, c).clone();
        }
    }
    let q_row = e_row.left_mul(&linalg::sym_sqrt(&s.q));
    let r_row = h.y.left_mul(&linalg::sym_sqrt(&s.r));
    let z = |a: usize, b: usize| Some(AffineMatrix::zeros(a, b));
    let top = e_bar.add(&h.f);
    let decrease = AffineMatrix::blocks(&[
        vec![Some(top), Some(ga.transpose()), Some(gc.transpose()), Some(q_row.transpose()), Some(r_row.transpose())],
        vec![Some(ga.clone()), Some(e_i.clone()), z(n, n), z(n, n), z(n, m)],
        vec![Some(gc.clone()), z(n, n), Some(e_i.clone()), z(n, n), z(n, m)],
        vec![Some(q_row), z(n, n), z(n, n), Some(AffineMatrix::identity(n)), z(n, m)],
        vec![Some(r_row), z(m, n), z(m, n), z(m, n), Some(AffineMatrix::identity(m))],
    ]);
    p.add_psd(&decrease);

    p.add_psd(&terminal_covariance_lmi(e_i, &e_n, &ga, &gc));
    p.add_psd(&covariance_cap_lmi(&e_n, &h.phi));
}

/// Keep the tightened terminal rows of subsystem `i` at least a fraction
/// `kappa` of their nominal bound.
fn add_terminal_row_margins(p: &mut ConicProblem, net: &NetworkModel, i: usize, h: &DesignHandles, epsilon: f64, kappa: f64) {
    let s = &net.subsystems[i];
    let pos = net.neighborhood(i).binary_search(&i).unwrap();
    for row in &s.state_rows {
        let t = RowTightening::new(row, epsilon).expect("validated row");
        // η H E_i Hᵀ ≤ (1 − κ)(1 − ε/2) h
        let z = AffineMatrix::zeros(s.n, 1);
        let mut slack = t.slack_expr(&z, &h.e[pos], None);
        slack.add_scaled(&LinExpr::constant(t.nominal_bound), -kappa);
        p.add_nonneg(vec![slack]);
    }
    if s.input_rows.is_empty() {
        return;
    }
    let e_n = e_neighborhood(h);
    for row in &s.input_rows {
        let t = RowTightening::new(row, epsilon).expect("validated row");
        // η H Y E_N⁻¹ Yᵀ Hᵀ ≤ c  ⇔  [[c/η, H Y], [·, E_N]] ⪰ 0
        let c = (1.0 - kappa) * t.nominal_bound / t.eta;
        let hy = h.y.left_mul(&DMatrix::from_row_slice(1, s.m, t.h_row.as_slice()));
        p.add_psd(&AffineMatrix::blocks(&[
            vec![Some(AffineMatrix::constant(&DMatrix::from_element(1, 1, c))), Some(hy.clone())],
            vec![Some(hy.transpose()), Some(e_n.clone())],
        ]));
    }
}

/// `[[Σ_f, A Σ̂ + B U, C Σ̂ + D U], [·, Σ̂, 0], [·, 0, ½ Σ̂]] ⪰ 0`.
pub fn terminal_covariance_lmi(sigma_f: &AffineMatrix, sigma_hat: &AffineMatrix, ga: &AffineMatrix, gc: &AffineMatrix) -> AffineMatrix {
    let d = sigma_hat.nrows();
    AffineMatrix::blocks(&[
        vec![Some(sigma_f.clone()), Some(ga.clone()), Some(gc.clone())],
        vec![Some(ga.transpose()), Some(sigma_hat.clone()), Some(AffineMatrix::zeros(d, d))],
        vec![Some(gc.transpose()), Some(AffineMatrix::zeros(d, d)), Some(sigma_hat.scaled(0.5))],
    ])
}

/// `[[Σ̂, I], [I, φ I]] ⪰ 0`, i.e. `Σ̂ ⪰ (1/φ) I`.
pub fn covariance_cap_lmi(sigma_hat: &AffineMatrix, phi: &LinExpr) -> AffineMatrix {
    let d = sigma_hat.nrows();
    let phi_i = AffineMatrix::from_fn(d, d, |r, c| if r == c { phi.clone() } else { LinExpr::zero() });
    AffineMatrix::blocks(&[
        vec![Some(sigma_hat.clone()), Some(AffineMatrix::identity(d))],
        vec![Some(AffineMatrix::identity(d)), Some(phi_i)],
    ])
}

/// `−Σ_i W_iᵀ F_i W_i ⪰ 0`.
fn add_coupling(p: &mut ConicProblem, net: &NetworkModel, f: &[AffineMatrix]) {
    let n = net.state_dim();
    let mut sum = AffineMatrix::zeros(n, n);
    for (i, fi) in f.iter().enumerate() {
        let glob: Vec<usize> = net
            .neighborhood(i)
            .iter()
            .flat_map(|&j| (0..net.subsystems[j].n).map(move |k| (j, k)))
            .map(|(j, k)| net.state_offset(j) + k)
            .collect();
        for (a, &ga) in glob.iter().enumerate() {
            for (b, &gb) in glob.iter().enumerate() {
                sum.get_mut(ga, gb).add_scaled(fi.get(a, b), -1.0);
            }
        }
    }
    p.add_psd(&sum);
}

/// Numeric design variables of one subsystem.
#[derive(Debug, Clone)]
struct DesignValues {
    e_n: DMatrix<f64>,
    e_i: DMatrix<f64>,
    y: DMatrix<f64>,
    f: DMatrix<f64>,
}

fn recover(net: &NetworkModel, vals: &[DesignValues]) -> Result<Vec<SubsystemIngredients>, SynthesisError> {
    vals.iter()
        .enumerate()
        .map(|(i, v)| {
            let e_n_inv = linalg::spd_inverse(&v.e_n)?;
            let k = &v.y * &e_n_inv;
            // without neighbours the coupling LMI forces F_i ⪯ 0 on a block of its
            // own, and F_i = 0 only relaxes the decrease LMI
            let gamma = if net.neighborhood(i).len() == 1 {
                DMatrix::zeros(v.f.nrows(), v.f.ncols())
            } else {
                linalg::symmetrize(&(&e_n_inv * &v.f * &e_n_inv))
            };
            Ok(SubsystemIngredients {
                neighborhood: net.neighborhood(i).to_vec(),
                p: linalg::spd_inverse(&v.e_i)?,
                k,
                gamma,
                psi: linalg::min_eigenvalue(&v.e_n),
                sigma_f: linalg::symmetrize(&v.e_i),
                sigma_f_neighborhood: linalg::symmetrize(&v.e_n),
                alpha0: 0.0,
            })
        })
        .collect()
}

fn monolithic(net: &NetworkModel, opts: &SynthesisOptions) -> Result<Vec<DesignValues>, SynthesisError> {
    let mut p = ConicProblem::new();
    p.set_logdet_mode(opts.logdet);
    let e_ids: Vec<VarId> =
        net.subsystems.iter().map(|s| p.add_symmetric(&format!("E{}", s.index), s.n, false)).collect();
    let mut y_ids = Vec::new();
    let mut f_ids = Vec::new();
    let mut handles = Vec::new();
    for i in 0..net.count() {
        let s = &net.subsystems[i];
        let d = net.neighborhood_dim(i);
        let (yid, y) = p.add_matrix(&format!("Y{i}"), s.m, d);
        let fid = p.add_symmetric(&format!("F{i}"), d, false);
        let phi = p.add_scalar(&format!("phi{i}"));
        y_ids.push(yid);
        f_ids.push(fid);
        handles.push(DesignHandles {
            e: net.neighborhood(i).iter().map(|&j| p.sym_expr(e_ids[j])).collect(),
            y,
            f: p.sym_expr(fid),
            phi: p.scalar_expr(phi),
        });
    }
    for (i, h) in handles.iter().enumerate() {
        add_subsystem_lmis(&mut p, net, i, h);
        if let Some(kappa) = opts.terminal_row_fraction {
            add_terminal_row_margins(&mut p, net, i, h, opts.epsilon, kappa);
        }
    }
    let f_exprs: Vec<AffineMatrix> = handles.iter().map(|h| h.f.clone()).collect();
    add_coupling(&mut p, net, &f_exprs);
    for &e in &e_ids {
        p.add_logdet_max(e, 1.0);
    }
    let res = p.solve(&crate::conic::ClarabelBackend, &opts.settings)?;
    if res.status != SolveStatus::Optimal {
        return Err(SynthesisError::SynthesisInfeasible(format!("solver status {:?}", res.status)));
    }
    let e_vals: Vec<DMatrix<f64>> = e_ids.iter().map(|&e| res.symmetric(e)).collect();
    Ok((0..net.count())
        .map(|i| {
            let s = &net.subsystems[i];
            let d = net.neighborhood_dim(i);
            let yv = res.vector(y_ids[i]);
            DesignValues {
                e_n: net.blockdiag_neighborhood(i, &e_vals),
                e_i: e_vals[i].clone(),
                y: DMatrix::from_column_slice(s.m, d, yv.as_slice()),
                f: res.symmetric(f_ids[i]),
            }
        })
        .collect())
}

/// Consensus over copies of the shared `E_j` blocks; an extra coordinating
/// agent holds copies of every `F_i` and enforces the coupling LMI.
fn consensus(net: &NetworkModel, opts: &SynthesisOptions) -> Result<Vec<DesignValues>, SynthesisError> {
    let mm = net.count();
    let e_len: Vec<usize> = net.subsystems.iter().map(|s| linalg::svec_len(s.n)).collect();
    let f_len: Vec<usize> = (0..mm).map(|i| linalg::svec_len(net.neighborhood_dim(i))).collect();
    let mut e_off = Vec::new();
    let mut f_off = Vec::new();
    let mut acc = 0;
    for l in &e_len {
        e_off.push(acc);
        acc += l;
    }
    for l in &f_len {
        f_off.push(acc);
        acc += l;
    }
    let n_global = acc;
    let rho = opts.admm.rho;

    let mut agents = Vec::with_capacity(mm + 1);
    let mut agent_vars: Vec<(Vec<VarId>, (VarId, usize, usize), VarId)> = Vec::new();
    for i in 0..mm {
        let s = &net.subsystems[i];
        let d = net.neighborhood_dim(i);
        let mut p = ConicProblem::new();
        p.set_logdet_mode(opts.logdet);
        let nb = net.neighborhood(i).to_vec();
        let e_ids: Vec<VarId> =
            nb.iter().map(|&j| p.add_symmetric(&format!("E{j}"), net.subsystems[j].n, false)).collect();
        let (yid, y) = p.add_matrix("Y", s.m, d);
        let fid = p.add_symmetric("F", d, false);
        let phi = p.add_scalar("phi");
        let h = DesignHandles {
            e: e_ids.iter().map(|&e| p.sym_expr(e)).collect(),
            y,
            f: p.sym_expr(fid),
            phi: p.scalar_expr(phi),
        };
        add_subsystem_lmis(&mut p, net, i, &h);
        if let Some(kappa) = opts.terminal_row_fraction {
            add_terminal_row_margins(&mut p, net, i, &h, opts.epsilon, kappa);
        }
        let own = e_ids[nb.binary_search(&i).unwrap()];
        p.add_logdet_max(own, 1.0);
        let mut vars = Vec::new();
        let mut gids = Vec::new();
        for (&j, &e) in nb.iter().zip(&e_ids) {
            let info = p.var_info(e);
            for k in 0..info.len {
                vars.push(info.offset + k);
                gids.push(e_off[j] + k);
            }
        }
        let info = p.var_info(fid);
        for k in 0..info.len {
            vars.push(info.offset + k);
            gids.push(f_off[i] + k);
        }
        agents.push(ConicAgent::new(i, p, vars, gids, rho, opts.settings)?);
        agent_vars.push((e_ids, (yid, s.m, d), fid));
    }
    // coordinating agent
    {
        let mut p = ConicProblem::new();
        let f_ids: Vec<VarId> = (0..mm).map(|i| p.add_symmetric(&format!("F{i}"), net.neighborhood_dim(i), false)).collect();
        let f_exprs: Vec<AffineMatrix> = f_ids.iter().map(|&f| p.sym_expr(f)).collect();
        add_coupling(&mut p, net, &f_exprs);
        let mut vars = Vec::new();
        let mut gids = Vec::new();
        for (i, &f) in f_ids.iter().enumerate() {
            let info = p.var_info(f);
            for k in 0..info.len {
                vars.push(info.offset + k);
                gids.push(f_off[i] + k);
            }
        }
        agents.push(ConicAgent::new(mm, p, vars, gids, rho, opts.settings)?);
    }
    let out = run_consensus(&mut agents, n_global, &opts.admm, None).map_err(|e| match e {
        crate::error::MpcError::LocalInfeasible { agent } => {
            SynthesisError::SynthesisInfeasible(format!("consensus agent {agent} infeasible"))
        }
        other => SynthesisError::SynthesisInfeasible(other.to_string()),
    })?;
    if !out.converged {
        log::warn!("consensus synthesis stopped after {} iterations without reaching tolerance", out.iterations);
    }
    log::debug!("consensus synthesis converged in {} iterations", out.iterations);
    let xi = &out.state.xi;
    let e_vals: Vec<DMatrix<f64>> =
        (0..mm).map(|j| linalg::smat(&xi[e_off[j]..e_off[j] + e_len[j]], net.subsystems[j].n)).collect();
    Ok((0..mm)
        .map(|i| {
            let d = net.neighborhood_dim(i);
            let (_, (yid, m, _), _) = &agent_vars[i];
            let res = agents[i].last().expect("agent solved");
            let yv = res.vector(*yid);
            DesignValues {
                e_n: net.blockdiag_neighborhood(i, &e_vals),
                e_i: e_vals[i].clone(),
                y: DMatrix::from_column_slice(*m, d, yv.as_slice()),
                f: linalg::smat(&xi[f_off[i]..f_off[i] + f_len[i]], d),
            }
        })
        .collect())
}

/// Solve the structured design problem and recover `P_i, K_i, Γ_i, ψ_i`.
///
/// The returned ingredients have `alpha = 0`; see [`design`] for the full
/// pipeline including the terminal-set level.
pub fn synthesize_terminal(net: &NetworkModel, opts: &SynthesisOptions) -> Result<TerminalIngredients, SynthesisError> {
    let vals = match opts.mode {
        SynthesisMode::Monolithic => monolithic(net, opts)?,
        SynthesisMode::Consensus => consensus(net, opts)?,
    };
    let subsystems = recover(net, &vals)?;
    Ok(TerminalIngredients { model_hash: String::new(), mode: opts.mode, alpha: 0.0, subsystems })
}

/// Full offline pipeline: synthesis, terminal-set level, initial split `α/M`.
pub fn design(
    net: &NetworkModel,
    model_hash: &str,
    opts: &SynthesisOptions,
) -> Result<(TerminalIngredients, AlphaReport), SynthesisError> {
    let mut ing = synthesize_terminal(net, opts)?;
    let report = compute_alpha(&ing, net, opts.epsilon)?;
    ing.alpha = report.alpha;
    let share = report.alpha / net.count() as f64;
    for s in &mut ing.subsystems {
        s.alpha0 = share;
    }
    ing.model_hash = model_hash.to_string();
    Ok((ing, report))
}

/// Largest `α` such that `{zᵀ P z ≤ α}` satisfies the tightened terminal
/// rows and `z zᵀ ⪯ ψ I` with `ψ = min_i ψ_i`.
///
/// Each bound is local; the minimum is formed by min-consensus over the
/// coupling graph. The covariance bound uses `min_j ψ_j / max_i ‖P_i⁻¹‖`,
/// which is what `‖z‖² ≤ ψ` on the global ellipsoid requires.
pub fn compute_alpha(ing: &TerminalIngredients, net: &NetworkModel, epsilon: f64) -> Result<AlphaReport, SynthesisError> {
    let mut bounds = Vec::new();
    for (i, (s, si)) in net.subsystems.iter().zip(&ing.subsystems).enumerate() {
        for (r, row) in s.state_rows.iter().enumerate() {
            let t = RowTightening::new(row, epsilon).map_err(|e| SynthesisError::SynthesisInfeasible(e.to_string()))?;
            let th = t.rhs(&si.sigma_f);
            if th <= 0.0 {
                return Err(SynthesisError::EmptyTerminalSet { subsystem: i, kind: "state", row: r, value: th });
            }
            let denom = linalg::quad_form(&si.sigma_f, &row.h_row);
            let value = if denom > 0.0 { th * th / denom } else { f64::INFINITY };
            bounds.push(AlphaBound { kind: BoundKind::State, subsystem: Some(i), row: r, tightened_bound: th, value });
        }
        for (r, row) in s.input_rows.iter().enumerate() {
            let t = RowTightening::new(row, epsilon).map_err(|e| SynthesisError::SynthesisInfeasible(e.to_string()))?;
            let th = t.input_rhs(&si.k, &si.sigma_f_neighborhood);
            if th <= 0.0 {
                return Err(SynthesisError::EmptyTerminalSet { subsystem: i, kind: "input", row: r, value: th });
            }
            let kh = si.k.transpose() * &row.h_row;
            let denom = linalg::quad_form(&si.sigma_f_neighborhood, &kh);
            let value = if denom > 0.0 { th * th / denom } else { f64::INFINITY };
            bounds.push(AlphaBound { kind: BoundKind::Input, subsystem: Some(i), row: r, tightened_bound: th, value });
        }
    }
    let psi_local: Vec<f64> = ing.subsystems.iter().map(|s| s.psi).collect();
    let neg_norm: Vec<f64> = ing.subsystems.iter().map(|s| -linalg::max_eigenvalue(&s.sigma_f)).collect();
    let psi = net.graph.min_consensus(&psi_local)[0];
    let max_norm = -net.graph.min_consensus(&neg_norm)[0];
    bounds.push(AlphaBound { kind: BoundKind::Covariance, subsystem: None, row: 0, tightened_bound: 0.0, value: psi / max_norm });

    // local minima, then network-wide min
    let mut local_min = vec![f64::INFINITY; net.count()];
    for b in &bounds {
        match b.subsystem {
            Some(i) => local_min[i] = local_min[i].min(b.value),
            None => local_min.iter_mut().for_each(|v| *v = v.min(b.value)),
        }
    }
    let alpha = net.graph.min_consensus(&local_min)[0];
    let binding = bounds
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|(k, _)| k)
        .unwrap();
    Ok(AlphaReport { alpha, bounds, binding })
}

/// Global gain `K` (`m × n`) and weight `P` (block diagonal).
pub fn global_gain_and_weight(ing: &TerminalIngredients, net: &NetworkModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let (_, lift) = assemble_global(net);
    let k_rows: Vec<DMatrix<f64>> = ing.subsystems.iter().zip(&lift.w).map(|(s, w)| &s.k * w).collect();
    let k = linalg::vcat(&k_rows);
    let p = linalg::block_diag(&ing.subsystems.iter().map(|s| s.p.clone()).collect::<Vec<_>>());
    (k, p)
}

/// `λ_max((A+BK)ᵀP(A+BK) + (C+DK)ᵀP(C+DK) + Q + KᵀRK − P)`.
pub fn terminal_decrease_residual(ing: &TerminalIngredients, net: &NetworkModel) -> f64 {
    let (g, _) = assemble_global(net);
    let (k, p) = global_gain_and_weight(ing, net);
    decrease_residual(&g.a, &g.b, &g.c, &g.d, &g.q, &g.r, &k, &p)
}

#[allow(clippy::too_many_arguments)]
pub fn decrease_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let ak = a + b * k;
    let ck = c + d * k;
    let m = ak.transpose() * p * &ak + ck.transpose() * p * &ck + q + k.transpose() * r * k - p;
    linalg::max_eigenvalue(&linalg::symmetrize(&m))
}

/// Spectral radius of the second-moment map `X ↦ A_K X A_Kᵀ + C_K X C_Kᵀ`.
pub fn mean_square_radius(ing: &TerminalIngredients, net: &NetworkModel) -> f64 {
    let (g, _) = assemble_global(net);
    let (k, _) = global_gain_and_weight(ing, net);
    let ak = &g.a + &g.b * &k;
    let ck = &g.c + &g.d * &k;
    let op = ak.kronecker(&ak) + ck.kronecker(&ck);
    op.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Residual of the equality fixed point
/// `Σ_f = A_K Σ̂ A_Kᵀ + 2 C_K Σ̂ C_Kᵀ` per subsystem (informational; only the
/// inequality is certified). Returns the largest absolute entry.
pub fn terminal_covariance_equality_residual(ing: &TerminalIngredients, net: &NetworkModel) -> f64 {
    ing.subsystems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cl = crate::covariance::ClosedLoop::new(net, i, &s.k);
            let rhs = &cl.a_k * &s.sigma_f_neighborhood * cl.a_k.transpose()
                + (&cl.c_k * &s.sigma_f_neighborhood * cl.c_k.transpose()) * 2.0;
            (&s.sigma_f - rhs).amax()
        })
        .fold(0.0, f64::max)
}

/// Margins of the tightened terminal rows and the covariance cap at `z`
/// (negative means violated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalPointCheck {
    pub state_margin: f64,
    pub input_margin: f64,
    pub psi_margin: f64,
}

pub fn check_terminal_point(ing: &TerminalIngredients, net: &NetworkModel, epsilon: f64, z: &DVector<f64>) -> TerminalPointCheck {
    let parts = net.split_state(z);
    let mut state_margin = f64::INFINITY;
    let mut input_margin = f64::INFINITY;
    for (i, (s, si)) in net.subsystems.iter().zip(&ing.subsystems).enumerate() {
        for row in &s.state_rows {
            let t = RowTightening::new(row, epsilon).expect("validated row");
            state_margin = state_margin.min(t.rhs(&si.sigma_f) - row.h_row.dot(&parts[i]));
        }
        if !s.input_rows.is_empty() {
            let zn = net.stack_neighborhood(i, &parts);
            let u = &si.k * zn;
            for row in &s.input_rows {
                let t = RowTightening::new(row, epsilon).expect("validated row");
                input_margin = input_margin.min(t.input_rhs(&si.k, &si.sigma_f_neighborhood) - row.h_row.dot(&u));
            }
        }
    }
    let psi = ing.subsystems.iter().map(|s| s.psi).fold(f64::INFINITY, f64::min);
    TerminalPointCheck { state_margin, input_margin, psi_margin: psi - z.norm_squared() }
}

/// Points on `{zᵀ P z = level}`: uniform directions mixed with points
/// clustered around the maximiser of every terminal constraint, so that a
/// slightly too large level is caught by sampling.
pub fn sample_terminal_boundary<R: Rng>(
    ing: &TerminalIngredients,
    net: &NetworkModel,
    level: f64,
    count: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let (_, p) = global_gain_and_weight(ing, net);
    let n = p.nrows();
    let p_inv = linalg::spd_inverse(&p).expect("P is positive definite");
    let p_inv_sqrt = linalg::sym_sqrt(&p_inv);
    let (_, lift) = assemble_global(net);

    // directions c whose support-function maximiser is P⁻¹c / √(cᵀP⁻¹c)
    let mut targets: Vec<DVector<f64>> = Vec::new();
    for (i, s) in net.subsystems.iter().enumerate() {
        for row in &s.state_rows {
            targets.push(lift.t[i].transpose() * &row.h_row);
        }
        for row in &s.input_rows {
            let ki = &ing.subsystems[i].k * &lift.w[i];
            targets.push(ki.transpose() * &row.h_row);
        }
    }
    let eig = nalgebra::SymmetricEigen::new(p_inv.clone());
    let top = eig.eigenvalues.imax();
    targets.push(eig.eigenvectors.column(top).into_owned());

    let project = |w: DVector<f64>| -> DVector<f64> {
        // scale onto the boundary
        let q = linalg::quad_form(&p, &w);
        w * (level / q).sqrt()
    };
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if s % 2 == 0 || targets.is_empty() {
            out.push(project(&p_inv_sqrt * g));
        } else {
            let c = &targets[(s / 2) % targets.len()];
            let centre = &p_inv * c;
            let spread = 10f64.powf(-rng.random_range(1.0..6.0));
            let w = &centre / centre.norm().max(1e-300) + (&p_inv_sqrt * g) * spread;
            out.push(project(w));
        }
    }
    out
}

impl TerminalIngredients {
    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| IoError::Parse(e.to_string()))?;
        std::fs::write(path, json).map_err(|source| IoError::Io { path: path.display().to_string(), source })
    }

    /// Load and, if `expected_hash` is given, refuse ingredients built for a
    /// different model.
    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self, IoError> {
        let s = std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
        let ing: Self = serde_json::from_str(&s).map_err(|e| IoError::Parse(e.to_string()))?;
        if let Some(h) = expected_hash {
            if ing.model_hash != h {
                return Err(IoError::HashMismatch { expected: ing.model_hash, actual: h.to_string() });
            }
        }
        Ok(ing)
    }

    /// Global `ψ = min_i ψ_i`.
    pub fn psi(&self) -> f64 {
        self.subsystems.iter().map(|s| s.psi).fold(f64::INFINITY, f64::min)
    }

    /// Check shapes against a network.
    pub fn matches(&self, net: &NetworkModel) -> bool {
        self.subsystems.len() == net.count()
            && self.subsystems.iter().enumerate().all(|(i, s)| {
                let d = net.neighborhood_dim(i);
                let sub = &net.subsystems[i];
                s.neighborhood == net.neighborhood(i)
                    && s.p.shape() == (sub.n, sub.n)
                    && s.k.shape() == (sub.m, d)
                    && s.gamma.shape() == (d, d)
            })
    }
}
