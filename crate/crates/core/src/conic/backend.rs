use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{Cone, RawSolution, SolveStats, SolveStatus, SolverSettings, StandardForm};
use crate::error::ConicError;

/// A problem that has been handed to a backend and can be re-solved with a
/// different linear objective without rebuilding.
pub trait PreparedProblem: Send {
    /// Solve, optionally replacing the standard-form `q` first.
    fn solve(&mut self, q: Option<&[f64]>) -> Result<RawSolution, ConicError>;
}

pub trait ConicBackend: Sync {
    fn name(&self) -> &'static str;
    /// Whether the backend accepts a quadratic objective matrix natively.
    fn supports_quadratic(&self) -> bool;
    fn prepare(&self, form: &StandardForm, settings: &SolverSettings) -> Result<Box<dyn PreparedProblem>, ConicError>;
}

/// Interior-point backend for LP/QP/SOCP/SDP/exponential-cone problems.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

struct ClarabelPrepared {
    solver: DefaultSolver<f64>,
}

fn to_csc(m: usize, n: usize, trips: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let (mut i, mut j, mut v) = (Vec::with_capacity(trips.len()), Vec::with_capacity(trips.len()), Vec::with_capacity(trips.len()));
    for &(r, c, x) in trips {
        i.push(r);
        j.push(c);
        v.push(x);
    }
    CscMatrix::new_from_triplets(m, n, i, j, v)
}

fn clarabel_settings(s: &SolverSettings) -> Result<DefaultSettings<f64>, ConicError> {
    DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_feas(s.feas_tol)
        .tol_gap_abs(s.gap_tol)
        .tol_gap_rel(s.gap_tol)
        .max_iter(s.max_iter)
        .presolve_enable(false)
        .chordal_decomposition_enable(false)
        .input_sparse_dropzeros(false)
        .max_threads(1)
        .build()
        .map_err(|e| ConicError::Backend(format!("{e:?}")))
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn supports_quadratic(&self) -> bool {
        true
    }

    fn prepare(&self, form: &StandardForm, settings: &SolverSettings) -> Result<Box<dyn PreparedProblem>, ConicError> {
        let n = form.n;
        let m = form.m();
        for &(r, c, _) in &form.p {
            if r > c || c >= n {
                return Err(ConicError::Malformed(format!("P entry ({r},{c}) outside upper triangle")));
            }
        }
        if let Some(&(r, c, _)) = form.a.iter().find(|t| t.0 >= m || t.1 >= n) {
            return Err(ConicError::Malformed(format!("A entry ({r},{c}) out of range")));
        }
        let cone_rows: usize = form.cones.iter().map(Cone::dim).sum();
        if cone_rows != m {
            return Err(ConicError::Malformed(format!("cones cover {cone_rows} rows, problem has {m}")));
        }
        let p = to_csc(n, n, &form.p);
        let a = to_csc(m, n, &form.a);
        let cones: Vec<SupportedConeT<f64>> = form
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(k) => SupportedConeT::ZeroConeT(k),
                Cone::Nonneg(k) => SupportedConeT::NonnegativeConeT(k),
                Cone::SecondOrder(k) => SupportedConeT::SecondOrderConeT(k),
                Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
                Cone::Exponential => SupportedConeT::ExponentialConeT(),
            })
            .collect();
        let solver = DefaultSolver::new(&p, &form.q, &a, &form.b, &cones, clarabel_settings(settings)?)
            .map_err(|e| ConicError::Backend(format!("{e:?}")))?;
        Ok(Box::new(ClarabelPrepared { solver }))
    }
}

fn map_status(s: SolverStatus) -> (SolveStatus, bool) {
    match s {
        SolverStatus::Solved => (SolveStatus::Optimal, false),
        SolverStatus::AlmostSolved => (SolveStatus::Optimal, true),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => (SolveStatus::Infeasible, false),
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => (SolveStatus::Unbounded, false),
        SolverStatus::MaxIterations | SolverStatus::MaxTime => (SolveStatus::MaxIter, false),
        other => {
            log::debug!("backend status {other:?}");
            (SolveStatus::NumericalFailure, false)
        }
    }
}

impl PreparedProblem for ClarabelPrepared {
    fn solve(&mut self, q: Option<&[f64]>) -> Result<RawSolution, ConicError> {
        if let Some(q) = q {
            self.solver.update_q(&q.to_vec()).map_err(|e| ConicError::Backend(format!("{e:?}")))?;
        }
        self.solver.solve();
        let sol = &self.solver.solution;
        let (status, reduced) = map_status(sol.status);
        Ok(RawSolution {
            status,
            x: sol.x.clone(),
            objective: sol.obj_val,
            stats: SolveStats {
                iterations: sol.iterations,
                solve_time: sol.solve_time,
                primal_residual: sol.r_prim,
                dual_residual: sol.r_dual,
                reduced_accuracy: reduced,
            },
        })
    }
}
