//! Solver-independent conic problem construction.
//!
//! A [`ConicProblem`] holds a registry of variables (scalars, vectors and
//! symmetric matrices in svec packing), affine cone memberships, and an
//! objective made of a linear part, weighted sums of squares of affine
//! expressions, and optional log-det terms. [`ConicProblem::lower`] turns it
//! into the standard form `min ½xᵀPx + qᵀx  s.t.  b − Ax ∈ K` consumed by a
//! [`ConicBackend`].
//!
//! Log-det terms use the triangular-factor reformulation
//! `log det X ≥ Σ_k log Z_kk` with `[[X, Z], [Zᵀ, diag(Z)]] ⪰ 0`, `Z` lower
//! triangular, and one exponential cone per diagonal entry. Quadratic terms
//! are passed natively to backends that accept `P`, or lifted to rotated
//! second-order-cone epigraphs when [`LowerOptions::lift_quadratics`] is set.

mod backend;
mod expr;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use backend::{ClarabelBackend, ConicBackend, PreparedProblem};
pub use expr::{AffineMatrix, LinExpr};

use crate::error::ConicError;
use crate::linalg::{self, svec_index, svec_len, SQRT2};

pub const DEFAULT_FEAS_TOL: f64 = 1e-8;
pub const DEFAULT_PSD_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Scalar,
    Vector(usize),
    /// Symmetric matrix in svec packing; `psd` adds an implicit PSD cone.
    Symmetric { dim: usize, psd: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    /// `(t, x)` with `t ≥ ‖x‖`; the parameter is the total dimension.
    SecondOrder(usize),
    /// Upper-triangular svec of a `dim × dim` PSD matrix.
    Psd(usize),
    /// `(x, y, z)` with `y·exp(x/y) ≤ z`.
    Exponential,
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonneg(n) | Cone::SecondOrder(n) => n,
            Cone::Psd(d) => svec_len(d),
            Cone::Exponential => 3,
        }
    }
}

/// `weight · Σ_k (e_k)²`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadTerm {
    pub weight: f64,
    pub exprs: Vec<LinExpr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogDetMode {
    /// Exact triangular-factor / exponential-cone reformulation.
    #[default]
    Exact,
    /// Replace `log det X` by `tr X`. Weaker; only for backends without
    /// exponential cones, and only when explicitly requested.
    TraceFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub psd_tol: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { feas_tol: DEFAULT_FEAS_TOL, gap_tol: DEFAULT_FEAS_TOL, psd_tol: DEFAULT_PSD_TOL, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: u32,
    pub solve_time: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Backend reported reduced accuracy.
    pub reduced_accuracy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Values of the registered (user) variables.
    pub x: Vec<f64>,
    /// Objective of the original problem (including constants and log-det terms).
    pub objective: f64,
    pub stats: SolveStats,
    vars: Vec<VarInfo>,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn scalar(&self, v: VarId) -> f64 {
        self.x[self.vars[v.0].offset]
    }

    pub fn vector(&self, v: VarId) -> DVector<f64> {
        let info = &self.vars[v.0];
        DVector::from_column_slice(&self.x[info.offset..info.offset + info.len])
    }

    pub fn symmetric(&self, v: VarId) -> DMatrix<f64> {
        let info = &self.vars[v.0];
        match info.kind {
            VarKind::Symmetric { dim, .. } => linalg::smat(&self.x[info.offset..info.offset + info.len], dim),
            _ => panic!("variable {} is not symmetric", info.name),
        }
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.eval(&self.x)
    }
}

/// Standard form `min ½xᵀPx + qᵀx + q0  s.t.  b − Ax ∈ K`.
///
/// `p` holds upper-triangular triplets; `a` holds `(row, col, value)` triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardForm {
    pub n: usize,
    pub p: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub q0: f64,
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl StandardForm {
    pub fn m(&self) -> usize {
        self.b.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LowerOptions {
    pub lift_quadratics: bool,
}

/// A lowered problem plus the bookkeeping needed to map results back.
#[derive(Debug, Clone)]
pub struct LoweredProblem {
    pub form: StandardForm,
    pub n_user: usize,
    /// Standard-form linear objective before any caller-supplied delta.
    pub base_q: Vec<f64>,
    /// For each log-det term: indices of the `t_k ≤ log Z_kk` variables and its weight.
    logdet_aux: Vec<(Vec<usize>, f64)>,
    logdet_mode: LogDetMode,
    logdet_vars: Vec<(VarId, f64)>,
    vars: Vec<VarInfo>,
    psd_vars: Vec<VarId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    vars: Vec<VarInfo>,
    n: usize,
    rows: Vec<LinExpr>,
    cones: Vec<Cone>,
    linear: LinExpr,
    quadratic: Vec<QuadTerm>,
    logdet: Vec<(VarId, f64)>,
    logdet_mode: LogDetMode,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    pub fn var_info(&self, v: VarId) -> &VarInfo {
        &self.vars[v.0]
    }

    fn register(&mut self, name: &str, kind: VarKind, len: usize) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(VarInfo { name: name.to_string(), kind, offset: self.n, len });
        self.n += len;
        id
    }

    pub fn add_scalar(&mut self, name: &str) -> VarId {
        self.register(name, VarKind::Scalar, 1)
    }

    pub fn add_vector(&mut self, name: &str, len: usize) -> VarId {
        self.register(name, VarKind::Vector(len), len)
    }

    pub fn add_symmetric(&mut self, name: &str, dim: usize, psd: bool) -> VarId {
        let id = self.register(name, VarKind::Symmetric { dim, psd }, svec_len(dim));
        if psd {
            let m = self.sym_expr(id);
            self.add_psd(&m);
        }
        id
    }

    /// Expression for a scalar variable, or element `k` of a vector variable.
    pub fn entry(&self, v: VarId, k: usize) -> LinExpr {
        let info = &self.vars[v.0];
        assert!(k < info.len, "entry {k} out of range for {}", info.name);
        LinExpr::var(info.offset + k)
    }

    pub fn scalar_expr(&self, v: VarId) -> LinExpr {
        self.entry(v, 0)
    }

    pub fn vector_expr(&self, v: VarId) -> AffineMatrix {
        let info = &self.vars[v.0];
        AffineMatrix::column((0..info.len).map(|k| LinExpr::var(info.offset + k)).collect())
    }

    /// The symmetric matrix represented by an svec variable.
    pub fn sym_expr(&self, v: VarId) -> AffineMatrix {
        let info = &self.vars[v.0];
        let dim = match info.kind {
            VarKind::Symmetric { dim, .. } => dim,
            _ => panic!("variable {} is not symmetric", info.name),
        };
        let off = info.offset;
        AffineMatrix::from_fn(dim, dim, |r, c| {
            let idx = off + svec_index(r, c);
            if r == c {
                LinExpr::var(idx)
            } else {
                LinExpr::term(idx, 1.0 / SQRT2)
            }
        })
    }

    /// General (non-symmetric) `rows × cols` matrix variable, stored column-major.
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> (VarId, AffineMatrix) {
        let id = self.add_vector(name, rows * cols);
        let off = self.vars[id.0].offset;
        (id, AffineMatrix::from_fn(rows, cols, |r, c| LinExpr::var(off + c * rows + r)))
    }

    fn push_rows(&mut self, exprs: impl IntoIterator<Item = LinExpr>, cone: Cone) {
        let before = self.rows.len();
        self.rows.extend(exprs.into_iter().map(|mut e| {
            e.compact();
            e
        }));
        debug_assert_eq!(self.rows.len() - before, cone.dim());
        self.cones.push(cone);
    }

    /// `e = 0`
    pub fn add_eq(&mut self, exprs: Vec<LinExpr>) {
        if exprs.is_empty() {
            return;
        }
        let n = exprs.len();
        self.push_rows(exprs, Cone::Zero(n));
    }

    /// `e ≥ 0`
    pub fn add_nonneg(&mut self, exprs: Vec<LinExpr>) {
        if exprs.is_empty() {
            return;
        }
        let n = exprs.len();
        self.push_rows(exprs, Cone::Nonneg(n));
    }

    /// `exprs[0] ≥ ‖exprs[1..]‖`
    pub fn add_soc(&mut self, exprs: Vec<LinExpr>) {
        let n = exprs.len();
        assert!(n >= 1, "empty second-order cone");
        self.push_rows(exprs, Cone::SecondOrder(n));
    }

    /// `(x, y, z)` in the exponential cone.
    pub fn add_exp(&mut self, x: LinExpr, y: LinExpr, z: LinExpr) {
        self.push_rows([x, y, z], Cone::Exponential);
    }

    /// `m ⪰ 0` for a symmetric affine matrix (only the upper triangle is read).
    pub fn add_psd(&mut self, m: &AffineMatrix) {
        let dim = m.nrows();
        assert_eq!(dim, m.ncols(), "PSD constraint on non-square matrix");
        if dim == 0 {
            return;
        }
        let mut rows = Vec::with_capacity(svec_len(dim));
        for c in 0..dim {
            for r in 0..=c {
                let e = if r == c { m.get(r, c).clone() } else { m.get(r, c).scaled(SQRT2) };
                rows.push(e);
            }
        }
        self.push_rows(rows, Cone::Psd(dim));
    }

    /// Add `e` to the linear objective.
    pub fn add_linear_objective(&mut self, e: &LinExpr) {
        self.linear.add_scaled(e, 1.0);
    }

    /// Add `weight · Σ_k e_k²` to the objective.
    pub fn add_sum_squares(&mut self, weight: f64, exprs: Vec<LinExpr>) {
        assert!(weight >= 0.0, "negative weight on a sum of squares");
        if weight > 0.0 && !exprs.is_empty() {
            self.quadratic.push(QuadTerm { weight, exprs });
        }
    }

    /// Add `(x − c)ᵀ W (x − c)` for a PD weight `W` by factoring `W = LLᵀ`.
    pub fn add_weighted_norm(&mut self, x: &AffineMatrix, weight: &DMatrix<f64>) {
        let l = linalg::cholesky_lower(weight).expect("weight must be positive definite");
        let lx = x.left_mul(&l.transpose());
        self.add_sum_squares(1.0, (0..lx.nrows()).map(|k| lx.get(k, 0).clone()).collect());
    }

    /// Maximise `weight · log det X` (i.e. add `−weight · log det X` to the minimisation).
    pub fn add_logdet_max(&mut self, v: VarId, weight: f64) {
        assert!(matches!(self.vars[v.0].kind, VarKind::Symmetric { .. }), "log det on non-symmetric variable");
        self.logdet.push((v, weight));
    }

    pub fn set_logdet_mode(&mut self, mode: LogDetMode) {
        self.logdet_mode = mode;
    }

    /// Objective of the user-level problem at `x` (log-det terms evaluated exactly).
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let mut val = self.linear.eval(x);
        for q in &self.quadratic {
            val += q.weight * q.exprs.iter().map(|e| e.eval(x).powi(2)).sum::<f64>();
        }
        for &(v, w) in &self.logdet {
            let info = &self.vars[v.0];
            if let VarKind::Symmetric { dim, .. } = info.kind {
                let m = linalg::smat(&x[info.offset..info.offset + info.len], dim);
                let ld = match self.logdet_mode {
                    LogDetMode::Exact => nalgebra::Cholesky::new(linalg::symmetrize(&m))
                        .map(|c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
                        .unwrap_or(f64::NEG_INFINITY),
                    LogDetMode::TraceFallback => m.trace(),
                };
                val -= w * ld;
            }
        }
        val
    }

    /// Largest cone violation of the user-level constraints at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        let mut r0 = 0;
        for cone in &self.cones {
            let d = cone.dim();
            let s: Vec<f64> = self.rows[r0..r0 + d].iter().map(|e| e.eval(x)).collect();
            r0 += d;
            let v = match *cone {
                Cone::Zero(_) => s.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
                Cone::Nonneg(_) => s.iter().fold(0.0_f64, |a, v| a.max(-v)),
                Cone::SecondOrder(_) => {
                    let tail = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                    (tail - s[0]).max(0.0)
                }
                Cone::Psd(dim) => (-linalg::min_eigenvalue(&linalg::smat(&s, dim))).max(0.0),
                Cone::Exponential => {
                    let (ex, ey, ez) = (s[0], s[1], s[2]);
                    if ey > 0.0 {
                        (ey * (ex / ey).exp() - ez).max(0.0)
                    } else {
                        (-ez).max(0.0).max(ex)
                    }
                }
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Lower to standard form.
    pub fn lower(&self, opts: LowerOptions) -> Result<LoweredProblem, ConicError> {
        if self.n == 0 {
            return Err(ConicError::Malformed("problem has no variables".into()));
        }
        let mut n = self.n;
        let mut q = vec![0.0; n];
        let mut q0 = self.linear.constant;
        for &(i, c) in &self.linear.terms {
            q[i] += c;
        }
        let mut p: Vec<(usize, usize, f64)> = Vec::new();
        let mut a: Vec<(usize, usize, f64)> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<Cone> = Vec::new();

        // rows: s = e(x) = c + a·x  ⇒  b − A x with A = −a, b = c
        let push_row = |e: &LinExpr, a: &mut Vec<(usize, usize, f64)>, b: &mut Vec<f64>| {
            let row = b.len();
            for &(i, c) in &e.terms {
                a.push((row, i, -c));
            }
            b.push(e.constant);
        };
        // small PSD blocks go to cheaper equivalent cones
        let mut r0 = 0;
        for cone in &self.cones {
            let rows = &self.rows[r0..r0 + cone.dim()];
            r0 += cone.dim();
            match *cone {
                Cone::Psd(1) => {
                    push_row(&rows[0], &mut a, &mut b);
                    cones.push(Cone::Nonneg(1));
                }
                Cone::Psd(2) => {
                    // svec (x, √2 y, z):  x + z ≥ ‖(x − z, 2y)‖
                    let (x, y2, z) = (&rows[0], &rows[1], &rows[2]);
                    push_row(&x.clone().plus(z), &mut a, &mut b);
                    push_row(&x.clone().minus(z), &mut a, &mut b);
                    push_row(&y2.scaled(SQRT2), &mut a, &mut b);
                    cones.push(Cone::SecondOrder(3));
                }
                _ => {
                    for e in rows {
                        push_row(e, &mut a, &mut b);
                    }
                    cones.push(*cone);
                }
            }
        }

        for term in &self.quadratic {
            if opts.lift_quadratics {
                // t ≥ Σ e_k²  ⇔  ((t+1)/2, (t−1)/2, e) ∈ SOC
                let t = n;
                n += 1;
                q.push(term.weight);
                let mut rows = vec![
                    LinExpr { terms: vec![(t, 0.5)], constant: 0.5 },
                    LinExpr { terms: vec![(t, 0.5)], constant: -0.5 },
                ];
                rows.extend(term.exprs.iter().cloned());
                for e in &rows {
                    let mut e = e.clone();
                    e.compact();
                    push_row(&e, &mut a, &mut b);
                }
                cones.push(Cone::SecondOrder(rows.len()));
            } else {
                // w (aᵀx + c)² = ½ xᵀ (2w aaᵀ) x + 2wc aᵀx + wc²
                for e in &term.exprs {
                    let mut e = e.clone();
                    e.compact();
                    let w = term.weight;
                    for (ia, &(i, ci)) in e.terms.iter().enumerate() {
                        q[i] += 2.0 * w * e.constant * ci;
                        for &(j, cj) in &e.terms[ia..] {
                            let (r, c) = if i <= j { (i, j) } else { (j, i) };
                            let val = 2.0 * w * ci * cj;
                            p.push((r, c, val));
                        }
                    }
                    q0 += w * e.constant * e.constant;
                }
            }
        }

        let mut logdet_aux = Vec::new();
        for &(v, w) in &self.logdet {
            let info = &self.vars[v.0];
            let dim = match info.kind {
                VarKind::Symmetric { dim, .. } => dim,
                _ => unreachable!(),
            };
            match self.logdet_mode {
                LogDetMode::TraceFallback => {
                    for k in 0..dim {
                        q[info.offset + svec_index(k, k)] -= w;
                    }
                    logdet_aux.push((Vec::new(), w));
                }
                LogDetMode::Exact => {
                    // lower-triangular Z, column-major over (r ≥ c)
                    let z0 = n;
                    let mut zidx = vec![vec![usize::MAX; dim]; dim];
                    for c in 0..dim {
                        for r in c..dim {
                            zidx[r][c] = n;
                            n += 1;
                        }
                    }
                    let t0 = n;
                    n += dim;
                    q.resize(n, 0.0);
                    let _ = z0;
                    for k in 0..dim {
                        q[t0 + k] -= w;
                    }
                    let xm = self.sym_expr(v);
                    let zm = AffineMatrix::from_fn(dim, dim, |r, c| {
                        if r >= c {
                            LinExpr::var(zidx[r][c])
                        } else {
                            LinExpr::zero()
                        }
                    });
                    let dz = AffineMatrix::from_fn(dim, dim, |r, c| {
                        if r == c {
                            LinExpr::var(zidx[r][r])
                        } else {
                            LinExpr::zero()
                        }
                    });
                    let big = AffineMatrix::blocks(&[
                        vec![Some(xm), Some(zm.clone())],
                        vec![Some(zm.transpose()), Some(dz)],
                    ]);
                    let bdim = 2 * dim;
                    for c in 0..bdim {
                        for r in 0..=c {
                            let mut e = if r == c { big.get(r, c).clone() } else { big.get(r, c).scaled(SQRT2) };
                            e.compact();
                            push_row(&e, &mut a, &mut b);
                        }
                    }
                    cones.push(Cone::Psd(bdim));
                    for k in 0..dim {
                        push_row(&LinExpr::var(t0 + k), &mut a, &mut b);
                        push_row(&LinExpr::constant(1.0), &mut a, &mut b);
                        push_row(&LinExpr::var(zidx[k][k]), &mut a, &mut b);
                        cones.push(Cone::Exponential);
                    }
                    logdet_aux.push(((t0..t0 + dim).collect(), w));
                }
            }
        }
        q.resize(n, 0.0);

        let psd_vars = self
            .vars
            .iter()
            .enumerate()
            .filter(|(_, v)| matches!(v.kind, VarKind::Symmetric { psd: true, .. }))
            .map(|(i, _)| VarId(i))
            .collect();

        Ok(LoweredProblem {
            base_q: q.clone(),
            form: StandardForm { n, p, q, q0, a, b, cones },
            n_user: self.n,
            logdet_aux,
            logdet_mode: self.logdet_mode,
            logdet_vars: self.logdet.clone(),
            vars: self.vars.clone(),
            psd_vars,
        })
    }

    /// Lower with default options and solve once.
    pub fn solve(&self, backend: &dyn ConicBackend, settings: &SolverSettings) -> Result<SolveResult, ConicError> {
        let lowered = self.lower(LowerOptions::default())?;
        let mut prepared = backend.prepare(&lowered.form, settings)?;
        let raw = prepared.solve(None)?;
        Ok(lowered.finish(raw, settings))
    }

    /// Plain-text dump for debugging.
    ///
    /// Format, one item per line:
    /// `var <name> <kind> offset=<o> len=<l>`, then `obj <const> [<idx>:<coef> ...]`,
    /// `quad <weight> <count>` followed by one `  e <const> [<idx>:<coef> ...]`
    /// line per expression, `logdet <var-index> <weight>`, and for every cone
    /// `cone <kind> <dim>` followed by one `  r <const> [<idx>:<coef> ...]` line
    /// per row. Rows are the affine expressions required to lie in the cone.
    pub fn dump(&self) -> String {
        fn fmt_expr(e: &LinExpr) -> String {
            let mut s = format!("{:e}", e.constant);
            for &(i, c) in &e.terms {
                let _ = write!(s, " {i}:{c:e}");
            }
            s
        }
        let mut out = String::new();
        for v in &self.vars {
            let kind = match v.kind {
                VarKind::Scalar => "scalar".to_string(),
                VarKind::Vector(n) => format!("vector({n})"),
                VarKind::Symmetric { dim, psd } => format!("sym({dim},psd={psd})"),
            };
            let _ = writeln!(out, "var {} {} offset={} len={}", v.name, kind, v.offset, v.len);
        }
        let _ = writeln!(out, "obj {}", fmt_expr(&self.linear));
        for qt in &self.quadratic {
            let _ = writeln!(out, "quad {:e} {}", qt.weight, qt.exprs.len());
            for e in &qt.exprs {
                let _ = writeln!(out, "  e {}", fmt_expr(e));
            }
        }
        for (v, w) in &self.logdet {
            let _ = writeln!(out, "logdet {} {:e}", v.0, w);
        }
        let mut r0 = 0;
        for cone in &self.cones {
            let (kind, d) = match *cone {
                Cone::Zero(n) => ("zero", n),
                Cone::Nonneg(n) => ("nonneg", n),
                Cone::SecondOrder(n) => ("soc", n),
                Cone::Psd(d) => ("psd", d),
                Cone::Exponential => ("exp", 3),
            };
            let _ = writeln!(out, "cone {kind} {d}");
            for e in &self.rows[r0..r0 + cone.dim()] {
                let _ = writeln!(out, "  r {}", fmt_expr(e));
            }
            r0 += cone.dim();
        }
        out
    }
}

/// Raw backend output in standard-form coordinates.
#[derive(Debug, Clone)]
pub struct RawSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub stats: SolveStats,
}

impl LoweredProblem {
    /// Map a raw standard-form solution back to the user problem, and
    /// downgrade `Optimal` to `NumericalFailure` if a declared-PSD variable
    /// comes back with an eigenvalue below `−psd_tol`.
    pub fn finish(&self, raw: RawSolution, settings: &SolverSettings) -> SolveResult {
        let mut status = raw.status;
        let x: Vec<f64> = raw.x[..self.n_user].to_vec();
        let mut objective = raw.objective + self.form.q0;
        // swap the lifted t_k ≤ log Z_kk bound for the exact log det
        for ((aux, w), (v, _)) in self.logdet_aux.iter().zip(&self.logdet_vars) {
            if self.logdet_mode == LogDetMode::Exact && status == SolveStatus::Optimal {
                let t_sum: f64 = aux.iter().map(|&i| raw.x[i]).sum();
                let info = &self.vars[v.0];
                if let VarKind::Symmetric { dim, .. } = info.kind {
                    let m = linalg::smat(&x[info.offset..info.offset + info.len], dim);
                    if let Some(ch) = nalgebra::Cholesky::new(linalg::symmetrize(&m)) {
                        let ld = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                        objective += w * t_sum - w * ld;
                    }
                }
            }
        }
        if status == SolveStatus::Optimal {
            for v in &self.psd_vars {
                let info = &self.vars[v.0];
                if let VarKind::Symmetric { dim, .. } = info.kind {
                    let m = linalg::smat(&x[info.offset..info.offset + info.len], dim);
                    if linalg::min_eigenvalue(&m) < -settings.psd_tol {
                        status = SolveStatus::NumericalFailure;
                    }
                }
            }
        }
        SolveResult { status, x, objective, stats: raw.stats, vars: self.vars.clone() }
    }

    /// Standard-form `q` for a user-level linear objective delta added to the base.
    pub fn q_with_delta(&self, delta: &[f64]) -> Vec<f64> {
        assert_eq!(delta.len(), self.n_user, "objective delta length");
        let mut q = self.base_q.clone();
        for (qi, d) in q.iter_mut().zip(delta) {
            *qi += d;
        }
        q
    }
}

#[cfg(test)]
mod tests;
