//! Networked linear system with multiplicative noise.
//!
//! Subsystem `i` evolves as
//! `x_i⁺ = A_N x_N + B_i u_i + (C_N x_N + D_i u_i) w_i` with a scalar,
//! unit-variance noise `w_i`. The neighbourhood `N_i` is the strict
//! neighbourhood plus `i`, always in ascending index order; every
//! neighbourhood-stacked vector and matrix in the crate uses that order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::config::{ModelConfig, RowConfig, SubsystemConfig};
use crate::error::ModelError;
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGraph {
    node_count: usize,
    /// Strict neighbours, sorted, no duplicates.
    adjacency: Vec<Vec<usize>>,
}

impl CouplingGraph {
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, ModelError> {
        if node_count == 0 {
            return Err(ModelError::Config("graph needs at least one node".into()));
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            for v in [a, b] {
                if v >= node_count {
                    return Err(ModelError::IndexOutOfRange { index: v, count: node_count });
                }
            }
            if a == b {
                return Err(ModelError::SelfLoop(a));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        Ok(Self { node_count, adjacency })
    }

    /// Build from directed arcs; every arc must have its reverse.
    pub fn from_arcs(node_count: usize, arcs: &[(usize, usize)]) -> Result<Self, ModelError> {
        for &(a, b) in arcs {
            if !arcs.contains(&(b, a)) {
                return Err(ModelError::DirectedEdge { from: a, to: b });
            }
        }
        Self::new(node_count, arcs)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn strict_neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn neighborhood(&self, i: usize) -> Vec<usize> {
        let mut n = self.adjacency[i].clone();
        let pos = n.partition_point(|&j| j < i);
        n.insert(pos, i);
        n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Longest shortest path; `None` if the graph is disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.node_count {
            let mut dist = vec![usize::MAX; self.node_count];
            dist[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            let far = *dist.iter().max().unwrap();
            if far == usize::MAX {
                return None;
            }
            best = best.max(far);
        }
        Some(best)
    }

    /// Rounds of neighbourhood exchange after which every node knows a
    /// global min/AND: the diameter, or `node_count − 1` for disconnected graphs.
    pub fn flooding_rounds(&self) -> usize {
        self.diameter().unwrap_or(self.node_count - 1)
    }

    /// Global minimum computed by synchronous neighbourhood-min exchange.
    pub fn min_consensus(&self, values: &[f64]) -> Vec<f64> {
        let mut cur = values.to_vec();
        for _ in 0..self.flooding_rounds() {
            cur = (0..self.node_count)
                .map(|i| self.adjacency[i].iter().fold(cur[i], |m, &j| m.min(cur[j])))
                .collect();
        }
        cur
    }
}

/// One chance-constrained row `Pr(H x ≤ h) ≥ p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceRow {
    pub h_row: DVector<f64>,
    pub bound: f64,
    pub probability: f64,
    /// Replaces the distribution-free factor when set.
    pub quantile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    /// Keyed by neighbour index; absent keys are zero blocks.
    pub a_blocks: BTreeMap<usize, DMatrix<f64>>,
    pub b: DMatrix<f64>,
    pub c_blocks: BTreeMap<usize, DMatrix<f64>>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub state_rows: Vec<ChanceRow>,
    pub input_rows: Vec<ChanceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub graph: CouplingGraph,
    pub subsystems: Vec<SubsystemModel>,
    neighborhoods: Vec<Vec<usize>>,
    state_offsets: Vec<usize>,
    input_offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// `W_i` selects the neighbourhood blocks, `T_i` the own block.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingOperators {
    pub w: Vec<DMatrix<f64>>,
    pub t: Vec<DMatrix<f64>>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ModelError> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(ModelError::DimensionMismatch(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

fn expect_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<(), ModelError> {
    if m.shape() != (rows, cols) {
        return Err(ModelError::DimensionMismatch(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn is_spd(m: &DMatrix<f64>) -> bool {
    linalg::is_symmetric(m, linalg::SYM_TOL) && nalgebra::Cholesky::new(m.clone()).is_some()
}

fn build_rows(
    rows: &[RowConfig],
    dim: usize,
    subsystem: usize,
    what: &str,
) -> Result<Vec<ChanceRow>, ModelError> {
    rows.iter()
        .enumerate()
        .map(|(r, cfg)| {
            if cfg.h_row.len() != dim {
                return Err(ModelError::DimensionMismatch(format!(
                    "subsystem {subsystem} {what} row {r}: H has {} entries, expected {dim}",
                    cfg.h_row.len()
                )));
            }
            if !(cfg.bound > 0.0) {
                return Err(ModelError::NonpositiveBound { subsystem, row: r, bound: cfg.bound });
            }
            if !(cfg.probability > 0.0 && cfg.probability < 1.0) {
                return Err(ModelError::InvalidProbability { subsystem, p: cfg.probability });
            }
            if let Some(qf) = cfg.quantile {
                if !(qf >= 0.0 && qf.is_finite()) {
                    return Err(ModelError::Config(format!(
                        "subsystem {subsystem} {what} row {r}: quantile override {qf} must be finite and non-negative"
                    )));
                }
            }
            Ok(ChanceRow {
                h_row: DVector::from_column_slice(&cfg.h_row),
                bound: cfg.bound,
                probability: cfg.probability,
                quantile: cfg.quantile,
            })
        })
        .collect()
}

impl SubsystemModel {
    fn from_config(i: usize, cfg: &SubsystemConfig, graph: &CouplingGraph) -> Result<Self, ModelError> {
        let b = to_matrix(&cfg.b, "B")?;
        let (n, m) = b.shape();
        if n == 0 {
            return Err(ModelError::DimensionMismatch(format!("subsystem {i}: B has no rows")));
        }
        let d = to_matrix(&cfg.d, "D")?;
        expect_shape(&d, n, m, &format!("subsystem {i} D"))?;
        let q = to_matrix(&cfg.q, "Q")?;
        expect_shape(&q, n, n, &format!("subsystem {i} Q"))?;
        let r = to_matrix(&cfg.r, "R")?;
        expect_shape(&r, m, m, &format!("subsystem {i} R"))?;
        if !is_spd(&q) {
            return Err(ModelError::WeightNotPositiveDefinite { subsystem: i, which: "Q" });
        }
        if m > 0 && !is_spd(&r) {
            return Err(ModelError::WeightNotPositiveDefinite { subsystem: i, which: "R" });
        }
        let mut a_blocks = BTreeMap::new();
        let mut c_blocks = BTreeMap::new();
        for cp in &cfg.coupling {
            let j = cp.neighbor;
            if j >= graph.node_count() {
                return Err(ModelError::IndexOutOfRange { index: j, count: graph.node_count() });
            }
            if j != i && !graph.has_edge(i, j) {
                return Err(ModelError::DirectedEdge { from: j, to: i });
            }
            if a_blocks.contains_key(&j) {
                return Err(ModelError::Config(format!("subsystem {i}: duplicate coupling entry for {j}")));
            }
            let a = to_matrix(&cp.a, "A")?;
            if a.nrows() != n {
                return Err(ModelError::DimensionMismatch(format!(
                    "subsystem {i}: A block for {j} has {} rows, expected {n}",
                    a.nrows()
                )));
            }
            if let Some(c) = &cp.c {
                let c = to_matrix(c, "C")?;
                expect_shape(&c, a.nrows(), a.ncols(), &format!("subsystem {i} C block for {j}"))?;
                if a.iter().all(|v| *v == 0.0) && c.iter().any(|v| *v != 0.0) {
                    return Err(ModelError::ZeroAWithNonzeroC { i, j });
                }
                c_blocks.insert(j, c);
            }
            a_blocks.insert(j, a);
        }
        Ok(Self {
            index: i,
            n,
            m,
            a_blocks,
            b,
            c_blocks,
            d,
            q,
            r,
            state_rows: build_rows(&cfg.state_constraint, n, i, "state")?,
            input_rows: build_rows(&cfg.input_constraint, m, i, "input")?,
        })
    }
}

/// Validate a parsed config and build the network.
pub fn build_network(cfg: &ModelConfig) -> Result<NetworkModel, ModelError> {
    let edges: Vec<(usize, usize)> = cfg.graph.edges.iter().map(|e| (e[0], e[1])).collect();
    let graph = CouplingGraph::new(cfg.graph.subsystems, &edges)?;
    if cfg.subsystem.len() != graph.node_count() {
        return Err(ModelError::DimensionMismatch(format!(
            "{} subsystem tables for {} graph nodes",
            cfg.subsystem.len(),
            graph.node_count()
        )));
    }
    let subsystems = cfg
        .subsystem
        .iter()
        .enumerate()
        .map(|(i, s)| SubsystemModel::from_config(i, s, &graph))
        .collect::<Result<Vec<_>, _>>()?;
    NetworkModel::new(graph, subsystems)
}

impl NetworkModel {
    /// Check block shapes against neighbour dimensions and derive offsets.
    pub fn new(graph: CouplingGraph, subsystems: Vec<SubsystemModel>) -> Result<Self, ModelError> {
        if subsystems.len() != graph.node_count() {
            return Err(ModelError::DimensionMismatch("subsystem count does not match graph".into()));
        }
        for s in &subsystems {
            for (blocks, what) in [(&s.a_blocks, "A"), (&s.c_blocks, "C")] {
                for (&j, blk) in blocks {
                    if j != s.index && !graph.has_edge(s.index, j) {
                        return Err(ModelError::DirectedEdge { from: j, to: s.index });
                    }
                    expect_shape(blk, s.n, subsystems[j].n, &format!("subsystem {} {what} block for {j}", s.index))?;
                }
            }
            for (&j, c) in &s.c_blocks {
                let a_zero = s.a_blocks.get(&j).is_none_or(|a| a.iter().all(|v| *v == 0.0));
                if a_zero && c.iter().any(|v| *v != 0.0) {
                    return Err(ModelError::ZeroAWithNonzeroC { i: s.index, j });
                }
            }
        }
        let neighborhoods = (0..graph.node_count()).map(|i| graph.neighborhood(i)).collect();
        let mut state_offsets = Vec::with_capacity(subsystems.len());
        let mut input_offsets = Vec::with_capacity(subsystems.len());
        let (mut so, mut io) = (0, 0);
        for s in &subsystems {
            state_offsets.push(so);
            input_offsets.push(io);
            so += s.n;
            io += s.m;
        }
        Ok(Self { graph, subsystems, neighborhoods, state_offsets, input_offsets })
    }

    pub fn count(&self) -> usize {
        self.subsystems.len()
    }

    pub fn state_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.n).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.m).sum()
    }

    pub fn neighborhood(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    pub fn neighborhood_dim(&self, i: usize) -> usize {
        self.neighborhoods[i].iter().map(|&j| self.subsystems[j].n).sum()
    }

    /// Offset of block `j` inside the stacked neighbourhood vector of `i`.
    pub fn block_offset(&self, i: usize, j: usize) -> Option<usize> {
        let nb = &self.neighborhoods[i];
        let pos = nb.binary_search(&j).ok()?;
        Some(nb[..pos].iter().map(|&l| self.subsystems[l].n).sum())
    }

    pub fn state_offset(&self, i: usize) -> usize {
        self.state_offsets[i]
    }

    pub fn input_offset(&self, i: usize) -> usize {
        self.input_offsets[i]
    }

    fn neighborhood_matrix(&self, i: usize, blocks: &BTreeMap<usize, DMatrix<f64>>) -> DMatrix<f64> {
        let s = &self.subsystems[i];
        let parts: Vec<DMatrix<f64>> = self.neighborhoods[i]
            .iter()
            .map(|&j| blocks.get(&j).cloned().unwrap_or_else(|| DMatrix::zeros(s.n, self.subsystems[j].n)))
            .collect();
        linalg::hcat(&parts)
    }

    /// `A_{N_i}`: `n_i × d_i`.
    pub fn a_neighborhood(&self, i: usize) -> DMatrix<f64> {
        self.neighborhood_matrix(i, &self.subsystems[i].a_blocks)
    }

    /// `C_{N_i}`: `n_i × d_i`.
    pub fn c_neighborhood(&self, i: usize) -> DMatrix<f64> {
        self.neighborhood_matrix(i, &self.subsystems[i].c_blocks)
    }

    /// Stack the neighbourhood blocks of a per-subsystem collection.
    pub fn stack_neighborhood(&self, i: usize, parts: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.neighborhood_dim(i));
        for &j in &self.neighborhoods[i] {
            let off = self.block_offset(i, j).unwrap();
            out.rows_mut(off, self.subsystems[j].n).copy_from(&parts[j]);
        }
        out
    }

    /// Block-diagonal neighbourhood matrix from per-subsystem blocks.
    pub fn blockdiag_neighborhood(&self, i: usize, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let parts: Vec<DMatrix<f64>> = self.neighborhoods[i].iter().map(|&j| blocks[j].clone()).collect();
        linalg::block_diag(&parts)
    }

    /// Split a global vector into per-subsystem blocks.
    pub fn split_state(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        self.subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| x.rows(self.state_offsets[i], s.n).into_owned())
            .collect()
    }

    pub fn join_state(&self, parts: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        for (i, p) in parts.iter().enumerate() {
            out.rows_mut(self.state_offsets[i], p.len()).copy_from(p);
        }
        out
    }

    pub fn join_input(&self, parts: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.input_dim());
        for (i, p) in parts.iter().enumerate() {
            out.rows_mut(self.input_offsets[i], p.len()).copy_from(p);
        }
        out
    }
}

/// Global block matrices and lifting operators.
pub fn assemble_global(net: &NetworkModel) -> (GlobalMatrices, LiftingOperators) {
    let (n, m) = (net.state_dim(), net.input_dim());
    let mut a = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for (i, s) in net.subsystems.iter().enumerate() {
        let ro = net.state_offset(i);
        for (&j, blk) in &s.a_blocks {
            a.view_mut((ro, net.state_offset(j)), blk.shape()).copy_from(blk);
        }
        for (&j, blk) in &s.c_blocks {
            c.view_mut((ro, net.state_offset(j)), blk.shape()).copy_from(blk);
        }
    }
    let b = linalg::block_diag(&net.subsystems.iter().map(|s| s.b.clone()).collect::<Vec<_>>());
    let d = linalg::block_diag(&net.subsystems.iter().map(|s| s.d.clone()).collect::<Vec<_>>());
    let q = linalg::block_diag(&net.subsystems.iter().map(|s| s.q.clone()).collect::<Vec<_>>());
    let r = linalg::block_diag(&net.subsystems.iter().map(|s| s.r.clone()).collect::<Vec<_>>());
    debug_assert_eq!(b.shape(), (n, m));

    let mut w = Vec::with_capacity(net.count());
    let mut t = Vec::with_capacity(net.count());
    for i in 0..net.count() {
        let mut wi = DMatrix::zeros(net.neighborhood_dim(i), n);
        for &j in net.neighborhood(i) {
            let r0 = net.block_offset(i, j).unwrap();
            let c0 = net.state_offset(j);
            for k in 0..net.subsystems[j].n {
                wi[(r0 + k, c0 + k)] = 1.0;
            }
        }
        let mut ti = DMatrix::zeros(net.subsystems[i].n, n);
        for k in 0..net.subsystems[i].n {
            ti[(k, net.state_offset(i) + k)] = 1.0;
        }
        w.push(wi);
        t.push(ti);
    }
    (GlobalMatrices { a, b, c, d, q, r }, LiftingOperators { w, t })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighborhood_is_sorted_and_includes_self() {
        let g = CouplingGraph::new(4, &[(2, 0), (2, 3)]).unwrap();
        assert_eq!(g.neighborhood(2), vec![0, 2, 3]);
        assert_eq!(g.neighborhood(1), vec![1]);
        assert_eq!(g.diameter(), None);
        assert_eq!(g.flooding_rounds(), 3);
    }

    #[test]
    fn from_arcs_rejects_one_way_coupling() {
        assert_eq!(CouplingGraph::from_arcs(2, &[(0, 1)]), Err(ModelError::DirectedEdge { from: 0, to: 1 }));
        assert!(CouplingGraph::from_arcs(2, &[(0, 1), (1, 0)]).is_ok());
    }

    #[test]
    fn self_loop_rejected() {
        assert_eq!(CouplingGraph::new(2, &[(1, 1)]), Err(ModelError::SelfLoop(1)));
    }

    #[test]
    fn min_consensus_reaches_global_min_on_path() {
        let g = CouplingGraph::new(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(g.min_consensus(&[3.0, 2.0, 5.0, 1.0]), vec![1.0; 4]);
    }
}
