//! Error-covariance propagation under the structured feedback.
//!
//! With `A_K = A_N + B K`, `C_K = C_N + D K` and `g = C_N z_N + D v`, the
//! successor covariance of subsystem `i` is
//! `Σ⁺ = A_K Σ̂ A_Kᵀ + C_K Σ̂ C_Kᵀ + g gᵀ` for the block-diagonal
//! neighbourhood bound `Σ̂`. The MPC only needs the inequality `Σ⁺ ⪰ …`,
//! which is an LMI in `(Σ⁺, Σ̂, z, v)` when `K` is fixed.

use nalgebra::{DMatrix, DVector};

use crate::conic::{AffineMatrix, LinExpr};
use crate::linalg;
use crate::model::NetworkModel;

/// Closed-loop neighbourhood matrices of one subsystem under a gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a_n: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_n: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub a_k: DMatrix<f64>,
    pub c_k: DMatrix<f64>,
}

impl ClosedLoop {
    pub fn new(net: &NetworkModel, i: usize, k: &DMatrix<f64>) -> Self {
        let s = &net.subsystems[i];
        let a_n = net.a_neighborhood(i);
        let c_n = net.c_neighborhood(i);
        assert_eq!(k.shape(), (s.m, a_n.ncols()), "gain shape for subsystem {i}");
        let a_k = &a_n + &s.b * k;
        let c_k = &c_n + &s.d * k;
        Self { a_n, b: s.b.clone(), c_n, d: s.d.clone(), k: k.clone(), a_k, c_k }
    }

    /// Build directly from matrices (single-block tests and oracles).
    pub fn from_parts(a_n: DMatrix<f64>, b: DMatrix<f64>, c_n: DMatrix<f64>, d: DMatrix<f64>, k: DMatrix<f64>) -> Self {
        let a_k = &a_n + &b * &k;
        let c_k = &c_n + &d * &k;
        Self { a_n, b, c_n, d, k, a_k, c_k }
    }

    /// Multiplicative-noise offset `C_N z + D v`.
    pub fn offset(&self, z_n: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.c_n * z_n + &self.d * v
    }

    pub fn offset_expr(&self, z_n: &AffineMatrix, v: &AffineMatrix) -> AffineMatrix {
        z_n.left_mul(&self.c_n).add(&v.left_mul(&self.d))
    }
}

/// `A_K Σ̂ A_Kᵀ + C_K Σ̂ C_Kᵀ + g gᵀ`, symmetrised.
pub fn propagate_direct(cl: &ClosedLoop, g: &DVector<f64>, sigma_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let out = &cl.a_k * sigma_hat * cl.a_k.transpose() + &cl.c_k * sigma_hat * cl.c_k.transpose() + g * g.transpose();
    linalg::symmetrize(&out)
}

/// Block structure of `Σ̂` for the full LMI: sizes of the neighbourhood
/// blocks and which of them are known to be identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub sizes: Vec<usize>,
    pub zero: Vec<bool>,
}

impl BlockLayout {
    pub fn dense(sizes: Vec<usize>) -> Self {
        let zero = vec![false; sizes.len()];
        Self { sizes, zero }
    }

    /// Indices of the rows/columns that belong to non-zero blocks.
    pub fn kept_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut off = 0;
        for (s, z) in self.sizes.iter().zip(&self.zero) {
            if !z {
                out.extend(off..off + s);
            }
            off += s;
        }
        out
    }
}

/// Full Schur-complement LMI
/// `[[Σ⁺, A Σ̂ + B U, C Σ̂ + D U, g], [·, Σ̂, 0, 0], [·, 0, Σ̂, 0], [·, 0, 0, 1]] ⪰ 0`
/// with `U = K Σ̂` (first block row shown; the rest is its transpose).
///
/// Rows and columns of blocks marked zero in `layout` are removed, which
/// leaves an equivalent LMI because those pivots carry no information.
pub fn propagation_lmi(
    cl: &ClosedLoop,
    sigma_plus: &AffineMatrix,
    sigma_hat: &AffineMatrix,
    g: &AffineMatrix,
    layout: &BlockLayout,
) -> AffineMatrix {
    let keep = layout.kept_indices();
    let rows0 = sigma_plus.nrows();
    // A Σ̂ + B K Σ̂ = A_K Σ̂, restricted to the kept columns
    let top_rows: Vec<usize> = (0..rows0).collect();
    let ask = sigma_hat.left_mul(&cl.a_k).select(&top_rows, &keep);
    let csk = sigma_hat.left_mul(&cl.c_k).select(&top_rows, &keep);
    let sh = sigma_hat.select(&keep, &keep);
    let one = AffineMatrix::identity(1);
    let d = keep.len();
    if d == 0 {
        return AffineMatrix::blocks(&[
            vec![Some(sigma_plus.clone()), Some(g.clone())],
            vec![Some(g.transpose()), Some(one)],
        ]);
    }
    AffineMatrix::blocks(&[
        vec![Some(sigma_plus.clone()), Some(ask.clone()), Some(csk.clone()), Some(g.clone())],
        vec![Some(ask.transpose()), Some(sh.clone()), Some(AffineMatrix::zeros(d, d)), Some(AffineMatrix::zeros(d, 1))],
        vec![Some(csk.transpose()), Some(AffineMatrix::zeros(d, d)), Some(sh), Some(AffineMatrix::zeros(d, 1))],
        vec![Some(g.transpose()), Some(AffineMatrix::zeros(1, d)), Some(AffineMatrix::zeros(1, d)), Some(one)],
    ])
}

/// Compact equivalent: `[[Σ⁺ − A_K Σ̂ A_Kᵀ − C_K Σ̂ C_Kᵀ, g], [gᵀ, 1]] ⪰ 0`.
///
/// Equivalent to [`propagation_lmi`] whenever `Σ̂ ⪰ 0` is imposed separately,
/// since `Σ̂` enters the propagated bound linearly for fixed `K`.
pub fn compact_propagation_lmi(
    cl: &ClosedLoop,
    sigma_plus: &AffineMatrix,
    sigma_hat: &AffineMatrix,
    g: &AffineMatrix,
) -> AffineMatrix {
    let prop_a = sigma_hat.left_mul(&cl.a_k).right_mul(&cl.a_k.transpose());
    let prop_c = sigma_hat.left_mul(&cl.c_k).right_mul(&cl.c_k.transpose());
    let top = sigma_plus.sub(&prop_a).sub(&prop_c);
    AffineMatrix::blocks(&[vec![Some(top), Some(g.clone())], vec![Some(g.transpose()), Some(AffineMatrix::identity(1))]])
}

/// Whether `Σ⁺ ⪰ A_K Σ̂ A_Kᵀ + C_K Σ̂ C_Kᵀ + g gᵀ` within `tol`.
pub fn dominates_direct(cl: &ClosedLoop, g: &DVector<f64>, sigma_hat: &DMatrix<f64>, sigma_plus: &DMatrix<f64>, tol: f64) -> bool {
    linalg::min_eigenvalue(&(sigma_plus - propagate_direct(cl, g, sigma_hat))) >= -tol
}

/// Constant affine column from a numeric vector.
pub fn const_column(v: &DVector<f64>) -> AffineMatrix {
    AffineMatrix::column(v.iter().map(|&x| LinExpr::constant(x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cl() -> ClosedLoop {
        // A_K = 0.5, C_K = 0.1 with K = 0
        ClosedLoop::from_parts(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::zeros(1, 1),
        )
    }

    #[test]
    fn scalar_direct_propagation() {
        let cl = scalar_cl();
        let g = DVector::from_element(1, 0.2);
        let s = propagate_direct(&cl, &g, &DMatrix::from_element(1, 1, 1.0));
        assert!((s[(0, 0)] - 0.30).abs() < 1e-15);
    }

    #[test]
    fn zero_everything_gives_zero() {
        let cl = scalar_cl();
        let s = propagate_direct(&cl, &DVector::zeros(1), &DMatrix::zeros(1, 1));
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_lmi_threshold() {
        let cl = scalar_cl();
        let g = const_column(&DVector::from_element(1, 0.2));
        let sh = AffineMatrix::constant(&DMatrix::from_element(1, 1, 1.0));
        let layout = BlockLayout::dense(vec![1]);
        for (val, expect) in [(0.30, true), (0.29, false)] {
            let sp = AffineMatrix::constant(&DMatrix::from_element(1, 1, val));
            let m = propagation_lmi(&cl, &sp, &sh, &g, &layout).constant_value();
            assert_eq!(linalg::check_psd(&m, 1e-9).unwrap(), expect, "Σ⁺ = {val}");
        }
    }

    #[test]
    fn all_zero_blocks_reduce_to_offset_outer_product() {
        let cl = scalar_cl();
        let g = const_column(&DVector::from_element(1, 0.2));
        let sh = AffineMatrix::zeros(1, 1);
        let layout = BlockLayout { sizes: vec![1], zero: vec![true] };
        let sp = AffineMatrix::constant(&DMatrix::from_element(1, 1, 0.04));
        let m = propagation_lmi(&cl, &sp, &sh, &g, &layout);
        assert_eq!(m.nrows(), 2);
        assert!(linalg::check_psd(&m.constant_value(), 1e-12).unwrap());
    }
}
