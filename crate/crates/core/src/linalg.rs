//! Small dense linear-algebra helpers shared by every module.
//!
//! Symmetric matrices are packed with the upper-triangular, column-wise
//! `svec` ordering `(X11, √2·X12, X22, √2·X13, √2·X23, X33, ...)`. The √2
//! scaling on off-diagonal entries makes `svec(X)·svec(Y) = tr(XY)`, and it is
//! the same packing the PSD-triangle cone of the solver backend expects.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::LinalgError;

/// Default tolerance for PSD checks.
pub const PSD_TOL: f64 = 1e-7;

/// Tolerance used to decide whether a matrix is symmetric.
pub const SYM_TOL: f64 = 1e-9;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Length of the svec packing of a `dim × dim` symmetric matrix.
pub fn svec_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Position of entry `(row, col)` (row ≤ col) inside the svec packing.
pub fn svec_index(row: usize, col: usize) -> usize {
    let (r, c) = if row <= col { (row, col) } else { (col, row) };
    c * (c + 1) / 2 + r
}

pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(svec_len(n));
    for c in 0..n {
        for r in 0..=c {
            let v = if r == c { m[(r, c)] } else { SQRT2 * 0.5 * (m[(r, c)] + m[(c, r)]) };
            out[svec_index(r, c)] = v;
        }
    }
    out
}

pub fn smat(v: &[f64], dim: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), svec_len(dim), "svec length does not match dimension");
    let mut m = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        for r in 0..=c {
            let x = v[svec_index(r, c)];
            if r == c {
                m[(r, c)] = x;
            } else {
                m[(r, c)] = x / SQRT2;
                m[(c, r)] = x / SQRT2;
            }
        }
    }
    m
}

/// Coefficients `c` with `hᵀ X h = c · svec(X)` for every symmetric `X`.
pub fn quad_form_svec_coeffs(h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let mut out = vec![0.0; svec_len(n)];
    for c in 0..n {
        for r in 0..=c {
            out[svec_index(r, c)] = if r == c { h[r] * h[r] } else { SQRT2 * h[r] * h[c] };
        }
    }
    out
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

/// Smallest eigenvalue of a symmetric matrix (`+∞` for an empty matrix).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix (`−∞` for an empty matrix).
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `true` iff `λ_min(m) ≥ −tol`.
///
/// Uses the symmetric eigen-decomposition of `nalgebra`, so it never touches
/// the conic backend and can serve as an oracle for LMI feasibility.
pub fn check_psd(m: &DMatrix<f64>, tol: f64) -> Result<bool, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if !is_symmetric(m, SYM_TOL.max(tol * 1e-3)) {
        return Err(LinalgError::NonSymmetric { asymmetry: (m - m.transpose()).amax() });
    }
    Ok(min_eigenvalue(m) >= -tol)
}

/// Principal square root of a symmetric PSD matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let chol = nalgebra::Cholesky::new(symmetrize(m)).ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(symmetrize(&chol.inverse()))
}

/// Lower Cholesky factor `L` with `m = L Lᵀ`.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    nalgebra::Cholesky::new(symmetrize(m))
        .map(|c| c.l())
        .ok_or(LinalgError::NotPositiveDefinite)
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn hcat(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hcat row mismatch");
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(b);
        c0 += b.ncols();
    }
    out
}

pub fn vcat(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vcat column mismatch");
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(b);
        r0 += b.nrows();
    }
    out
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().fold(0.0_f64, |acc, l| acc.max(l.abs()))
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn check_psd_examples() {
        assert!(check_psd(&DMatrix::identity(3, 3), PSD_TOL).unwrap());
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(!check_psd(&m, PSD_TOL).unwrap());
        assert!((min_eigenvalue(&m) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn check_psd_rejects_nonsymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(check_psd(&m, PSD_TOL), Err(LinalgError::NonSymmetric { .. })));
    }

    #[test]
    fn gram_matrices_are_psd() {
        use rand::{Rng, SeedableRng};
        for seed in 0..100u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let m = &g * g.transpose();
            assert!(check_psd(&m, PSD_TOL).unwrap(), "seed {seed}");
        }
    }

    #[test]
    fn quad_form_coeffs_match_direct_evaluation() {
        let x = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.0, 0.5, -0.1, 0.5, 4.0]);
        let h = [1.0, -2.0, 0.5];
        let c = quad_form_svec_coeffs(&h);
        let lhs: f64 = c.iter().zip(svec(&x).iter()).map(|(a, b)| a * b).sum();
        let hv = DVector::from_column_slice(&h);
        assert!((lhs - quad_form(&x, &hv)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn svec_smat_round_trip(dim in 1usize..=12, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-5.0..5.0));
            let s = symmetrize(&a);
            let back = smat(svec(&s).as_slice(), dim);
            prop_assert!((back - &s).amax() < 1e-12);
            // inner products are preserved
            let b = symmetrize(&DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-5.0..5.0)));
            let tr = (&s * &b).trace();
            prop_assert!((svec(&s).dot(&svec(&b)) - tr).abs() < 1e-9 * (1.0 + tr.abs()));
        }
    }
}
