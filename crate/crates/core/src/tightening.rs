//! Deterministic surrogates of the chance constraints.
//!
//! A row `Pr(H x ≤ h) ≥ p` is replaced by the linearised Cantelli bound
//! `H z ≤ (1 − ε/2) h − η H Σ Hᵀ` with `η = f(p)² / (2 ε h)`, which is
//! jointly affine in the mean and in `svec(Σ)`.

use nalgebra::{DMatrix, DVector};

use crate::conic::{AffineMatrix, LinExpr};
use crate::error::TighteningError;
use crate::model::ChanceRow;

/// Distribution-free quantile bound `√(p / (1 − p))`.
pub fn cantelli_factor(p: f64) -> Result<f64, TighteningError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(TighteningError::OutOfRangeProbability(p));
    }
    Ok((p / (1.0 - p)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowTightening {
    pub h_row: DVector<f64>,
    pub bound: f64,
    pub factor: f64,
    pub eta: f64,
    /// `(1 − ε/2) h`
    pub nominal_bound: f64,
}

impl RowTightening {
    pub fn new(row: &ChanceRow, epsilon: f64) -> Result<Self, TighteningError> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(TighteningError::OutOfRangeEpsilon(epsilon));
        }
        let factor = match row.quantile {
            Some(q) => q,
            None => cantelli_factor(row.probability)?,
        };
        Ok(Self {
            h_row: row.h_row.clone(),
            bound: row.bound,
            factor,
            eta: factor * factor / (2.0 * epsilon * row.bound),
            nominal_bound: (1.0 - 0.5 * epsilon) * row.bound,
        })
    }

    /// Right-hand side for a covariance `Σ` seen through `H`.
    pub fn rhs(&self, sigma: &DMatrix<f64>) -> f64 {
        self.nominal_bound - self.eta * self.h_row.dot(&(sigma * &self.h_row))
    }

    /// Right-hand side of an input row with `Σᵘ = K Σ_N Kᵀ`.
    pub fn input_rhs(&self, gain: &DMatrix<f64>, sigma_n: &DMatrix<f64>) -> f64 {
        self.rhs(&(gain * sigma_n * gain.transpose()))
    }

    /// `rhs − H z`; non-negative iff the linearised constraint holds.
    pub fn slack(&self, z: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
        self.rhs(sigma) - self.h_row.dot(z)
    }

    /// Square-root form `H z ≤ h − f √(H Σ Hᵀ)` before linearisation.
    pub fn sqrt_form_holds(&self, z: &DVector<f64>, sigma: &DMatrix<f64>) -> bool {
        let var = self.h_row.dot(&(sigma * &self.h_row)).max(0.0);
        self.h_row.dot(z) <= self.bound - self.factor * var.sqrt() + 1e-12
    }

    /// Affine expression `rhs(Σ) − H z`, to be constrained non-negative.
    ///
    /// `gain` maps the covariance argument into the row space (`None` for
    /// state rows, `Some(K)` for input rows with `Σ` the neighbourhood block).
    pub fn slack_expr(&self, z: &AffineMatrix, sigma: &AffineMatrix, gain: Option<&DMatrix<f64>>) -> LinExpr {
        let hw: DVector<f64> = match gain {
            Some(k) => k.transpose() * &self.h_row,
            None => self.h_row.clone(),
        };
        let mut e = LinExpr::constant(self.nominal_bound);
        for r in 0..hw.len() {
            if hw[r] == 0.0 {
                continue;
            }
            for c in 0..hw.len() {
                if hw[c] != 0.0 {
                    e.add_scaled(sigma.get(r, c), -self.eta * hw[r] * hw[c]);
                }
            }
        }
        for r in 0..self.h_row.len() {
            e.add_scaled(z.get(r, 0), -self.h_row[r]);
        }
        e.compact();
        e
    }
}
