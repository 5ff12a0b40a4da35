use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Affine expression `constant + Σ coef·x[index]` over the flat variable vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(index: usize) -> Self {
        Self { terms: vec![(index, 1.0)], constant: 0.0 }
    }

    pub fn term(index: usize, coef: f64) -> Self {
        Self { terms: vec![(index, coef)], constant: 0.0 }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn add_term(&mut self, index: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((index, coef));
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.constant += scale * other.constant;
        self.terms
            .extend(other.terms.iter().filter(|t| t.1 != 0.0).map(|&(i, c)| (i, c * scale)));
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut out = LinExpr::zero();
        out.add_scaled(self, scale);
        out
    }

    pub fn plus(mut self, other: &LinExpr) -> LinExpr {
        self.add_scaled(other, 1.0);
        self
    }

    pub fn minus(mut self, other: &LinExpr) -> LinExpr {
        self.add_scaled(other, -1.0);
        self
    }

    /// Merge repeated indices and drop zero coefficients.
    pub fn compact(&mut self) {
        if self.terms.len() < 2 {
            self.terms.retain(|t| t.1 != 0.0);
            return;
        }
        self.terms.sort_unstable_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

/// Dense matrix whose entries are affine expressions; column-major storage.
///
/// This is how every LMI in the crate is written down: the same block
/// assembly code produces either a numeric matrix (all entries constant) for
/// the eigenvalue oracle, or a PSD cone constraint for the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    rows: usize,
    cols: usize,
    data: Vec<LinExpr>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![LinExpr::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> LinExpr) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn constant(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| LinExpr::constant(m[(r, c)]))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(&DMatrix::identity(n, n))
    }

    /// Column vector built from individual expressions.
    pub fn column(entries: Vec<LinExpr>) -> Self {
        Self { rows: entries.len(), cols: 1, data: entries }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &LinExpr {
        &self.data[c * self.rows + r]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut LinExpr {
        &mut self.data[c * self.rows + r]
    }

    pub fn is_constant(&self) -> bool {
        self.data.iter().all(LinExpr::is_constant)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r).clone())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|e| e.scaled(s)).collect() }
    }

    pub fn add(&self, other: &AffineMatrix) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "AffineMatrix add shape");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.clone().plus(b)).collect(),
        }
    }

    pub fn sub(&self, other: &AffineMatrix) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// `m · self`
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.rows, "AffineMatrix left_mul shape");
        Self::from_fn(m.nrows(), self.cols, |r, c| {
            let mut e = LinExpr::zero();
            for k in 0..self.rows {
                e.add_scaled(self.get(k, c), m[(r, k)]);
            }
            e.compact();
            e
        })
    }

    /// `self · m`
    pub fn right_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), self.cols, "AffineMatrix right_mul shape");
        Self::from_fn(self.rows, m.ncols(), |r, c| {
            let mut e = LinExpr::zero();
            for k in 0..self.cols {
                e.add_scaled(self.get(r, k), m[(k, c)]);
            }
            e.compact();
            e
        })
    }

    /// Assemble from a grid of blocks; `None` entries are zero blocks.
    /// Block row heights and column widths are taken from the first
    /// `Some` block in each row/column.
    pub fn blocks(grid: &[Vec<Option<AffineMatrix>>]) -> Self {
        let nr = grid.len();
        let nc = grid.first().map_or(0, |r| r.len());
        let heights: Vec<usize> = (0..nr)
            .map(|i| grid[i].iter().flatten().next().map_or(0, |b| b.rows))
            .collect();
        let widths: Vec<usize> = (0..nc)
            .map(|j| grid.iter().filter_map(|row| row[j].as_ref()).next().map_or(0, |b| b.cols))
            .collect();
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, blk) in row.iter().enumerate() {
                if let Some(b) = blk {
                    assert_eq!((b.rows, b.cols), (heights[i], widths[j]), "block ({i},{j}) shape");
                    for c in 0..b.cols {
                        for r in 0..b.rows {
                            *out.get_mut(r0 + r, c0 + c) = b.get(r, c).clone();
                        }
                    }
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        out
    }

    pub fn block_diag(blocks: &[AffineMatrix]) -> Self {
        let n = blocks.len();
        let grid: Vec<Vec<Option<AffineMatrix>>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            Some(blocks[i].clone())
                        } else {
                            Some(AffineMatrix::zeros(blocks[i].rows, blocks[j].cols))
                        }
                    })
                    .collect()
            })
            .collect();
        Self::blocks(&grid)
    }

    /// Keep only the listed rows and columns (in the given order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |r, c| self.get(rows[r], cols[c]).clone())
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c).eval(x))
    }

    /// Numeric value of a constant matrix.
    pub fn constant_value(&self) -> DMatrix<f64> {
        debug_assert!(self.is_constant(), "constant_value on a non-constant matrix");
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c).constant)
    }
}
