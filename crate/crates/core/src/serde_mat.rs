//! Dense matrices serialised as arrays of rows.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], cols_if_empty: usize) -> Option<DMatrix<f64>> {
    let nc = rows.first().map_or(cols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }
    Repr { rows: m.nrows(), cols: m.ncols(), data: to_rows(m) }.serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    #[derive(Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }
    let r = Repr::deserialize(d)?;
    let m = from_rows(&r.data, r.cols).ok_or_else(|| D::Error::custom("ragged matrix rows"))?;
    if m.shape() != (r.rows, r.cols) {
        return Err(D::Error::custom(format!("matrix data is {:?}, header says {}x{}", m.shape(), r.rows, r.cols)));
    }
    Ok(m)
}
