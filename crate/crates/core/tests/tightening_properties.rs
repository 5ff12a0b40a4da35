use dsmpc::model::ChanceRow;
use dsmpc::tightening::{cantelli_factor, RowTightening};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn row(h: Vec<f64>, bound: f64, p: f64) -> ChanceRow {
    ChanceRow { h_row: DVector::from_vec(h), bound, probability: p, quantile: None }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Any point meeting the linearised row also meets the square-root form.
    #[test]
    fn linearised_row_is_inner_approximation(
        h in prop::collection::vec(-2.0..2.0f64, 1..=3),
        g in prop::collection::vec(-1.0..1.0f64, 9),
        bound in 0.05..5.0f64,
        p in 0.05..0.95f64,
        eps in 0.05..1.0f64,
        frac in 0.0..1.0f64,
    ) {
        let n = h.len();
        prop_assume!(h.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let gm = DMatrix::from_fn(n, n, |r, c| g[r * 3 + c]);
        let sigma = &gm * gm.transpose() * 0.1;
        let t = RowTightening::new(&row(h.clone(), bound, p), eps).unwrap();
        let hv = DVector::from_vec(h);
        let var = hv.dot(&(&sigma * &hv));
        let rhs = t.rhs(&sigma);
        // place H z anywhere at or below the linearised right-hand side
        let target = rhs - frac * bound;
        let z = &hv * (target / hv.norm_squared());
        prop_assert!(t.slack(&z, &sigma) >= -1e-9);
        let f = (p / (1.0 - p)).sqrt();
        prop_assert!(hv.dot(&z) <= bound - f * var.sqrt() + 1e-9);
    }

    #[test]
    fn factor_is_strictly_increasing(p in 0.001..0.99f64, dp in 1e-6..0.009f64) {
        prop_assert!(cantelli_factor(p + dp).unwrap() > cantelli_factor(p).unwrap());
    }
}

#[test]
fn benchmark_rows() {
    // p = 0.7, ε = 0.5: nominal share 0.75 h, η = (7/3) / h
    let t = RowTightening::new(&row(vec![-1.0, -1.0], 0.2, 0.7), 0.5).unwrap();
    assert!((t.nominal_bound - 0.15).abs() < 1e-15);
    assert!((t.eta - (0.7 / 0.3) / 0.2).abs() < 1e-12);
    let s = DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.0, 0.0]);
    assert!((t.rhs(&s) - (0.15 - 0.01 * (0.7 / 0.3) / 0.2)).abs() < 1e-12);
}

#[test]
fn invalid_probability_is_rejected() {
    assert!(cantelli_factor(1.0).is_err());
    assert!(cantelli_factor(0.0).is_err());
    assert!(RowTightening::new(&row(vec![1.0], 1.0, 0.5), 0.0).is_err());
}
