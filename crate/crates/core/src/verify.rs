//! Property checks on synthesised ingredients, shared by the command-line
//! verifier and the test suites.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::conic::{AffineMatrix, LinExpr};
use crate::covariance::{self, BlockLayout, ClosedLoop};
use crate::linalg;
use crate::model::{assemble_global, NetworkModel};
use crate::synthesis::{self, BoundKind, TerminalIngredients};

/// Eigenvalue tolerance of the Schur-equivalence checks.
pub const SCHUR_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub epsilon: f64,
    pub seed: u64,
    pub boundary_samples: usize,
    pub schur_instances: usize,
    /// Bound on the terminal-decrease residual.
    pub residual_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { epsilon: 0.5, seed: 0, boundary_samples: 10_000, schur_instances: 500, residual_tol: 1e-6 }
    }
}

/// Outcome of one random Schur-equivalence instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchurCase {
    pub lmi_feasible: bool,
    pub direct_holds: bool,
}

impl SchurCase {
    pub fn agrees(&self) -> bool {
        self.lmi_feasible == self.direct_holds
    }
}

fn gaussian(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n, 1.0);
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

/// Symmetric matrix whose spectrum is bounded away from zero: positive
/// definite when `psd`, otherwise with one eigenvalue in `[−1, −1e−3]`.
pub fn separated_symmetric(rng: &mut impl Rng, n: usize, psd: bool) -> DMatrix<f64> {
    let q = gaussian(rng, n, n, 1.0).qr().q();
    let mut lam: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..0.0))).collect();
    if !psd {
        let k = rng.random_range(0..n);
        lam[k] = -lam[k];
    }
    linalg::symmetrize(&(&q * DMatrix::from_diagonal(&DVector::from_vec(lam)) * q.transpose()))
}

/// Random closed loop with `n ≤ 3` own states and one or two neighbourhood
/// blocks of size at most 3.
fn random_closed_loop(rng: &mut impl Rng) -> (ClosedLoop, Vec<usize>) {
    let n = rng.random_range(1..=3);
    let mut sizes = vec![n];
    if rng.random_bool(0.5) {
        sizes.push(rng.random_range(1..=3));
    }
    let d: usize = sizes.iter().sum();
    let m = rng.random_range(1..=2);
    let cl = ClosedLoop::from_parts(
        gaussian(rng, n, d, 0.6),
        gaussian(rng, n, m, 0.6),
        gaussian(rng, n, d, 0.3),
        gaussian(rng, n, m, 0.3),
        gaussian(rng, m, d, 0.5),
    );
    (cl, sizes)
}

/// Propagation LMI against `Σ⁺ ⪰ A_K Σ̂ A_Kᵀ + C_K Σ̂ C_Kᵀ + g gᵀ`, with
/// blocks of `Σ̂` randomly set to zero.
pub fn propagation_schur_case(rng: &mut impl Rng) -> SchurCase {
    let (cl, sizes) = random_closed_loop(rng);
    let n = cl.a_k.nrows();
    let zero: Vec<bool> = sizes.iter().map(|_| rng.random_bool(0.25)).collect();
    let blocks: Vec<DMatrix<f64>> = sizes
        .iter()
        .zip(&zero)
        .map(|(&s, &z)| if z { DMatrix::zeros(s, s) } else { random_spd(rng, s) })
        .collect();
    let sigma_hat = linalg::block_diag(&blocks);
    let g = gaussian(rng, n, 1, 0.5).column(0).into_owned();
    let psd = rng.random_bool(0.5);
    let sigma_plus = covariance::propagate_direct(&cl, &g, &sigma_hat) + separated_symmetric(rng, n, psd);
    let layout = BlockLayout { sizes, zero };
    let lmi = covariance::propagation_lmi(
        &cl,
        &AffineMatrix::constant(&sigma_plus),
        &AffineMatrix::constant(&sigma_hat),
        &covariance::const_column(&g),
        &layout,
    )
    .constant_value();
    SchurCase {
        lmi_feasible: linalg::check_psd(&lmi, SCHUR_TOL).expect("symmetric LMI"),
        direct_holds: covariance::dominates_direct(&cl, &g, &sigma_hat, &sigma_plus, SCHUR_TOL),
    }
}

/// Terminal-covariance LMI with `U = K Σ̂` against
/// `Σ_f ⪰ A_K Σ̂ A_Kᵀ + 2 C_K Σ̂ C_Kᵀ`, and the covariance cap LMI against
/// `Σ̂ ⪰ (1/φ) I`. Both must agree for the case to count as agreeing.
pub fn terminal_schur_case(rng: &mut impl Rng) -> (SchurCase, SchurCase) {
    let (cl, sizes) = random_closed_loop(rng);
    let n = cl.a_k.nrows();
    let blocks: Vec<DMatrix<f64>> = sizes.iter().map(|&s| random_spd(rng, s)).collect();
    let sigma_hat = linalg::block_diag(&blocks);
    let u = &cl.k * &sigma_hat;
    let ga = &cl.a_n * &sigma_hat + &cl.b * &u;
    let gc = &cl.c_n * &sigma_hat + &cl.d * &u;
    let bound = &cl.a_k * &sigma_hat * cl.a_k.transpose() + (&cl.c_k * &sigma_hat * cl.c_k.transpose()) * 2.0;
    let psd = rng.random_bool(0.5);
    let sigma_f = linalg::symmetrize(&bound) + separated_symmetric(rng, n, psd);
    let lmi = synthesis::terminal_covariance_lmi(
        &AffineMatrix::constant(&sigma_f),
        &AffineMatrix::constant(&sigma_hat),
        &AffineMatrix::constant(&ga),
        &AffineMatrix::constant(&gc),
    )
    .constant_value();
    let cov = SchurCase {
        lmi_feasible: linalg::check_psd(&lmi, SCHUR_TOL).expect("symmetric LMI"),
        direct_holds: linalg::min_eigenvalue(&(&sigma_f - linalg::symmetrize(&bound))) >= -SCHUR_TOL,
    };

    let lmin = linalg::min_eigenvalue(&sigma_hat);
    let factor = 1.0 + rng.random_range(0.01..0.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    // cap level 1/φ placed on either side of λ_min(Σ̂)
    let phi = 1.0 / (lmin * factor);
    let cap = synthesis::covariance_cap_lmi(&AffineMatrix::constant(&sigma_hat), &LinExpr::constant(phi)).constant_value();
    let d = sigma_hat.nrows();
    let cap_case = SchurCase {
        lmi_feasible: linalg::check_psd(&cap, SCHUR_TOL).expect("symmetric LMI"),
        direct_holds: linalg::min_eigenvalue(&(&sigma_hat - DMatrix::identity(d, d) / phi)) >= -SCHUR_TOL,
    };
    (cov, cap_case)
}

fn check(name: &str, passed: bool, value: f64, tolerance: f64, detail: String) -> PropertyCheck {
    PropertyCheck { name: name.to_string(), passed, value, tolerance, detail }
}

/// Terminal-decrease residual, mean-square stability, Schur equivalences,
/// terminal-set boundary samples at `α` and `1.05 α`, `ψ` consistency and
/// the sampled decrease of the terminal cost.
pub fn run_suite(ing: &TerminalIngredients, net: &NetworkModel, opts: &VerifyOptions) -> Vec<PropertyCheck> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let res = synthesis::terminal_decrease_residual(ing, net);
    out.push(check("terminal_decrease_lmi", res <= opts.residual_tol, res, opts.residual_tol, "largest eigenvalue".into()));
    let radius = synthesis::mean_square_radius(ing, net);
    out.push(check("mean_square_stability", radius < 1.0, radius, 1.0, "second-moment spectral radius".into()));
    let eq = synthesis::terminal_covariance_equality_residual(ing, net);
    out.push(check("terminal_covariance_equality", true, eq, f64::INFINITY, "informational".into()));

    let prop_bad = (0..opts.schur_instances).filter(|_| !propagation_schur_case(&mut rng).agrees()).count();
    out.push(check(
        "schur_propagation",
        prop_bad == 0,
        prop_bad as f64,
        0.0,
        format!("{prop_bad} of {} instances disagree", opts.schur_instances),
    ));
    let term_bad = (0..opts.schur_instances)
        .filter(|_| {
            let (a, b) = terminal_schur_case(&mut rng);
            !(a.agrees() && b.agrees())
        })
        .count();
    out.push(check(
        "schur_terminal_covariance",
        term_bad == 0,
        term_bad as f64,
        0.0,
        format!("{term_bad} of {} instances disagree", opts.schur_instances),
    ));

    let report = match synthesis::compute_alpha(ing, net, opts.epsilon) {
        Ok(r) => r,
        Err(e) => {
            out.push(check("terminal_level", false, f64::NAN, 0.0, e.to_string()));
            return out;
        }
    };
    let alpha = report.alpha;
    let level_ok = (alpha - ing.alpha).abs() <= 1e-9 * alpha.max(1.0);
    out.push(check("terminal_level", level_ok, ing.alpha, alpha, format!("recomputed level {alpha:e}")));

    let tol = 1e-9;
    let samples = synthesis::sample_terminal_boundary(ing, net, alpha, opts.boundary_samples, &mut rng);
    let worst = samples
        .iter()
        .map(|z| synthesis::check_terminal_point(ing, net, opts.epsilon, z))
        .fold((f64::INFINITY, f64::INFINITY), |acc, c| {
            (acc.0.min(c.state_margin.min(c.input_margin)), acc.1.min(c.psi_margin))
        });
    out.push(check(
        "terminal_rows_on_boundary",
        worst.0 >= -tol,
        worst.0,
        -tol,
        "smallest tightened-row margin".into(),
    ));
    out.push(check("psi_consistency", worst.1 >= -tol, worst.1, -tol, "smallest ψ − ‖z‖²".into()));

    let binding = &report.bounds[report.binding];
    let enlarged = synthesis::sample_terminal_boundary(ing, net, 1.05 * alpha, opts.boundary_samples, &mut rng);
    let hit = enlarged
        .iter()
        .map(|z| synthesis::check_terminal_point(ing, net, opts.epsilon, z))
        .map(|c| match binding.kind {
            BoundKind::State => c.state_margin,
            BoundKind::Input => c.input_margin,
            BoundKind::Covariance => c.psi_margin,
        })
        .fold(f64::INFINITY, f64::min);
    out.push(check(
        "binding_row_at_enlarged_level",
        hit < 0.0,
        hit,
        0.0,
        format!("binding {:?} bound, smallest margin at 1.05 α", binding.kind),
    ));

    let (g, _) = assemble_global(net);
    let (k, p) = synthesis::global_gain_and_weight(ing, net);
    let ak = &g.a + &g.b * &k;
    let ck = &g.c + &g.d * &k;
    let worst_dec = samples
        .iter()
        .map(|z| {
            let u = &k * z;
            let next = linalg::quad_form(&p, &(&ak * z)) + linalg::quad_form(&p, &(&ck * z));
            let stage = linalg::quad_form(&g.q, z) + linalg::quad_form(&g.r, &u);
            (next - linalg::quad_form(&p, z) + stage) / z.norm_squared().max(1e-300)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(check(
        "sampled_terminal_decrease",
        worst_dec <= opts.residual_tol,
        worst_dec,
        opts.residual_tol,
        "largest normalised decrease residual".into(),
    ));
    out
}
