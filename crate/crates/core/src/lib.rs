//! Distributed stochastic model predictive control for networks of linear
//! subsystems with multiplicative noise.
//!
//! Each subsystem predicts the mean and covariance of its own state and
//! coordinates with its neighbours through consensus ADMM. Chance
//! constraints become deterministic constraints on the predicted mean and
//! covariance. Terminal ingredients are synthesised offline from a
//! structured LMI problem.

pub mod admm;
pub mod config;
pub mod controller;
pub mod conic;
pub mod covariance;
pub mod error;
pub mod linalg;
pub mod local_mpc;
pub mod model;
pub mod serde_mat;
pub mod simulator;
pub mod synthesis;
pub mod tightening;
pub mod verify;

// links the system BLAS/LAPACK used by the SDP backend
use openblas_src as _;
