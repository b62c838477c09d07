//! # tomoplan
//!
//! Optimal experiment design for quantum state tomography.
//!
//! Given a fixed, finite set of POVM measurement configurations on an
//! `N`-dimensional system, this crate computes how a budget of measurement
//! repetitions should be split between the configurations:
//!
//! - [`design_numeric`]: the state-specific optimal design (OED), found by
//!   Newton iteration on the design simplex with analytic gradient and Hessian
//!   of the Cramér–Rao bound `B = tr F⁻¹`.
//! - [`design_analytic`]: closed-form OED for minimal tomography.
//! - [`averaging`]: state-independent average OED, by averaging the Fisher
//!   information or the bound itself over a ball of states.
//! - [`odt`]: the design minimizing the variance of the bound over states.
//! - [`cholesky`]: the constrained bound in the Cholesky parameterization and
//!   the matching design for positivity-constrained estimators.
//!
//! [`estimators`] and [`montecarlo`] simulate tomography runs so that the
//! precision claims can be checked against sampled data.
//!
//! All vectors over states use the Bloch coordinates defined by
//! [`repr::HermitianBasis`].

#![forbid(unsafe_code)]

pub mod averaging;
pub mod cholesky;
pub mod design_analytic;
pub mod design_numeric;
pub mod error;
pub mod estimators;
pub mod fisher;
pub mod io;
mod linalg;
pub mod montecarlo;
pub mod odt;
pub mod repr;
pub mod rng;
pub mod setups;
pub mod simplex;

pub use error::{Error, Result};
pub use fisher::{Design, FisherBundle, MinimalKernel};
pub use repr::{ExperimentSetup, HermitianBasis};
pub use simplex::{Solution, Warning};

/// Complex matrix type used for density matrices and POVM elements.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;
