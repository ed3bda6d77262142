//! Fourier-Galerkin discretization of the tilted operator on the 2-torus.
//!
//! Functions are represented by coefficient vectors over the modes
//! `e^{i(k₁x₁+k₂x₂)}`, `|k_j| ≤ H`. The flows and potentials in this crate are
//! trigonometric polynomials of low degree, so their coefficients are
//! recovered exactly from a small sampling grid and the Galerkin matrices are
//! exact up to truncation of the product.

mod expm;
mod operator;
mod propagator;

pub use expm::{expm_action, ExpPlan};
pub use operator::{assemble_c, assemble_l, FourierField, ModeBasis, SpectralOperator};
pub use propagator::{
    dense_principal_eigenvalue, operator_error, oracle_mu, principal_eigenvalue, reference_propagator,
    splitting_errors, splitting_propagator, DenseOperator, Eigenpair, KppGenerator, LinearMap, Propagator,
    Scheme, SplitGenerator, SplittingTestProblem,
};

pub use num_complex::Complex64;
