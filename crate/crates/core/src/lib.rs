//! Front speeds of reaction-diffusion fronts in periodic incompressible flows.
//!
//! The speed follows from the principal eigenvalue `μ(λ)` of a λ-tilted
//! advection-diffusion operator with potential on the torus, through
//! `c* = inf_λ μ(λ)/λ`. Eigenvalues are estimated with an interacting
//! particle system ([`ips`]) and checked against a Fourier-Galerkin solver
//! ([`spectral`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow;
pub mod front;
pub mod harness;
pub mod ips;
pub mod rng;
pub mod sde;
pub mod spectral;

pub use error::{Error, Result};
pub use flow::{build_flow, Flow, FlowKind, FlowSpec};
pub use ips::{estimate_mu, IpsParams, KppProblem, MuEstimate};
pub use rng::RngStream;
pub use sde::{wrap_torus, Ensemble};
