//! Kernels for lattice Yang–Mills with gauge group U(N) or SU(N).
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that is
//! pure computation: lattice geometry and cluster enumeration, dense complex
//! matrix kernels and the su(N) algebra, Wilson and decomposed actions,
//! conditional θ-integration by quadrature, Metropolis and Langevin samplers,
//! the truncated cluster expansion and the statistics used to report Monte
//! Carlo estimates. File formats, configuration and the command line live in
//! the `ymlattice` crate.
//!
//! A U(N) configuration is represented either directly or through the
//! decomposition `U_e = exp(iθ_e / N) Q_e` with `θ_e ∈ [0, 2π)` and
//! `Q_e ∈ SU(N)`; [`model`] carries both actions and the activity `φ_p` that
//! links them.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod algebra;
pub mod cluster_expansion;
mod error;
pub mod lattice;
pub(crate) mod math;
pub mod model;
pub mod observables;
pub mod quadrature;
pub mod rng;
pub mod samplers;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
