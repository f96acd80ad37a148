//! Numerics for subcritical Moser–Trudinger problems on surfaces.
//!
//! * [`radial`]: the radial bubble ODE in overflow-safe deficit variables, the
//!   correction profiles `w0`/`w1`, closed-form moment integrals and the
//!   energy expansion of a single bubble.
//! * [`testfn`]: barycenter test functions on the flat torus, their energies and
//!   the Kantorovich–Rubinstein concentration diagnostic ([`kr`]).
//! * [`torus`] and [`solver`]: a spectral discretization of
//!   `Δu + hu = λ p u^{p-1} e^{u^p}` with minimization, Newton–Krylov polishing,
//!   continuation in `β` and blow-up diagnostics.
//!
//! Sweeps run on rayon when the `parallel` feature is enabled (default).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fit;
pub mod kr;
pub mod ode;
pub mod par;
pub mod quad;
pub mod radial;
pub mod solver;
pub mod testfn;
pub mod torus;

pub use error::{Error, Result};
