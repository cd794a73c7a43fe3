//! Numerical laboratory for the complexified symplectic group, its contraction
//! semigroup and their quantization on truncated Fock spaces.
//!
//! Layers, bottom-up:
//!
//! * [`numerics`]: dense complex linear algebra (expm, principal log, frames, gaps).
//! * [`symplectic`]: structural matrices, membership tests for groups and cones,
//!   quadratic Hamiltonians and the unitary/dissipative factorization.
//! * [`relation`]: linear relations, their product, the Potapov transform and
//!   limits of `graph(exp(A - nu*N_b))`.
//! * [`fock`]: creation/annihilation matrices on a truncated Fock space,
//!   quadratic quantization, antinormal compression and coherent states.
//! * [`magnetic`]: finite-difference magnetic Laplacian in the plane.
//! * [`loops`]: Brownian-bridge loop Monte Carlo with an exact Gaussian oracle.
//! * [`experiments`]: JSON-configured runners used by the command line tool.

pub mod error;
pub mod experiments;
pub mod fock;
pub mod loops;
pub mod magnetic;
pub mod numerics;
pub mod par;
pub mod relation;
pub mod symplectic;

pub use error::{Error, Result};
pub use numerics::{CMat, CVec, Tolerances, C64};
