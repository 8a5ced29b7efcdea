//! Forward-backward sweep solvers for memory-limited partially observable
//! stochastic control.
//!
//! The controller sees only a finite-dimensional memory `z`, never the state
//! `x`. Problems are posed on the extended state `s = (x, z)` and solved by
//! alternating a forward Fokker-Planck pass with a backward
//! Hamilton-Jacobi-Bellman pass, updating the memory-feedback control at
//! every time step from the conditional expected Hamiltonian.
//!
//! Two backends are provided:
//!
//! * [`lqg`]: linear dynamics, quadratic cost, Gaussian initial law. The
//!   PDE pair collapses to Riccati-type matrix ODEs for the control gain
//!   `Π` and the precision `Λ`.
//! * [`grid`]: finite-difference discretization of the general problem on a
//!   tensor grid over the extended state (up to three dimensions).
//!
//! [`sdesim`] simulates closed-loop paths for Monte Carlo checks and
//! [`verify`] turns the convergence theory into executable oracles.

pub mod config;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod lqg;
pub mod problem;
pub mod problems;
pub mod sdesim;
pub mod verify;

pub use problem::{
    assemble_extended_dynamics, validate_lqg, CostSpec, ExtendedDynamics, GridSpec,
    InitialDistribution, LqgProblem, MatrixFn, ProblemError, RawDims, RawPoscSpec, TimeMatrix,
    ValidationReport, VectorFn,
};
