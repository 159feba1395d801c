//! Numerics for the Poisson–Boltzmann equation `−ΔΦ = ρ − e^Φ` on the unit
//! torus, a mollified ionic Vlasov–Poisson simulator built on it, and an
//! executable harness for the quantitative estimates the solution satisfies.
//!
//! Modules, bottom-up:
//!
//! * [`grid`]: periodic grids, spectral calculus, quadrature.
//! * [`pbsolver`]: flat/sharp decomposition and damped Newton on the convex
//!   functional `J`.
//! * [`functionals`]: potential energy, entropy, total energy, stability
//!   metrics and small analytic utilities.
//! * [`vlasov`]: semi-Lagrangian Strang-split transport with a doubly
//!   mollified field.
//! * [`verify`]: density families and the estimate checks.
//! * [`ivpf`] and [`config`]: file formats shared with the CLI.

pub mod config;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod ivpf;
pub mod pbsolver;
pub mod verify;
pub mod vlasov;

pub use error::{Error, Result};
pub use grid::{ScalarField, TorusGrid, VectorField};
pub use pbsolver::{solve_pb, PbConfig, PbSolution};
