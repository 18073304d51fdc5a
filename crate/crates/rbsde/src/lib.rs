//! Numerical laboratory for one-dimensional reflected backward stochastic
//! differential equations with two barriers and generators of logarithmic
//! growth (`|y||ln|y|| + |z|sqrt(|ln|z||)`).
//!
//! The crate has three solver families that validate each other:
//!
//! * [`lsmc`] — backward least-squares Monte Carlo schemes on simulated
//!   forward paths: unconstrained BSDEs, one-barrier and double-barrier
//!   penalization, and a direct projection scheme whose pushing processes
//!   satisfy the discrete Skorokhod (flat-off) conditions by construction.
//! * [`pde`] — finite-difference solvers for the associated one- and
//!   double-obstacle parabolic variational inequalities, the penalized
//!   PDEs, and the exponential time transform. These act as deterministic
//!   oracles for the Monte Carlo schemes in d = 1.
//! * [`game`] — a mixed zero-sum stochastic differential game engine:
//!   Hamiltonian saddle points over finite control grids, saddle stopping
//!   times read off the reflected solution, Girsanov-weighted payoff
//!   estimation, and saddle-inequality verification.
//!
//! Shared domain types (time grids, generators, barriers, solution
//! quadruples) live in the top-level modules; [`registry`] builds the
//! standard test-problem ingredients by name.

pub mod barrier;
pub mod error;
pub mod forward;
pub mod game;
pub mod generator;
pub mod grid;
pub mod lsmc;
pub mod pde;
pub mod registry;
pub mod seedstream;
pub mod solution;

pub use barrier::{Barrier, BarrierPair, TerminalCondition};
pub use error::{Error, Result};
pub use forward::{path_sup_moment, simulate_paths, PathEnsemble, SdeSpec};
pub use generator::{
    check_log_growth, eval_generator, safe_ylogy, safe_zsqrtlog, DiagnosticsConfig, GeneratorSpec,
    GrowthSample,
};
pub use grid::TimeGrid;
pub use solution::SolutionQuadruple;
