//! Nash equilibria of N-player distributed-control games for the 1-D heat
//! equation, and certification that in the common-target case the equilibrium
//! minimizes explicit single-objective functionals.
//!
//! The crate is organized bottom-up:
//!
//! - [`problem`]: grids, fields, players, the control space and its weighted
//!   inner product, config ingestion.
//! - [`heat`]: implicit-Euler forward solver (full, homogeneous and free
//!   variants) via a tridiagonal direct solve per step.
//! - [`adjoint`]: exact discrete adjoint sweeps and the Riesz gradient of the
//!   per-player cost.
//! - [`game`]: the optimality operator, matrix-free CG / restarted GMRES
//!   solvers in the control inner product, ellipticity diagnostics.
//! - [`objectives`]: all cost functionals (per-player, quadratic form,
//!   cooperative families) and the equivalence certifications.
//! - [`oracle`]: dense assembly of the optimality operator, direct solve and
//!   eigenvalue checks at small scale.

pub mod adjoint;
pub mod game;
pub mod heat;
pub mod objectives;
pub mod oracle;
pub mod problem;

#[cfg(test)]
pub(crate) mod test_support;

pub use game::{GameOperator, NashReport, OperatorMode, SolveOptions};
pub use problem::{ControlBundle, GridSpec, PlayerSpec, ProblemSpec, SpaceTimeField};
