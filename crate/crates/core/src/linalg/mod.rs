//! Numerical engines: the ellipsoid method and a dense simplex solver.

pub mod ellipsoid;
pub mod lp;

pub use ellipsoid::{
    default_iterations, ellipsoid_feasible, ellipsoid_optimize, ellipsoid_optimize_with, ellipsoid_run,
    EllipsoidOutcome, EllipsoidState, FnOracle, GuessRecord, Hyperplane, Separation, SeparationOracle, Shortcut,
};
pub use lp::{lp_solve, lp_solve_lazy, LinearProgram, LpOutcome, Relation};
