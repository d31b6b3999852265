//! Numerical kernels: conjugate gradient, simplex projection and the
//! weighted-Chebyshev weighting subproblem.

mod cg;
mod simplex;
mod wc;

pub use cg::{conjugate_gradient, CgOutcome};
pub use simplex::project_simplex;
pub use wc::{
    solve_wc_subproblem, WcSolution, WcSolver, WcSubproblem, DEFAULT_WC_MAX_ITERS, DEFAULT_WC_TOL,
};
