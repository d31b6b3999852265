//! Multi-objective bilevel optimization with weighted-Chebyshev hypergradient
//! descent.
//!
//! A problem supplies oracles for `S` upper-level objectives `f^(s)(x, y)` and
//! one strongly convex lower-level objective `g(x, y)`. The optimizers drive
//! `x` towards a point of the weak Pareto front of
//! `φ_s(x) = f^(s)(x, y*(x))`, steered by a preference vector `r`.
//!
//! ```
//! use mobl::benchmarks::{make_quadratic, QuadraticBilevelSpec};
//! use mobl::optimizer::run_deterministic;
//! use mobl::{HypergradOption, Preference, SolverConfig, StepSizes};
//!
//! let spec = QuadraticBilevelSpec::random(3, 4, 2, 7);
//! let (problem, constants) = make_quadratic(&spec).unwrap();
//! let r = Preference::preferred(2, 0).unwrap();
//! let steps = StepSizes::from_constants(&constants, r.max()).unwrap();
//! let mut config = SolverConfig::deterministic(steps);
//! config.outer_iters = 50;
//! config.option = HypergradOption::Cg;
//! let trace = run_deterministic(&problem, &config, &r, &[0.0; 3], &[0.0; 4], None).unwrap();
//! assert_eq!(trace.records.len(), 50);
//! ```

// `!(x > 0.0)` is how parameters reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// the dense kernels read best with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod benchmarks;
pub mod domain;
mod error;
pub mod hypergrad;
pub mod linalg;
pub mod optimizer;
pub mod subsolvers;

pub use domain::*;
pub use error::{MoblError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/hypergradients.md")]
    mod hypergradients {}
    #[doc = include_str!("../../../book/src/subproblem.md")]
    mod subproblem {}
    #[doc = include_str!("../../../book/src/algorithms.md")]
    mod algorithms {}
    #[doc = include_str!("../../../book/src/pareto.md")]
    mod pareto {}
}
