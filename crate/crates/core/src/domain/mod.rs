//! Domain types shared by every other module: weights, oracle interfaces,
//! configuration and run traces.

mod config;
mod oracles;
mod trace;
mod validate;
mod weights;

pub use config::{hessian_batch_sizes, HypergradOption, ProblemConstants, SolverConfig, StepSizes};
pub use oracles::{
    AnalyticReference, AsStochastic, Batch, BatchPurpose, DeterministicOracles, Dims, FullBatch,
    FullBatchDeterministic, SolverRng, StochasticOracles,
};
pub use trace::{
    HypergradientMatrix, IterationRecord, OracleCounters, RunError, RunTrace, Termination,
};
pub use validate::{validate_problem, ValidationReport};
pub use weights::{rescale_to_simplex, Preference, SimplexWeights, MIN_PREFERENCE_COMPONENT};
