//! Outer loops and the preference sweep driver.

mod runs;
mod sweep;

pub use runs::{
    expected_counters, run_deterministic, run_deterministic_observed, run_nonpreference,
    run_nonpreference_observed, run_stochastic, run_stochastic_observed, Algorithm, IterationView,
    Observer,
};
pub use sweep::{pareto_sweep, sweep_with, SweepEntry, SweepResult};

#[cfg(test)]
mod tests;
