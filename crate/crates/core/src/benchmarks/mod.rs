//! Benchmark problems with ground truth and independent verification oracles.

mod hypercleaning;
mod quadratic;
mod verification;

pub use hypercleaning::{
    make_hypercleaning_toy, HypercleaningToy, HypercleaningToySpec, PRESET_CORRUPTION,
};
pub use quadratic::{make_quadratic, QuadraticBilevel, QuadraticBilevelSpec, QuadraticShape};
pub use verification::{
    brute_force_min_norm, brute_force_simplex, finite_diff_hypergrad, true_min_norm_sq,
    CountingOracles, FD_MAX_LL_ITERS,
};

#[cfg(test)]
mod tests;
