use rayon::prelude::*;

use super::run_deterministic;
use crate::domain::{DeterministicOracles, Preference, RunError, RunTrace, SolverConfig};
use crate::error::{MoblError, Result};

/// Outcome of one preference in a sweep.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub preference: Preference,
    pub outcome: Result<RunTrace, RunError>,
}

impl SweepEntry {
    /// The trace, complete or partial.
    pub fn trace(&self) -> &RunTrace {
        match &self.outcome {
            Ok(t) => t,
            Err(e) => &e.trace,
        }
    }

    pub fn final_phi(&self) -> Option<&[f64]> {
        self.trace().final_phi()
    }

    pub fn final_d_norm_sq(&self) -> Option<f64> {
        self.trace().final_d_norm_sq()
    }
}

/// One entry per requested preference, in request order.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
}

/// Runs `run` once per preference, optionally in parallel. Failures are kept
/// per entry and never abort the sweep.
pub fn sweep_with<F>(preferences: &[Preference], parallel: bool, run: F) -> Result<SweepResult>
where
    F: Fn(&Preference) -> Result<RunTrace, RunError> + Sync,
{
    if preferences.is_empty() {
        return Err(MoblError::Configuration("preference grid is empty".into()));
    }
    let entry = |r: &Preference| SweepEntry {
        preference: r.clone(),
        outcome: run(r),
    };
    let entries = if parallel {
        preferences.par_iter().map(entry).collect()
    } else {
        preferences.iter().map(entry).collect()
    };
    Ok(SweepResult { entries })
}

/// Deterministic run per preference from a common start point and seed.
pub fn pareto_sweep<P: DeterministicOracles + Sync + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    preferences: &[Preference],
    x0: &[f64],
    y0: &[f64],
    parallel: bool,
) -> Result<SweepResult> {
    sweep_with(preferences, parallel, |r| {
        run_deterministic(problem, config, r, x0, y0, None)
    })
}
