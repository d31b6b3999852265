use crate::domain::{
    Batch, BatchPurpose, DeterministicOracles, OracleCounters, SolverRng, StochasticOracles,
};
use crate::error::{MoblError, Result};
use crate::linalg::{all_finite, axpy};

/// Output of an inner gradient-descent solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerSolveResult {
    /// `y_k^D`
    pub y_final: Vec<f64>,
    /// `y_k^0, …, y_k^D`, kept only when requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
    pub steps_taken: usize,
}

/// `D` gradient steps `y ← y − α ∇_y g(x, y)` from `y_init`.
pub fn lower_level_solve<P: DeterministicOracles + ?Sized>(
    oracles: &P,
    x: &[f64],
    y_init: &[f64],
    d: usize,
    alpha: f64,
    keep_trajectory: bool,
    counters: &mut OracleCounters,
) -> Result<LowerSolveResult> {
    run_steps(y_init, d, alpha, keep_trajectory, counters, |y| {
        Ok(oracles.ll_grad_y(x, y))
    })
}

/// Stochastic inner solve: step `t` uses a fresh batch `T_{t−1}` of size
/// `batch_size`.
#[allow(clippy::too_many_arguments)]
pub fn lower_level_solve_stochastic<P: StochasticOracles + ?Sized>(
    oracles: &P,
    x: &[f64],
    y_init: &[f64],
    d: usize,
    alpha: f64,
    batch_size: usize,
    rng: &mut SolverRng,
    counters: &mut OracleCounters,
) -> Result<LowerSolveResult> {
    run_steps(y_init, d, alpha, false, counters, |y| {
        let batch = oracles.sample_batch(BatchPurpose::LowerStep, batch_size, rng);
        non_empty(&batch, "lower-level")?;
        Ok(oracles.ll_grad_y(x, y, &batch))
    })
}

pub(crate) fn non_empty(batch: &Batch, what: &str) -> Result<()> {
    if batch.is_empty() {
        Err(MoblError::Configuration(format!("{what} batch is empty")))
    } else {
        Ok(())
    }
}

fn run_steps<F>(
    y_init: &[f64],
    d: usize,
    alpha: f64,
    keep_trajectory: bool,
    counters: &mut OracleCounters,
    mut grad: F,
) -> Result<LowerSolveResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if d == 0 {
        return Err(MoblError::Configuration(
            "inner_iters must be at least 1".into(),
        ));
    }
    if !(alpha > 0.0) {
        return Err(MoblError::Configuration(format!(
            "lower-level step must be positive, got {alpha}"
        )));
    }
    let mut y = y_init.to_vec();
    let mut trajectory = keep_trajectory.then(|| {
        let mut t = Vec::with_capacity(d + 1);
        t.push(y.clone());
        t
    });
    for t in 1..=d {
        let g = grad(&y)?;
        counters.gc_g += 1;
        axpy(-alpha, &g, &mut y);
        if !all_finite(&y) {
            return Err(MoblError::Divergence { step: t });
        }
        if let Some(traj) = trajectory.as_mut() {
            traj.push(y.clone());
        }
    }
    Ok(LowerSolveResult {
        y_final: y,
        trajectory,
        steps_taken: d,
    })
}
