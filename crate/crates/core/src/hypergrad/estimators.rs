use super::lower::non_empty;
use super::LowerSolveResult;
use crate::domain::{Batch, DeterministicOracles, OracleCounters, StochasticOracles};
use crate::error::{MoblError, Result};
use crate::linalg::{axpy, sub};
use crate::subsolvers::conjugate_gradient;

/// CG hypergradient: solve `∇²_y g(x, y_D) v = ∇_y f^(s)(x, y_D)` from `v0`
/// for at most `n` steps and return `(∇_x f^(s) − ∇²_{xy} g · v_N, v_N)`.
#[allow(clippy::too_many_arguments)]
pub fn hypergrad_cg<P: DeterministicOracles + ?Sized>(
    oracles: &P,
    x: &[f64],
    y_d: &[f64],
    s: usize,
    v0: &[f64],
    n: usize,
    tol: f64,
    counters: &mut OracleCounters,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gx = oracles.ul_grad_x(s, x, y_d);
    let gy = oracles.ul_grad_y(s, x, y_d);
    counters.gc_f += 2;
    let out = conjugate_gradient(|v| oracles.ll_hvp(x, y_d, v), &gy, v0, n, tol)?;
    counters.hv_g += out.products as u64;
    let jv = oracles.ll_jvp(x, y_d, &out.solution);
    counters.jv_g += 1;
    Ok((sub(&gx, &jv), out.solution))
}

/// Neumann-series hypergradient along the stored inner trajectory:
///
/// ```text
/// ∇̂φ_s = ∇_x f^(s)(x, y^D) − α Σ_{t=0}^{D} ∇²_{xy} g(x, y^t) · w_t
/// ```
///
/// with `w_D = ∇_y f^(s)(x, y^D)` and `w_{t−1} = (I − α ∇²_y g(x, y^t)) w_t`,
/// evaluated in a single backward sweep with Hessian-vector products only.
pub fn hypergrad_ns<P: DeterministicOracles + ?Sized>(
    oracles: &P,
    x: &[f64],
    lower: &LowerSolveResult,
    s: usize,
    alpha: f64,
    counters: &mut OracleCounters,
) -> Result<Vec<f64>> {
    let traj = lower.trajectory.as_ref().ok_or_else(|| {
        MoblError::Usage("the Neumann estimator needs the inner trajectory".into())
    })?;
    let y_d = traj
        .last()
        .ok_or_else(|| MoblError::Usage("inner trajectory is empty".into()))?;
    let mut grad = oracles.ul_grad_x(s, x, y_d);
    let mut w = oracles.ul_grad_y(s, x, y_d);
    counters.gc_f += 2;
    let mut acc = vec![0.0; grad.len()];
    for y_t in traj.iter().rev() {
        let jv = oracles.ll_jvp(x, y_t, &w);
        axpy(1.0, &jv, &mut acc);
        let hv = oracles.ll_hvp(x, y_t, &w);
        axpy(-alpha, &hv, &mut w);
    }
    let terms = traj.len() as u64;
    counters.jv_g += terms;
    counters.hv_g += terms;
    axpy(-alpha, &acc, &mut grad);
    Ok(grad)
}

/// Truncated Neumann approximation of `[∇²_y G]⁻¹ v0` with one sampled
/// Hessian per level: `ν^Q = v0`, `ν^{i−1} = ν^i − η ∇²_y G(x, y; B_i) ν^i`
/// for `i = Q, …, 1`, returning `η Σ_{i=0}^{Q} ν^i`.
///
/// `batches[i − 1]` is `B_i`.
pub fn stochastic_hvp_neumann<P: StochasticOracles + ?Sized>(
    oracles: &P,
    x: &[f64],
    y_d: &[f64],
    v0: &[f64],
    eta: f64,
    batches: &[Batch],
    counters: &mut OracleCounters,
) -> Result<Vec<f64>> {
    if batches.is_empty() {
        return Err(MoblError::Configuration(
            "no Hessian batches supplied".into(),
        ));
    }
    for b in batches {
        non_empty(b, "Hessian")?;
    }
    let mut nu = v0.to_vec();
    let mut sum = nu.clone();
    for b in batches.iter().rev() {
        let hv = oracles.ll_hvp(x, y_d, &nu, b);
        counters.hv_g += 1;
        axpy(-eta, &hv, &mut nu);
        axpy(1.0, &nu, &mut sum);
    }
    sum.iter_mut().for_each(|v| *v *= eta);
    Ok(sum)
}
