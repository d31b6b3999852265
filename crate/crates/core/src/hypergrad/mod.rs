//! Hypergradient estimation: inner solves, the conjugate-gradient and
//! Neumann-series estimators, and the sampled Hessian-inverse product.

mod estimators;
mod lower;

pub use estimators::{hypergrad_cg, hypergrad_ns, stochastic_hvp_neumann};
pub use lower::{lower_level_solve, lower_level_solve_stochastic, LowerSolveResult};

use crate::domain::{
    BatchPurpose, DeterministicOracles, HypergradOption, HypergradientMatrix, OracleCounters,
    SolverConfig, SolverRng, StochasticOracles,
};
use crate::error::{MoblError, Result};
use crate::linalg::sub;

/// One column per objective from a deterministic inner solve, with `Φ`
/// evaluated at `(x, y_D)`.
///
/// For the CG option `warm_v[s]` is the starting vector of objective `s` and
/// is overwritten with `v_N` when `config.warm_start_v` is set.
pub fn build_hypergradient_matrix<P: DeterministicOracles + ?Sized>(
    oracles: &P,
    x: &[f64],
    lower: &LowerSolveResult,
    config: &SolverConfig,
    warm_v: &mut [Vec<f64>],
    counters: &mut OracleCounters,
) -> Result<HypergradientMatrix> {
    let dims = oracles.dims();
    let y_d = &lower.y_final;
    let mut columns = Vec::with_capacity(dims.s);
    let mut phi = Vec::with_capacity(dims.s);
    for s in 0..dims.s {
        let col = match config.option {
            HypergradOption::Cg => {
                let v0 = warm_v.get(s).ok_or_else(|| {
                    MoblError::Usage(format!("missing starting vector for objective {s}"))
                })?;
                let (g, v) = hypergrad_cg(
                    oracles,
                    x,
                    y_d,
                    s,
                    v0,
                    config.cg_iters,
                    config.effective_cg_tol(),
                    counters,
                )?;
                if config.warm_start_v {
                    warm_v[s] = v;
                }
                g
            }
            HypergradOption::Ns => hypergrad_ns(oracles, x, lower, s, config.ll_step, counters)?,
        };
        columns.push(col);
        phi.push(oracles.ul_value(s, x, y_d));
    }
    HypergradientMatrix::new(columns, phi)
}

/// Stochastic columns: `D_G` and the Hessian batches `B_1..B_Q` are drawn
/// once and shared, then each objective draws its own `D_F^s`, seeds
/// `v0 = ∇_y F^(s)(x, y_D; D_F^s)` and applies [`stochastic_hvp_neumann`].
pub fn build_hypergradient_matrix_stochastic<P: StochasticOracles + ?Sized>(
    oracles: &P,
    x: &[f64],
    y_d: &[f64],
    config: &SolverConfig,
    hessian_sizes: &[usize],
    rng: &mut SolverRng,
    counters: &mut OracleCounters,
) -> Result<HypergradientMatrix> {
    let dims = oracles.dims();
    let jac = oracles.sample_batch(BatchPurpose::Jacobian, config.jacobian_batch, rng);
    lower::non_empty(&jac, "Jacobian")?;
    let hess: Vec<_> = hessian_sizes
        .iter()
        .map(|&n| oracles.sample_batch(BatchPurpose::Hessian, n, rng))
        .collect();
    let mut columns = Vec::with_capacity(dims.s);
    let mut phi = Vec::with_capacity(dims.s);
    for s in 0..dims.s {
        let ul = oracles.sample_batch(BatchPurpose::UpperObjective(s), config.ul_batch, rng);
        lower::non_empty(&ul, "upper-level")?;
        let gx = oracles.ul_grad_x(s, x, y_d, &ul);
        let gy = oracles.ul_grad_y(s, x, y_d, &ul);
        counters.gc_f += 2;
        let v = stochastic_hvp_neumann(oracles, x, y_d, &gy, config.hvp_step, &hess, counters)?;
        let jv = oracles.ll_jvp(x, y_d, &v, &jac);
        counters.jv_g += 1;
        columns.push(sub(&gx, &jv));
        phi.push(oracles.ul_value(s, x, y_d, &ul));
    }
    HypergradientMatrix::new(columns, phi)
}
