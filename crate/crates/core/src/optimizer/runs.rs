use rand::SeedableRng;

use crate::domain::{
    hessian_batch_sizes, AnalyticReference, DeterministicOracles, HypergradOption,
    HypergradientMatrix, IterationRecord, OracleCounters, Preference, ProblemConstants, RunError,
    RunTrace, SimplexWeights, SolverConfig, SolverRng, StochasticOracles, Termination,
};
use crate::error::{MoblError, Result};
use crate::hypergrad::{
    build_hypergradient_matrix, build_hypergradient_matrix_stochastic, lower_level_solve,
    lower_level_solve_stochastic,
};
use crate::linalg::{axpy, combine, norm_sq};
use crate::subsolvers::{WcSolver, WcSubproblem};

/// Which outer loop a counter prediction refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Deterministic,
    Stochastic,
    NonPreference,
}

/// Closed-form oracle counts of a run that completes all `K` iterations.
///
/// NS: `(2KS, KD, K(D+1)S, K(D+1)S)`. CG with `exact_counters`:
/// `(2KS, KD, KS, KNS)`, plus `(K−1)S` Hessian products when `warm_start_v`
/// is on, one per restarted residual `b − A v0` (assuming a zero initial `v0`).
/// Stochastic: `(2KS, KD, KS, KQS)`.
pub fn expected_counters(config: &SolverConfig, s: usize, algorithm: Algorithm) -> OracleCounters {
    let k = config.outer_iters as u64;
    let s = s as u64;
    let d = config.inner_iters as u64;
    let base = OracleCounters {
        gc_f: 2 * k * s,
        gc_g: k * d,
        jv_g: 0,
        hv_g: 0,
    };
    match (algorithm, config.option) {
        (Algorithm::Stochastic, _) => OracleCounters {
            jv_g: k * s,
            hv_g: k * config.neumann_depth as u64 * s,
            ..base
        },
        (_, HypergradOption::Ns) => OracleCounters {
            jv_g: k * (d + 1) * s,
            hv_g: k * (d + 1) * s,
            ..base
        },
        (_, HypergradOption::Cg) => {
            let restarts = if config.warm_start_v {
                k.saturating_sub(1) * s
            } else {
                0
            };
            OracleCounters {
                jv_g: k * s,
                hv_g: k * config.cg_iters as u64 * s + restarts,
                ..base
            }
        }
    }
}

fn fail(error: MoblError, trace: RunTrace) -> RunError {
    RunError {
        error,
        trace: Box::new(trace),
    }
}

fn check_point(dims: crate::Dims, x0: &[f64], y0: &[f64]) -> Result<()> {
    if x0.len() != dims.p || y0.len() != dims.q {
        return Err(MoblError::InvalidProblem(format!(
            "start point has dims ({}, {}), problem expects ({}, {})",
            x0.len(),
            y0.len(),
            dims.p,
            dims.q
        )));
    }
    Ok(())
}

fn check_preference(r: &Preference, s: usize) -> Result<()> {
    if r.len() != s {
        return Err(MoblError::InvalidWeights(format!(
            "preference has {} components for {s} objectives",
            r.len()
        )));
    }
    Ok(())
}

/// How `λ_k` is chosen and turned into the update direction.
enum Weighting<'a> {
    Chebyshev { r: &'a Preference, u: f64 },
    MinNorm,
}

impl Weighting<'_> {
    fn subproblem(&self, h: &HypergradientMatrix) -> Result<WcSubproblem> {
        match self {
            Weighting::Chebyshev { r, u } => {
                WcSubproblem::new(h.gram(), h.phi_values().to_vec(), r, *u)
            }
            Weighting::MinNorm => WcSubproblem::min_norm(h.gram()),
        }
    }

    /// Coefficients `c` of `d = ∇̂Φ c`.
    fn coefficients(&self, lambda: &SimplexWeights) -> Vec<f64> {
        match self {
            Weighting::Chebyshev { r, .. } => lambda.hadamard(r),
            Weighting::MinNorm => lambda.as_slice().to_vec(),
        }
    }
}

fn true_direction_norm_sq(
    reference: Option<&dyn AnalyticReference>,
    s: usize,
    x: &[f64],
    coeffs: &[f64],
) -> Option<f64> {
    reference.map(|a| {
        let cols: Vec<Vec<f64>> = (0..s).map(|i| a.true_hypergradient(i, x)).collect();
        norm_sq(&combine(&cols, coeffs))
    })
}

/// Everything known at the end of outer iteration `k`, before `x` moves.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub k: usize,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub hypergradients: &'a HypergradientMatrix,
    pub lambda: &'a SimplexWeights,
    /// `d_k`
    pub direction: &'a [f64],
}

/// Callback invoked once per outer iteration.
pub type Observer<'o> = &'o mut dyn FnMut(&IterationView<'_>);

/// Shared tail of one outer iteration: solve for `λ_k`, record, and either
/// stop or step `x`.
struct Step<'a> {
    weighting: &'a Weighting<'a>,
    solver: WcSolver,
    config: &'a SolverConfig,
}

impl Step<'_> {
    /// Returns `Some(reason)` when the run should stop before updating `x`.
    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        k: usize,
        h: &HypergradientMatrix,
        lambda: &mut SimplexWeights,
        x: &mut [f64],
        y: &[f64],
        reference: Option<&dyn AnalyticReference>,
        counters: OracleCounters,
        rng_word_pos: Option<u128>,
        trace: &mut RunTrace,
        observer: &mut Option<Observer<'_>>,
    ) -> Result<Option<Termination>> {
        let sp = self.weighting.subproblem(h)?;
        let sol = self.solver.solve(&sp, Some(lambda))?;
        *lambda = sol.lambda;
        let coeffs = self.weighting.coefficients(lambda);
        let d = h.apply(&coeffs);
        let d_norm_sq = norm_sq(&d);
        trace.records.push(IterationRecord {
            k,
            phi: h.phi_values().to_vec(),
            lambda: lambda.clone(),
            d_norm_sq,
            counters,
            true_d_norm_sq: true_direction_norm_sq(reference, h.num_objectives(), x, &coeffs),
            rng_word_pos,
        });
        trace.counters = counters;
        if let Some(obs) = observer.as_mut() {
            obs(&IterationView {
                k,
                x,
                y,
                hypergradients: h,
                lambda,
                direction: &d,
            });
        }
        if d.iter().all(|v| *v == 0.0) {
            return Ok(Some(Termination::Stationary));
        }
        if self.config.stop_tol > 0.0 && d_norm_sq <= self.config.stop_tol {
            return Ok(Some(Termination::StopTolerance));
        }
        axpy(-self.config.ul_step, &d, x);
        Ok(None)
    }
}

/// Deterministic weighted-Chebyshev multi-objective hypergradient descent.
///
/// Each outer iteration runs `D` warm-started inner steps, builds one
/// hypergradient per objective (CG or Neumann series), picks `λ_k` from the
/// weighted-Chebyshev subproblem and steps `x_{k+1} = x_k − β ∇̂Φ(x_k)(r⊙λ_k)`.
///
/// `v0` holds the CG starting vector of each objective; zeros by default.
pub fn run_deterministic<P: DeterministicOracles + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    r: &Preference,
    x0: &[f64],
    y0: &[f64],
    v0: Option<Vec<Vec<f64>>>,
) -> Result<RunTrace, RunError> {
    let weighting = Weighting::Chebyshev {
        r,
        u: config.tradeoff,
    };
    deterministic_loop(problem, config, &weighting, x0, y0, v0, None)
}

/// [`run_deterministic`] with a per-iteration observer.
#[allow(clippy::too_many_arguments)]
pub fn run_deterministic_observed<P: DeterministicOracles + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    r: &Preference,
    x0: &[f64],
    y0: &[f64],
    v0: Option<Vec<Vec<f64>>>,
    observer: Observer<'_>,
) -> Result<RunTrace, RunError> {
    let weighting = Weighting::Chebyshev {
        r,
        u: config.tradeoff,
    };
    deterministic_loop(problem, config, &weighting, x0, y0, v0, Some(observer))
}

/// Preference-free variant: `λ_k = argmin_λ ‖∇̂Φ(x_k) λ‖²` over the simplex
/// and `x_{k+1} = x_k − β Σ_s λ_k^(s) ∇̂φ_s(x_k)`.
pub fn run_nonpreference<P: DeterministicOracles + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    x0: &[f64],
    y0: &[f64],
) -> Result<RunTrace, RunError> {
    deterministic_loop(problem, config, &Weighting::MinNorm, x0, y0, None, None)
}

/// [`run_nonpreference`] with a per-iteration observer.
pub fn run_nonpreference_observed<P: DeterministicOracles + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    x0: &[f64],
    y0: &[f64],
    observer: Observer<'_>,
) -> Result<RunTrace, RunError> {
    deterministic_loop(
        problem,
        config,
        &Weighting::MinNorm,
        x0,
        y0,
        None,
        Some(observer),
    )
}

fn deterministic_loop<P: DeterministicOracles + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    weighting: &Weighting<'_>,
    x0: &[f64],
    y0: &[f64],
    v0: Option<Vec<Vec<f64>>>,
    mut observer: Option<Observer<'_>>,
) -> Result<RunTrace, RunError> {
    let mut trace = RunTrace::empty(x0.to_vec(), y0.to_vec());
    let dims = problem.dims();
    let setup = || -> Result<Vec<Vec<f64>>> {
        config.validate(None)?;
        check_point(dims, x0, y0)?;
        if let Weighting::Chebyshev { r, .. } = weighting {
            check_preference(r, dims.s)?;
        }
        let v = v0
            .clone()
            .unwrap_or_else(|| vec![vec![0.0; dims.q]; dims.s]);
        if v.len() != dims.s || v.iter().any(|c| c.len() != dims.q) {
            return Err(MoblError::InvalidProblem(
                "initial CG vectors must be S vectors of length q".into(),
            ));
        }
        Ok(v)
    };
    let initial_v = match setup() {
        Ok(v) => v,
        Err(e) => return Err(fail(e, trace)),
    };
    let mut warm_v = initial_v.clone();
    let step = Step {
        weighting,
        solver: WcSolver::new(config.wc_tol, config.wc_max_iters),
        config,
    };
    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut lambda = SimplexWeights::uniform(dims.s);
    let mut counters = OracleCounters::default();
    let keep = config.option == HypergradOption::Ns;

    for k in 0..config.outer_iters {
        let result = (|| -> Result<Option<Termination>> {
            let y_init = if config.warm_start_y { &y } else { y0 };
            let lower = lower_level_solve(
                problem,
                &x,
                y_init,
                config.inner_iters,
                config.ll_step,
                keep,
                &mut counters,
            )?;
            if !config.warm_start_v {
                warm_v.clone_from(&initial_v);
            }
            let h = build_hypergradient_matrix(
                problem,
                &x,
                &lower,
                config,
                &mut warm_v,
                &mut counters,
            )?;
            y = lower.y_final;
            step.finish(
                k,
                &h,
                &mut lambda,
                &mut x,
                &y,
                problem.analytic(),
                counters,
                None,
                &mut trace,
                &mut observer,
            )
        })();
        trace.final_x.clone_from(&x);
        trace.final_y.clone_from(&y);
        match result {
            Ok(None) => {}
            Ok(Some(reason)) => {
                trace.termination = reason;
                return Ok(trace);
            }
            Err(e) => {
                trace.counters = counters;
                return Err(fail(e, trace));
            }
        }
    }
    trace.counters = counters;
    Ok(trace)
}

/// Stochastic weighted-Chebyshev multi-objective hypergradient descent.
///
/// Inner steps use fresh batches `T_{t−1}`; each outer iteration then draws
/// `D_G`, the shrinking Hessian batches `B_1..B_Q` and one `D_F^s` per
/// objective. The random stream is seeded from `config.seed` and its word
/// position is stored in every record for replay. `constants` supplies `μ_g`
/// for the batch schedule and the batch-size condition.
pub fn run_stochastic<P: StochasticOracles + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    r: &Preference,
    x0: &[f64],
    y0: &[f64],
    constants: Option<&ProblemConstants>,
) -> Result<RunTrace, RunError> {
    run_stochastic_observed(problem, config, r, x0, y0, constants, None)
}

/// [`run_stochastic`] with an optional per-iteration observer.
pub fn run_stochastic_observed<P: StochasticOracles + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    r: &Preference,
    x0: &[f64],
    y0: &[f64],
    constants: Option<&ProblemConstants>,
    mut observer: Option<Observer<'_>>,
) -> Result<RunTrace, RunError> {
    let mut trace = RunTrace::empty(x0.to_vec(), y0.to_vec());
    let dims = problem.dims();
    let setup = || -> Result<()> {
        config.validate_stochastic(constants)?;
        check_point(dims, x0, y0)?;
        check_preference(r, dims.s)
    };
    if let Err(e) = setup() {
        return Err(fail(e, trace));
    }
    let weighting = Weighting::Chebyshev {
        r,
        u: config.tradeoff,
    };
    let step = Step {
        weighting: &weighting,
        solver: WcSolver::new(config.wc_tol, config.wc_max_iters),
        config,
    };
    let sizes = hessian_batch_sizes(
        config.hessian_batch,
        config.neumann_depth,
        config.hvp_step,
        constants.map(|c| c.mu_g),
    );
    let mut rng = SolverRng::seed_from_u64(config.seed);
    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut lambda = SimplexWeights::uniform(dims.s);
    let mut counters = OracleCounters::default();

    for k in 0..config.outer_iters {
        let word_pos = rng.get_word_pos();
        let result = (|| -> Result<Option<Termination>> {
            let y_init = if config.warm_start_y { &y } else { y0 };
            let lower = lower_level_solve_stochastic(
                problem,
                &x,
                y_init,
                config.inner_iters,
                config.ll_step,
                config.ll_batch,
                &mut rng,
                &mut counters,
            )?;
            let h = build_hypergradient_matrix_stochastic(
                problem,
                &x,
                &lower.y_final,
                config,
                &sizes,
                &mut rng,
                &mut counters,
            )?;
            y = lower.y_final;
            step.finish(
                k,
                &h,
                &mut lambda,
                &mut x,
                &y,
                problem.analytic(),
                counters,
                Some(word_pos),
                &mut trace,
                &mut observer,
            )
        })();
        trace.final_x.clone_from(&x);
        trace.final_y.clone_from(&y);
        match result {
            Ok(None) => {}
            Ok(Some(reason)) => {
                trace.termination = reason;
                return Ok(trace);
            }
            Err(e) => {
                trace.counters = counters;
                return Err(fail(e, trace));
            }
        }
    }
    trace.counters = counters;
    Ok(trace)
}
