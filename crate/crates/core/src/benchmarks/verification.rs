use std::sync::atomic::{AtomicU64, Ordering};

use crate::domain::{
    AnalyticReference, Batch, BatchPurpose, DeterministicOracles, Dims, OracleCounters,
    SimplexWeights, SolverRng, StochasticOracles,
};
use crate::error::{MoblError, Result};
use crate::linalg::{axpy, combine, norm, norm_sq};

/// Iteration cap of each lower-level solve inside [`finite_diff_hypergrad`].
pub const FD_MAX_LL_ITERS: usize = 1_000_000;

/// Central finite difference of `φ_s` at `x`. Each `φ_s(x ± h e_i)` solves
/// the lower level by gradient descent with step `ll_step` until
/// `‖∇_y g‖ ≤ ll_tol`, warm-started from the solution at `x`.
pub fn finite_diff_hypergrad<P: DeterministicOracles + ?Sized>(
    problem: &P,
    x: &[f64],
    s: usize,
    h: f64,
    ll_tol: f64,
    ll_step: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(MoblError::Configuration(format!(
            "step h must be positive, got {h}"
        )));
    }
    let dims = problem.dims();
    let centre = solve_lower(problem, x, &vec![0.0; dims.q], ll_tol, ll_step)?;
    let mut out = Vec::with_capacity(dims.p);
    let mut xp = x.to_vec();
    for i in 0..dims.p {
        xp[i] = x[i] + h;
        let yp = solve_lower(problem, &xp, &centre, ll_tol, ll_step)?;
        let fp = problem.ul_value(s, &xp, &yp);
        xp[i] = x[i] - h;
        let ym = solve_lower(problem, &xp, &centre, ll_tol, ll_step)?;
        let fm = problem.ul_value(s, &xp, &ym);
        xp[i] = x[i];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

fn solve_lower<P: DeterministicOracles + ?Sized>(
    problem: &P,
    x: &[f64],
    y0: &[f64],
    tol: f64,
    step: f64,
) -> Result<Vec<f64>> {
    let mut y = y0.to_vec();
    for _ in 0..FD_MAX_LL_ITERS {
        let g = problem.ll_grad_y(x, &y);
        let gn = norm(&g);
        if !gn.is_finite() {
            return Err(MoblError::OracleFailure(
                "lower-level gradient is not finite".into(),
            ));
        }
        if gn <= tol {
            return Ok(y);
        }
        axpy(-step, &g, &mut y);
    }
    Err(MoblError::OracleFailure(format!(
        "lower-level solve did not reach ‖∇g‖ ≤ {tol:e} in {FD_MAX_LL_ITERS} steps"
    )))
}

/// Grid search for `argmin_λ ‖Σ_s λ_s v_s‖²` over the simplex at spacing
/// `resolution`, for at most three columns.
///
/// For `S = 3` each grid line `λ₁ = const` is a convex one-dimensional problem,
/// so only the two grid points bracketing its continuous minimiser are
/// evaluated. This returns the same point as full enumeration.
pub fn brute_force_min_norm(columns: &[Vec<f64>], resolution: f64) -> Result<SimplexWeights> {
    let s = columns.len();
    if s == 0 || s > 3 {
        return Err(MoblError::Unsupported(format!(
            "grid enumeration supports 1 to 3 columns, got {s}"
        )));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(MoblError::Configuration(format!(
            "grid resolution must lie in (0, 1], got {resolution}"
        )));
    }
    let g: Vec<Vec<f64>> = columns
        .iter()
        .map(|a| columns.iter().map(|b| crate::linalg::dot(a, b)).collect())
        .collect();
    let quad = |l: &[f64]| -> f64 {
        (0..s)
            .map(|i| (0..s).map(|j| l[i] * g[i][j] * l[j]).sum::<f64>())
            .sum()
    };
    brute_force_simplex(s, resolution, quad, |fixed, m| {
        // minimiser of λᵀGλ along λ = (fixed, t, m − t)
        let (a, b) = (fixed, m);
        let g = &g;
        let c1 = g[1][1] - 2.0 * g[1][2] + g[2][2];
        let c0 = a * (g[0][1] - g[0][2]) + b * (g[1][2] - g[2][2]);
        if c1 > 0.0 {
            -c0 / c1
        } else if c0 > 0.0 {
            0.0
        } else {
            b
        }
    })
}

/// Grid minimiser of a convex function on the simplex (`S ≤ 3`).
///
/// `line_argmin(λ₁, m)` returns the continuous minimiser `t` of the function
/// along `(λ₁, t, m − t)`; it is only used for `S = 3`.
pub fn brute_force_simplex<F, L>(
    s: usize,
    resolution: f64,
    f: F,
    line_argmin: L,
) -> Result<SimplexWeights>
where
    F: Fn(&[f64]) -> f64,
    L: Fn(f64, f64) -> f64,
{
    let steps = (1.0 / resolution).round() as usize;
    let at = |i: usize| i as f64 / steps as f64;
    let mut best = (f64::INFINITY, vec![1.0; s.min(1)]);
    let mut consider = |l: Vec<f64>| {
        let v = f(&l);
        if v < best.0 {
            best = (v, l);
        }
    };
    match s {
        1 => consider(vec![1.0]),
        2 => (0..=steps).for_each(|i| consider(vec![at(i), 1.0 - at(i)])),
        3 => {
            for i in 0..=steps {
                let rest = steps - i;
                let m = at(rest);
                let t = line_argmin(at(i), m).clamp(0.0, m);
                let lo = ((t * steps as f64).floor() as usize).min(rest);
                for j in [lo, (lo + 1).min(rest)] {
                    consider(vec![at(i), at(j), 1.0 - at(i) - at(j)]);
                }
            }
        }
        _ => {
            return Err(MoblError::Unsupported(format!(
                "grid enumeration supports 1 to 3 coordinates, got {s}"
            )))
        }
    }
    let mut l = best.1;
    l.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = l.iter().sum();
    l.iter_mut().for_each(|v| *v /= total);
    SimplexWeights::new(l)
}

/// `‖Σ_s λ_s ∇φ_s(x)‖²` over the grid minimiser of true hypergradients.
pub fn true_min_norm_sq(
    reference: &dyn AnalyticReference,
    s: usize,
    x: &[f64],
    resolution: f64,
) -> Result<f64> {
    let cols: Vec<Vec<f64>> = (0..s).map(|i| reference.true_hypergradient(i, x)).collect();
    let l = brute_force_min_norm(&cols, resolution)?;
    Ok(norm_sq(&combine(&cols, l.as_slice())))
}

/// Wraps oracles and counts every gradient, Jacobian- and Hessian-vector
/// evaluation. Safe to share across threads.
#[derive(Debug, Default)]
pub struct CountingOracles<P> {
    pub inner: P,
    gc_f: AtomicU64,
    gc_g: AtomicU64,
    jv_g: AtomicU64,
    hv_g: AtomicU64,
}

impl<P> CountingOracles<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            gc_f: AtomicU64::new(0),
            gc_g: AtomicU64::new(0),
            jv_g: AtomicU64::new(0),
            hv_g: AtomicU64::new(0),
        }
    }

    pub fn counts(&self) -> OracleCounters {
        OracleCounters {
            gc_f: self.gc_f.load(Ordering::Relaxed),
            gc_g: self.gc_g.load(Ordering::Relaxed),
            jv_g: self.jv_g.load(Ordering::Relaxed),
            hv_g: self.hv_g.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        for c in [&self.gc_f, &self.gc_g, &self.jv_g, &self.hv_g] {
            c.store(0, Ordering::Relaxed);
        }
    }

    fn bump(c: &AtomicU64) {
        c.fetch_add(1, Ordering::Relaxed);
    }
}

impl<P: DeterministicOracles> DeterministicOracles for CountingOracles<P> {
    fn dims(&self) -> Dims {
        self.inner.dims()
    }
    fn ul_value(&self, s: usize, x: &[f64], y: &[f64]) -> f64 {
        self.inner.ul_value(s, x, y)
    }
    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        Self::bump(&self.gc_f);
        self.inner.ul_grad_x(s, x, y)
    }
    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        Self::bump(&self.gc_f);
        self.inner.ul_grad_y(s, x, y)
    }
    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        Self::bump(&self.gc_g);
        self.inner.ll_grad_y(x, y)
    }
    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        Self::bump(&self.hv_g);
        self.inner.ll_hvp(x, y, v)
    }
    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        Self::bump(&self.jv_g);
        self.inner.ll_jvp(x, y, v)
    }
    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        self.inner.analytic()
    }
}

impl<P: StochasticOracles> StochasticOracles for CountingOracles<P> {
    fn dims(&self) -> Dims {
        self.inner.dims()
    }
    fn sample_batch(&self, purpose: BatchPurpose, size: usize, rng: &mut SolverRng) -> Batch {
        self.inner.sample_batch(purpose, size, rng)
    }
    fn ul_value(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> f64 {
        self.inner.ul_value(s, x, y, b)
    }
    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        Self::bump(&self.gc_f);
        self.inner.ul_grad_x(s, x, y, b)
    }
    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        Self::bump(&self.gc_f);
        self.inner.ul_grad_y(s, x, y, b)
    }
    fn ll_grad_y(&self, x: &[f64], y: &[f64], b: &Batch) -> Vec<f64> {
        Self::bump(&self.gc_g);
        self.inner.ll_grad_y(x, y, b)
    }
    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64], b: &Batch) -> Vec<f64> {
        Self::bump(&self.hv_g);
        self.inner.ll_hvp(x, y, v, b)
    }
    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64], b: &Batch) -> Vec<f64> {
        Self::bump(&self.jv_g);
        self.inner.ll_jvp(x, y, v, b)
    }
    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        self.inner.analytic()
    }
}
