//! The weighted-Chebyshev weighting subproblem
//!
//! ```text
//! min_{λ ∈ Δ_S}  q(λ) = (r⊙λ)ᵀ G (r⊙λ) − u λᵀ(r⊙Φ)
//! ```
//!
//! with `G = ∇̂Φᵀ∇̂Φ`. The Gram matrix stands in for `KᵀK`, so the matrix
//! square root is never formed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::simplex::project_simplex;
use crate::domain::{Preference, SimplexWeights};
use crate::error::{MoblError, Result};
use crate::linalg::{dot, norm_sq};

pub const DEFAULT_WC_TOL: f64 = 1e-10;
pub const DEFAULT_WC_MAX_ITERS: usize = 10_000;

const POWER_ITERS: usize = 20;
const POLISH_EVERY: usize = 10;

/// Data of one subproblem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct WcSubproblem {
    gram: Vec<Vec<f64>>,
    phi: Vec<f64>,
    r: Vec<f64>,
    u: f64,
}

impl WcSubproblem {
    pub fn new(gram: Vec<Vec<f64>>, phi: Vec<f64>, r: &Preference, u: f64) -> Result<Self> {
        Self::build(gram, phi, r.as_slice().to_vec(), u)
    }

    /// Plain min-norm problem `min_λ ‖∇̂Φ λ‖²`: unit weights and `u = 0`.
    pub fn min_norm(gram: Vec<Vec<f64>>) -> Result<Self> {
        let s = gram.len();
        Self::build(gram, vec![0.0; s], vec![1.0; s], 0.0)
    }

    fn build(gram: Vec<Vec<f64>>, phi: Vec<f64>, r: Vec<f64>, u: f64) -> Result<Self> {
        let s = r.len();
        if s == 0 {
            return Err(MoblError::InvalidProblem(
                "subproblem has no objectives".into(),
            ));
        }
        if gram.len() != s || gram.iter().any(|row| row.len() != s) || phi.len() != s {
            return Err(MoblError::InvalidProblem(format!(
                "subproblem dimensions disagree with S = {s}"
            )));
        }
        if !(u >= 0.0) || !u.is_finite() {
            return Err(MoblError::Configuration(format!(
                "trade-off u must be nonnegative, got {u}"
            )));
        }
        if gram.iter().flatten().chain(&phi).any(|v| !v.is_finite()) {
            return Err(MoblError::InvalidProblem(
                "non-finite subproblem data".into(),
            ));
        }
        let scale = gram
            .iter()
            .enumerate()
            .map(|(i, row)| row[i].abs())
            .fold(1.0_f64, f64::max);
        for i in 0..s {
            for j in 0..i {
                if (gram[i][j] - gram[j][i]).abs() > 1e-10 * scale {
                    return Err(MoblError::InvalidProblem(format!(
                        "gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let m = DMatrix::from_fn(s, s, |i, j| gram[i][j]);
        let min_eig = SymmetricEigen::new(m).eigenvalues.min();
        if min_eig < -1e-10 * scale {
            return Err(MoblError::InvalidProblem(format!(
                "gram matrix is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { gram, phi, r, u })
    }

    pub fn num_objectives(&self) -> usize {
        self.phi.len()
    }

    /// Scaling applied to `λ` inside the quadratic and alignment terms.
    pub fn weights(&self) -> &[f64] {
        &self.r
    }

    /// `M = diag(r) G diag(r)` and `c = r ⊙ Φ`.
    fn scaled(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let r = &self.r;
        let m = self
            .gram
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, g)| r[i] * g * r[j])
                    .collect()
            })
            .collect();
        let c = self.phi.iter().zip(r).map(|(p, r)| p * r).collect();
        (m, c)
    }

    /// Objective `q(λ)`.
    pub fn objective(&self, lambda: &[f64]) -> f64 {
        let (m, c) = self.scaled();
        Objective {
            m: &m,
            c: &c,
            u: self.u,
        }
        .value(lambda)
    }

    /// `∇q(λ) = 2 M λ − u c`.
    pub fn gradient(&self, lambda: &[f64]) -> Vec<f64> {
        let (m, c) = self.scaled();
        Objective {
            m: &m,
            c: &c,
            u: self.u,
        }
        .gradient(lambda)
    }

    /// KKT residual `max_{λ_i>0} ∇q_i − min_i ∇q_i`: zero exactly when the
    /// gradient is constant on the support and no larger off it.
    pub fn kkt_residual(&self, lambda: &[f64]) -> f64 {
        kkt_residual(lambda, &self.gradient(lambda))
    }
}

struct Objective<'a> {
    m: &'a [Vec<f64>],
    c: &'a [f64],
    u: f64,
}

impl Objective<'_> {
    fn mul(&self, l: &[f64]) -> Vec<f64> {
        self.m
            .iter()
            .map(|row| row.iter().zip(l).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn value(&self, l: &[f64]) -> f64 {
        let ml = self.mul(l);
        l.iter()
            .zip(&ml)
            .zip(self.c)
            .map(|((li, mi), ci)| li * mi - self.u * ci * li)
            .sum()
    }

    fn gradient(&self, l: &[f64]) -> Vec<f64> {
        self.mul(l)
            .iter()
            .zip(self.c)
            .map(|(mi, ci)| 2.0 * mi - self.u * ci)
            .collect()
    }

    fn lambda_max(&self) -> f64 {
        let s = self.c.len();
        let mut v = vec![1.0 / (s as f64).sqrt(); s];
        let mut est = 0.0_f64;
        for _ in 0..POWER_ITERS {
            let w = self.mul(&v);
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                break;
            }
            est = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            v = w.into_iter().map(|x| x / n).collect();
        }
        let diag = (0..s).map(|i| self.m[i][i]).fold(0.0_f64, f64::max);
        est.max(diag)
    }

    /// Exact minimiser of `q` on the affine hull of the face `support`, or
    /// `None` when the KKT system is singular or the point leaves the simplex.
    fn polish(&self, support: &[usize], s: usize) -> Option<Vec<f64>> {
        let n = support.len();
        let mut kkt = DMatrix::zeros(n + 1, n + 1);
        let mut rhs = DVector::zeros(n + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = 2.0 * self.m[i][j];
            }
            kkt[(a, n)] = -1.0;
            kkt[(n, a)] = 1.0;
            rhs[a] = self.u * self.c[i];
        }
        rhs[n] = 1.0;
        let sol = kkt.lu().solve(&rhs)?;
        let mut out = vec![0.0; s];
        for (a, &i) in support.iter().enumerate() {
            if !sol[a].is_finite() || sol[a] < 0.0 {
                return None;
            }
            out[i] = sol[a];
        }
        let total: f64 = out.iter().sum();
        if total <= 0.0 {
            return None;
        }
        out.iter_mut().for_each(|v| *v /= total);
        Some(out)
    }
}

/// Slack for accepting an exact face solution whose objective differs from
/// the current one only by rounding.
fn rounding(value: f64) -> f64 {
    1e-14 * (1.0 + value.abs())
}

fn kkt_residual(lambda: &[f64], grad: &[f64]) -> f64 {
    let support_max = lambda
        .iter()
        .zip(grad)
        .filter(|(l, _)| **l > 0.0)
        .map(|(_, g)| *g)
        .fold(f64::NEG_INFINITY, f64::max);
    let overall_min = grad.iter().copied().fold(f64::INFINITY, f64::min);
    (support_max - overall_min).max(0.0)
}

/// Output of [`WcSolver::solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct WcSolution {
    pub lambda: SimplexWeights,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Objective after each accepted iterate, when history is requested.
    pub objective_history: Vec<f64>,
}

/// Projected-gradient solver for [`WcSubproblem`], warm-started and finished
/// by an exact solve on the identified face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WcSolver {
    pub tol: f64,
    pub max_iters: usize,
    pub record_history: bool,
}

impl Default for WcSolver {
    fn default() -> Self {
        Self {
            tol: DEFAULT_WC_TOL,
            max_iters: DEFAULT_WC_MAX_ITERS,
            record_history: false,
        }
    }
}

impl WcSolver {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        Self {
            tol,
            max_iters,
            record_history: false,
        }
    }

    pub fn with_history(mut self) -> Self {
        self.record_history = true;
        self
    }

    pub fn solve(&self, sp: &WcSubproblem, warm: Option<&SimplexWeights>) -> Result<WcSolution> {
        if !(self.tol > 0.0) {
            return Err(MoblError::Configuration(
                "WC tolerance must be positive".into(),
            ));
        }
        let s = sp.num_objectives();
        let (m, c) = sp.scaled();
        let obj = Objective {
            m: &m,
            c: &c,
            u: sp.u,
        };

        let mut lambda = match warm {
            Some(w) if w.len() == s => project_simplex(w.as_slice()).into_vec(),
            _ => vec![1.0 / s as f64; s],
        };
        let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut step = 1.0 / (2.0 * obj.lambda_max() + sp.u * c_norm + 1e-12);
        let max_step = step * 1e12;
        let mut grew = true;

        let mut value = obj.value(&lambda);
        let mut history = Vec::new();
        if self.record_history {
            history.push(value);
        }
        let mut grad = obj.gradient(&lambda);
        let mut residual = kkt_residual(&lambda, &grad);
        let mut iterations = 0;

        while residual > self.tol && iterations < self.max_iters {
            if iterations % POLISH_EVERY == 0 {
                let support: Vec<usize> = (0..s).filter(|&i| lambda[i] > 0.0).collect();
                if let Some(cand) = obj.polish(&support, s) {
                    let cv = obj.value(&cand);
                    let cg = obj.gradient(&cand);
                    let cr = kkt_residual(&cand, &cg);
                    if cv <= value + rounding(value) && cr < residual {
                        lambda = cand;
                        value = cv.min(value);
                        grad = cg;
                        residual = cr;
                        if self.record_history {
                            history.push(value);
                        }
                        if residual <= self.tol {
                            break;
                        }
                    }
                }
            }

            iterations += 1;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = lambda
                    .iter()
                    .zip(&grad)
                    .map(|(l, g)| l - step * g)
                    .collect();
                let cand = project_simplex(&trial).into_vec();
                // sufficient decrease, q(λ+Δ) ≤ q(λ) + ∇qᵀΔ + ‖Δ‖²/(2·step),
                // is ΔᵀMΔ ≤ ‖Δ‖²/(2·step) for a quadratic; comparing objective
                // values instead stalls once they reach rounding level
                let delta: Vec<f64> = cand.iter().zip(&lambda).map(|(a, b)| a - b).collect();
                let curvature = dot(&delta, &obj.mul(&delta));
                if curvature <= norm_sq(&delta) / (2.0 * step) {
                    lambda = cand;
                    value = obj.value(&lambda);
                    accepted = true;
                    break;
                }
                step *= 0.5;
                grew = false;
            }
            if !accepted {
                break;
            }
            // the linear term inflates the initial step bound, so let the
            // step grow back while it keeps being accepted
            if grew {
                step = (step * 2.0).min(max_step);
            }
            grew = true;
            if self.record_history {
                history.push(value);
            }
            grad = obj.gradient(&lambda);
            residual = kkt_residual(&lambda, &grad);
        }

        if residual > self.tol {
            // one last exact attempt on the final face
            let support: Vec<usize> = (0..s).filter(|&i| lambda[i] > 0.0).collect();
            if let Some(cand) = obj.polish(&support, s) {
                let cv = obj.value(&cand);
                let cr = kkt_residual(&cand, &obj.gradient(&cand));
                if cv <= value + rounding(value) && cr < residual {
                    lambda = cand;
                    residual = cr;
                    if self.record_history {
                        history.push(cv.min(value));
                    }
                }
            }
        }

        let lambda = SimplexWeights::from_vec_unchecked(lambda);
        if residual > self.tol {
            return Err(MoblError::NonConvergence {
                best: lambda,
                residual,
            });
        }
        Ok(WcSolution {
            lambda,
            kkt_residual: residual,
            iterations,
            objective_history: history,
        })
    }
}

/// Solves the subproblem with the default solver settings.
pub fn solve_wc_subproblem(
    sp: &WcSubproblem,
    tol: f64,
    max_iters: usize,
) -> Result<(SimplexWeights, f64)> {
    let sol = WcSolver::new(tol, max_iters).solve(sp, None)?;
    Ok((sol.lambda, sol.kkt_residual))
}
