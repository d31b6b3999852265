use serde::{Deserialize, Serialize};

use crate::error::{MoblError, Result};

/// Smoothness metadata of a problem. Only `mu_g` is mandatory; the rest feed
/// default step sizes and are never needed for correctness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Strong-convexity modulus of `g(x, ·)`.
    pub mu_g: f64,
    /// Common Lipschitz constant of `∇f^(s)` and `∇g`.
    pub l: Option<f64>,
    /// Lipschitz constant of `f^(s)`.
    pub m: Option<f64>,
    /// Lipschitz constant of `∇²_{xy} g`.
    pub tau: Option<f64>,
    /// Lipschitz constant of `∇²_y g`.
    pub rho: Option<f64>,
}

impl ProblemConstants {
    pub fn new(mu_g: f64) -> Result<Self> {
        let c = Self {
            mu_g,
            l: None,
            m: None,
            tau: None,
            rho: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_g > 0.0) || !self.mu_g.is_finite() {
            return Err(MoblError::Configuration(format!(
                "mu_g must be positive, got {}",
                self.mu_g
            )));
        }
        if let Some(l) = self.l {
            if !(l >= self.mu_g) {
                return Err(MoblError::Configuration(format!(
                    "L = {l} must be at least mu_g = {}",
                    self.mu_g
                )));
            }
        }
        Ok(())
    }

    fn require_l(&self) -> Result<f64> {
        self.l
            .ok_or_else(|| MoblError::Configuration("smoothness constant L is unknown".into()))
    }

    /// Condition number `κ = L / μ_g`.
    pub fn kappa(&self) -> Result<f64> {
        Ok(self.require_l()? / self.mu_g)
    }

    /// Smoothness constant of every `φ_s`:
    /// `L + (2L² + τM²)/μ + (ρLM + L³ + τLM)/μ² + ρL²M/μ³`.
    ///
    /// `M` may be omitted only when `τ = ρ = 0`.
    pub fn lipschitz_phi(&self) -> Result<f64> {
        let l = self.require_l()?;
        let mu = self.mu_g;
        let (tau, rho) = match (self.tau, self.rho) {
            (Some(t), Some(r)) => (t, r),
            _ => {
                return Err(MoblError::Configuration(
                    "tau and rho are required to compute L_phi".into(),
                ))
            }
        };
        let m = match self.m {
            Some(m) => m,
            None if tau == 0.0 && rho == 0.0 => 0.0,
            None => {
                return Err(MoblError::Configuration(
                    "M is required to compute L_phi when tau or rho is nonzero".into(),
                ))
            }
        };
        Ok(l + (2.0 * l * l + tau * m * m) / mu
            + (rho * l * m + l.powi(3) + tau * l * m) / (mu * mu)
            + rho * l * l * m / mu.powi(3))
    }

    /// Deterministic UL step `β = min{1/(2(1+L_φ) r_max), 1/(3 L_φ)}`.
    pub fn ul_step(&self, r_max: f64) -> Result<f64> {
        let lphi = self.lipschitz_phi()?;
        Ok((1.0 / (2.0 * (1.0 + lphi) * r_max)).min(1.0 / (3.0 * lphi)))
    }
}

/// Step sizes `(α, β, η)`. There are no built-in defaults: either pass them
/// explicitly or derive them from [`ProblemConstants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
}

impl StepSizes {
    /// `α = 1/L`, `β` from [`ProblemConstants::ul_step`], `η = 1/L`.
    pub fn from_constants(c: &ProblemConstants, r_max: f64) -> Result<Self> {
        let l = c.require_l()?;
        Ok(Self {
            alpha: 1.0 / l,
            beta: c.ul_step(r_max)?,
            eta: 1.0 / l,
        })
    }

    /// As [`StepSizes::from_constants`] but with the stochastic LL step
    /// `α = 2/(L + μ_g)`.
    pub fn stochastic_from_constants(c: &ProblemConstants, r_max: f64) -> Result<Self> {
        let l = c.require_l()?;
        Ok(Self {
            alpha: 2.0 / (l + c.mu_g),
            beta: c.ul_step(r_max)?,
            eta: 1.0 / l,
        })
    }
}

/// How each per-objective hypergradient is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypergradOption {
    /// `N` conjugate-gradient steps on `∇²_y g v = ∇_y f`.
    Cg,
    /// Neumann series along the inner trajectory.
    Ns,
}

/// Every hyperparameter of the three outer loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// `K`
    pub outer_iters: usize,
    /// `D`
    pub inner_iters: usize,
    /// `N`
    pub cg_iters: usize,
    /// `Q`
    pub neumann_depth: usize,
    /// `α`
    pub ll_step: f64,
    /// `β`
    pub ul_step: f64,
    /// `η`
    pub hvp_step: f64,
    /// `u`
    pub tradeoff: f64,
    pub option: HypergradOption,
    /// `T`
    pub ll_batch: usize,
    /// `D_f`
    pub ul_batch: usize,
    /// `D_g`
    pub jacobian_batch: usize,
    /// `B`
    pub hessian_batch: usize,
    pub seed: u64,
    pub warm_start_y: bool,
    pub warm_start_v: bool,
    /// Early stop once `‖d_k‖² ≤ stop_tol`; zero disables.
    pub stop_tol: f64,
    /// Run CG for exactly `N` steps so counter identities hold.
    pub exact_counters: bool,
    /// Inner CG residual tolerance, honoured only with `exact_counters` off.
    pub cg_tol: f64,
    pub wc_tol: f64,
    pub wc_max_iters: usize,
}

impl SolverConfig {
    /// Deterministic defaults: `(K, D) = (500, 32)`, `u = 10`, NS option.
    pub fn deterministic(steps: StepSizes) -> Self {
        Self {
            outer_iters: 500,
            inner_iters: 32,
            cg_iters: 10,
            neumann_depth: 3,
            ll_step: steps.alpha,
            ul_step: steps.beta,
            hvp_step: steps.eta,
            tradeoff: 10.0,
            option: HypergradOption::Ns,
            ll_batch: 32,
            ul_batch: 32,
            jacobian_batch: 32,
            hessian_batch: 8,
            seed: 0,
            warm_start_y: true,
            warm_start_v: true,
            stop_tol: 0.0,
            exact_counters: true,
            cg_tol: 1e-14,
            wc_tol: 1e-10,
            wc_max_iters: 10_000,
        }
    }

    /// Stochastic defaults: `(K, D) = (150, 200)`, `u = 10`, `Q = 3`.
    pub fn stochastic(steps: StepSizes) -> Self {
        Self {
            outer_iters: 150,
            inner_iters: 200,
            ..Self::deterministic(steps)
        }
    }

    pub fn validate(&self, constants: Option<&ProblemConstants>) -> Result<()> {
        let err = |m: String| Err(MoblError::Configuration(m));
        for (name, v) in [
            ("inner_iters", self.inner_iters),
            ("cg_iters", self.cg_iters),
            ("neumann_depth", self.neumann_depth),
            ("ll_batch", self.ll_batch),
            ("ul_batch", self.ul_batch),
            ("jacobian_batch", self.jacobian_batch),
            ("hessian_batch", self.hessian_batch),
            ("wc_max_iters", self.wc_max_iters),
        ] {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("ll_step", self.ll_step),
            ("ul_step", self.ul_step),
            ("hvp_step", self.hvp_step),
            ("wc_tol", self.wc_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("tradeoff", self.tradeoff),
            ("stop_tol", self.stop_tol),
            ("cg_tol", self.cg_tol),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return err(format!("{name} must be nonnegative and finite, got {v}"));
            }
        }
        let _ = constants;
        Ok(())
    }

    /// Extra checks for the stochastic loop: `B·Q·(1−η μ_g)^{Q−1} ≥ 1`.
    pub fn validate_stochastic(&self, constants: Option<&ProblemConstants>) -> Result<()> {
        self.validate(constants)?;
        if let Some(c) = constants {
            let smallest = self.hessian_batch as f64
                * self.neumann_depth as f64
                * (1.0 - self.hvp_step * c.mu_g).powi(self.neumann_depth as i32 - 1);
            if !(smallest >= 1.0) {
                return Err(MoblError::Configuration(format!(
                    "hessian_batch * neumann_depth * (1 - hvp_step*mu_g)^(Q-1) = {smallest} < 1"
                )));
            }
        }
        Ok(())
    }

    /// CG tolerance actually used by the inner solver.
    pub fn effective_cg_tol(&self) -> f64 {
        if self.exact_counters {
            0.0
        } else {
            self.cg_tol
        }
    }
}

/// Sizes `|B_1|, …, |B_Q|` with `|B_{Q+1−j}| = ⌈B·Q·(1−η μ_g)^{j−1}⌉`, floored at 1.
///
/// Without a known `μ_g` every batch gets `B·Q`.
pub fn hessian_batch_sizes(b: usize, q: usize, eta: f64, mu_g: Option<f64>) -> Vec<usize> {
    let base = (b * q) as f64;
    let shrink = mu_g.map_or(1.0, |mu| 1.0 - eta * mu);
    (1..=q)
        .map(|i| {
            // i = Q + 1 − j  ⇒  j − 1 = Q − i
            let size = base * shrink.powi((q - i) as i32);
            (size.ceil() as usize).max(1)
        })
        .collect()
}
