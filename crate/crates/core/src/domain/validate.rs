use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::oracles::{DeterministicOracles, SolverRng};
use crate::error::{MoblError, Result};
use crate::linalg::{dot, norm};

/// Relative residual above which a property is flagged.
pub const VALIDATION_TOL: f64 = 1e-8;

/// Numerical evidence that a problem satisfies the lower-level assumptions at
/// one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `max |⟨u,Hv⟩ − ⟨v,Hu⟩|`, relative.
    pub symmetry_residual: f64,
    pub hvp_linearity_residual: f64,
    pub jvp_linearity_residual: f64,
    /// Smallest `⟨v,Hv⟩/‖v‖²` over the probes; an upper bound on `λ_min`.
    pub min_rayleigh: f64,
    pub probes: usize,
}

impl ValidationReport {
    /// Names of the checks that fail at `tol`.
    pub fn flagged(&self, tol: f64) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.symmetry_residual <= tol) {
            out.push("hvp_symmetry");
        }
        if !(self.hvp_linearity_residual <= tol) {
            out.push("hvp_linearity");
        }
        if !(self.jvp_linearity_residual <= tol) {
            out.push("jvp_linearity");
        }
        if !(self.min_rayleigh > 0.0) {
            out.push("hvp_positive_definite");
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.flagged(VALIDATION_TOL).is_empty()
    }
}

fn rel(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den.max(f64::MIN_POSITIVE)
    }
}

/// Probes the Hessian- and Jacobian-vector oracles at `(x, y)` with random
/// Gaussian directions.
pub fn validate_problem<P: DeterministicOracles + ?Sized>(
    problem: &P,
    x: &[f64],
    y: &[f64],
    probes: usize,
    seed: u64,
) -> Result<ValidationReport> {
    let dims = problem.dims();
    if x.len() != dims.p || y.len() != dims.q {
        return Err(MoblError::InvalidProblem(format!(
            "point has dims ({}, {}), problem expects ({}, {})",
            x.len(),
            y.len(),
            dims.p,
            dims.q
        )));
    }
    let check = |what: &str, got: usize, want: usize| {
        if got != want {
            Err(MoblError::InvalidProblem(format!(
                "{what} returned length {got}, expected {want}"
            )))
        } else {
            Ok(())
        }
    };
    check("ll_grad_y", problem.ll_grad_y(x, y).len(), dims.q)?;
    for s in 0..dims.s {
        check("ul_grad_x", problem.ul_grad_x(s, x, y).len(), dims.p)?;
        check("ul_grad_y", problem.ul_grad_y(s, x, y).len(), dims.q)?;
    }

    let mut rng = SolverRng::seed_from_u64(seed);
    let mut gauss =
        |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };

    let mut report = ValidationReport {
        symmetry_residual: 0.0,
        hvp_linearity_residual: 0.0,
        jvp_linearity_residual: 0.0,
        min_rayleigh: f64::INFINITY,
        probes,
    };
    for _ in 0..probes {
        let u = gauss(dims.q);
        let v = gauss(dims.q);
        let hu = problem.ll_hvp(x, y, &u);
        let hv = problem.ll_hvp(x, y, &v);
        check("ll_hvp", hu.len(), dims.q)?;

        let sym = (dot(&u, &hv) - dot(&v, &hu)).abs();
        let scale = (norm(&u) * norm(&hv)).max(norm(&v) * norm(&hu));
        report.symmetry_residual = report.symmetry_residual.max(rel(sym, scale));

        for (w, hw) in [(&u, &hu), (&v, &hv)] {
            let q = dot(w, hw) / dot(w, w);
            report.min_rayleigh = report.min_rayleigh.min(q);
        }

        let (a, b) = (1.7, -0.6);
        let mix: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + b * q).collect();
        let h_mix = problem.ll_hvp(x, y, &mix);
        let diff: f64 = h_mix
            .iter()
            .zip(hu.iter().zip(&hv))
            .map(|(m, (p, q))| (m - (a * p + b * q)).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = a.abs() * norm(&hu) + b.abs() * norm(&hv);
        report.hvp_linearity_residual = report.hvp_linearity_residual.max(rel(diff, scale));

        let ju = problem.ll_jvp(x, y, &u);
        let jv = problem.ll_jvp(x, y, &v);
        check("ll_jvp", ju.len(), dims.p)?;
        let j_mix = problem.ll_jvp(x, y, &mix);
        let diff: f64 = j_mix
            .iter()
            .zip(ju.iter().zip(&jv))
            .map(|(m, (p, q))| (m - (a * p + b * q)).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = a.abs() * norm(&ju) + b.abs() * norm(&jv);
        report.jvp_linearity_residual = report.jvp_linearity_residual.max(rel(diff, scale));
    }
    Ok(report)
}
