use crate::error::{MoblError, Result};
use crate::linalg::{axpy, dot};

/// Result of [`conjugate_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    /// CG steps taken (each costs one operator application).
    pub iterations: usize,
    /// Operator applications, including the initial residual when `v0 ≠ 0`.
    pub products: usize,
    /// Norm of the recurrence residual `b − A v`.
    pub residual_norm: f64,
}

/// Hestenes–Stiefel conjugate gradient for an SPD operator, started at `v0`
/// and run for at most `max_iters` steps or until `‖r‖ ≤ tol`.
///
/// A zero `v0` skips the initial operator application (`r₀ = b`).
pub fn conjugate_gradient<A>(
    mut apply_a: A,
    b: &[f64],
    v0: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<CgOutcome>
where
    A: FnMut(&[f64]) -> Vec<f64>,
{
    debug_assert_eq!(b.len(), v0.len());
    let mut v = v0.to_vec();
    let mut products = 0;
    let mut r = if v0.iter().all(|x| *x == 0.0) {
        b.to_vec()
    } else {
        products += 1;
        let av = apply_a(&v);
        b.iter().zip(&av).map(|(bi, ai)| bi - ai).collect()
    };
    let mut rr = dot(&r, &r);
    if !rr.is_finite() {
        return Err(MoblError::NumericalBreakdown {
            iteration: 0,
            reason: "initial residual is not finite".into(),
        });
    }
    if rr.sqrt() <= tol {
        return Ok(CgOutcome {
            solution: v,
            iterations: 0,
            products,
            residual_norm: rr.sqrt(),
        });
    }

    let mut p = r.clone();
    let mut iterations = 0;
    for it in 1..=max_iters {
        let ap = apply_a(&p);
        products += 1;
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(MoblError::NumericalBreakdown {
                iteration: it,
                reason: format!("curvature pᵀAp = {pap} is not positive"),
            });
        }
        let step = rr / pap;
        axpy(step, &p, &mut v);
        axpy(-step, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() || !step.is_finite() {
            return Err(MoblError::NumericalBreakdown {
                iteration: it,
                reason: "iterate is not finite".into(),
            });
        }
        iterations = it;
        if rr_new == 0.0 || rr_new.sqrt() <= tol {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(CgOutcome {
        solution: v,
        iterations,
        products,
        residual_norm: rr.sqrt(),
    })
}
