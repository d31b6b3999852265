use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{AnalyticReference, DeterministicOracles, Dims, ProblemConstants, SolverRng};
use crate::error::{MoblError, Result};
use crate::linalg::{dot, norm_sq, sub};

/// Quadratic bilevel family
///
/// ```text
/// g(x, y)     = ½ yᵀA y − yᵀB x
/// f^(s)(x, y) = ½‖x − a_s‖² + ½‖y − c_s‖²
/// ```
///
/// so that `y*(x) = A⁻¹B x` and every `φ_s` is an explicit quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBilevelSpec {
    pub p: usize,
    pub q: usize,
    pub s: usize,
    /// `q×q`, row-major.
    pub a: Vec<Vec<f64>>,
    /// `q×p`, row-major.
    pub bm: Vec<Vec<f64>>,
    /// UL targets `a_s ∈ R^p`.
    pub a_targets: Vec<Vec<f64>>,
    /// LL-side targets `c_s ∈ R^q`.
    pub c_targets: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Knobs of the seeded generator behind [`QuadraticBilevelSpec::random_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticShape {
    /// `A = s² MᵀM + shift·I` with `M` having `N(0, 1/q)` entries.
    pub m_scale: f64,
    pub shift: f64,
    /// `B` has `N(0, coupling²/p)` entries.
    pub coupling: f64,
    /// Targets have `N(0, target_scale²)` entries.
    pub target_scale: f64,
}

impl Default for QuadraticShape {
    fn default() -> Self {
        Self {
            m_scale: 1.0,
            shift: 0.5,
            coupling: 1.0,
            target_scale: 1.0,
        }
    }
}

impl QuadraticBilevelSpec {
    /// Seeded instance with the default [`QuadraticShape`].
    pub fn random(p: usize, q: usize, s: usize, seed: u64) -> Self {
        Self::random_with(p, q, s, seed, QuadraticShape::default())
    }

    pub fn random_with(p: usize, q: usize, s: usize, seed: u64, shape: QuadraticShape) -> Self {
        let mut rng = SolverRng::seed_from_u64(seed);
        let mut gauss = |n: usize, sd: f64| -> Vec<f64> {
            (0..n)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let m: Vec<Vec<f64>> = (0..q).map(|_| gauss(q, 1.0 / (q as f64).sqrt())).collect();
        let bm: Vec<Vec<f64>> = (0..q)
            .map(|_| gauss(p, shape.coupling / (p as f64).sqrt()))
            .collect();
        let a_targets = (0..s).map(|_| gauss(p, shape.target_scale)).collect();
        let c_targets = (0..s).map(|_| gauss(q, shape.target_scale)).collect();
        let k2 = shape.m_scale * shape.m_scale;
        let a = (0..q)
            .map(|i| {
                (0..q)
                    .map(|j| {
                        let mtm: f64 = (0..q).map(|r| m[r][i] * m[r][j]).sum();
                        k2 * mtm + if i == j { shape.shift } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        Self {
            p,
            q,
            s,
            a,
            bm,
            a_targets,
            c_targets,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(MoblError::InvalidProblem(m));
        if self.p == 0 || self.q == 0 || self.s == 0 {
            return bad("p, q and S must all be positive".into());
        }
        if self.a.len() != self.q || self.a.iter().any(|r| r.len() != self.q) {
            return bad(format!("A must be {q}x{q}", q = self.q));
        }
        if self.bm.len() != self.q || self.bm.iter().any(|r| r.len() != self.p) {
            return bad(format!("Bm must be {}x{}", self.q, self.p));
        }
        if self.a_targets.len() != self.s || self.a_targets.iter().any(|t| t.len() != self.p) {
            return bad(format!(
                "a_targets must hold {} vectors of length {}",
                self.s, self.p
            ));
        }
        if self.c_targets.len() != self.s || self.c_targets.iter().any(|t| t.len() != self.q) {
            return bad(format!(
                "c_targets must hold {} vectors of length {}",
                self.s, self.q
            ));
        }
        let all = self
            .a
            .iter()
            .chain(&self.bm)
            .chain(&self.a_targets)
            .chain(&self.c_targets)
            .flatten();
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("spec contains non-finite entries".into());
        }
        Ok(())
    }
}

/// Oracles and closed forms of a [`QuadraticBilevelSpec`].
#[derive(Debug, Clone)]
pub struct QuadraticBilevel {
    dims: Dims,
    a: Vec<Vec<f64>>,
    bm: Vec<Vec<f64>>,
    /// `P = A⁻¹B`, `q×p`.
    implicit: Vec<Vec<f64>>,
    a_targets: Vec<Vec<f64>>,
    c_targets: Vec<Vec<f64>>,
    eig_min: f64,
    eig_max: f64,
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn matvec_t(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let cols = m.first().map_or(0, Vec::len);
    let mut out = vec![0.0; cols];
    for (row, vi) in m.iter().zip(v) {
        for (o, r) in out.iter_mut().zip(row) {
            *o += r * vi;
        }
    }
    out
}

/// Builds the oracles and the smoothness constants: `μ_g = λ_min(A)`,
/// `L = max(1, ‖∇²g‖₂)` with `∇²g = [[0, −Bᵀ], [−B, A]]`, and `τ = ρ = 0`.
pub fn make_quadratic(spec: &QuadraticBilevelSpec) -> Result<(QuadraticBilevel, ProblemConstants)> {
    spec.check()?;
    let (p, q) = (spec.p, spec.q);
    let a = to_matrix(&spec.a);
    let scale = spec.a.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..q {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(MoblError::InvalidProblem(format!(
                    "A is not symmetric: A[{i}][{j}] = {} but A[{j}][{i}] = {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let (eig_min, eig_max) = (eig.min(), eig.max());
    if !(eig_min > 0.0) {
        return Err(MoblError::InvalidProblem(format!(
            "A is not positive definite: smallest eigenvalue {eig_min:e}"
        )));
    }
    let b = to_matrix(&spec.bm);
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| MoblError::InvalidProblem("A is not positive definite".into()))?;
    let implicit = chol.solve(&b);

    let mut joint = DMatrix::zeros(p + q, p + q);
    for i in 0..q {
        for j in 0..p {
            joint[(p + i, j)] = -b[(i, j)];
            joint[(j, p + i)] = -b[(i, j)];
        }
        for j in 0..q {
            joint[(p + i, p + j)] = a[(i, j)];
        }
    }
    let joint_norm = SymmetricEigen::new(joint).eigenvalues.amax();
    let constants = ProblemConstants {
        mu_g: eig_min,
        l: Some(joint_norm.max(1.0).max(eig_min)),
        m: None,
        tau: Some(0.0),
        rho: Some(0.0),
    };
    let problem = QuadraticBilevel {
        dims: Dims { p, q, s: spec.s },
        a: spec.a.clone(),
        bm: spec.bm.clone(),
        implicit: to_rows(&implicit),
        a_targets: spec.a_targets.clone(),
        c_targets: spec.c_targets.clone(),
        eig_min,
        eig_max,
    };
    Ok((problem, constants))
}

impl QuadraticBilevel {
    /// `κ(A) = λ_max / λ_min`.
    pub fn condition_number(&self) -> f64 {
        self.eig_max / self.eig_min
    }

    pub fn eigen_bounds(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }

    /// `P = A⁻¹B`, the Jacobian of `y*`.
    pub fn implicit_jacobian(&self) -> &[Vec<f64>] {
        &self.implicit
    }

    /// Hessian `I + PᵀP`, shared by every `φ_s`.
    pub fn phi_hessian(&self) -> Vec<Vec<f64>> {
        let p = self.dims.p;
        (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| {
                        let ptp: f64 = self.implicit.iter().map(|r| r[i] * r[j]).sum();
                        ptp + if i == j { 1.0 } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    }

    /// Minimiser of `Σ_s w_s φ_s`, i.e. `(I + PᵀP)⁻¹ Σ_s w_s (a_s + Pᵀc_s)`.
    ///
    /// For `w` on the simplex this sweeps the Pareto front, since all `φ_s`
    /// share one Hessian.
    pub fn weighted_minimizer(&self, w: &[f64]) -> Vec<f64> {
        let p = self.dims.p;
        let mut rhs = vec![0.0; p];
        for (s, ws) in w.iter().enumerate() {
            let ptc = matvec_t(&self.implicit, &self.c_targets[s]);
            for i in 0..p {
                rhs[i] += ws * (self.a_targets[s][i] + ptc[i]);
            }
        }
        let h = to_matrix(&self.phi_hessian());
        let sol = h
            .cholesky()
            .expect("I + PᵀP is positive definite")
            .solve(&DVector::from_vec(rhs));
        sol.iter().copied().collect()
    }

    pub fn a_targets(&self) -> &[Vec<f64>] {
        &self.a_targets
    }

    pub fn c_targets(&self) -> &[Vec<f64>] {
        &self.c_targets
    }
}

impl DeterministicOracles for QuadraticBilevel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn ul_value(&self, s: usize, x: &[f64], y: &[f64]) -> f64 {
        0.5 * norm_sq(&sub(x, &self.a_targets[s])) + 0.5 * norm_sq(&sub(y, &self.c_targets[s]))
    }

    fn ul_grad_x(&self, s: usize, x: &[f64], _y: &[f64]) -> Vec<f64> {
        sub(x, &self.a_targets[s])
    }

    fn ul_grad_y(&self, s: usize, _x: &[f64], y: &[f64]) -> Vec<f64> {
        sub(y, &self.c_targets[s])
    }

    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        sub(&matvec(&self.a, y), &matvec(&self.bm, x))
    }

    fn ll_hvp(&self, _x: &[f64], _y: &[f64], v: &[f64]) -> Vec<f64> {
        matvec(&self.a, v)
    }

    fn ll_jvp(&self, _x: &[f64], _y: &[f64], v: &[f64]) -> Vec<f64> {
        matvec_t(&self.bm, v).into_iter().map(|t| -t).collect()
    }

    fn analytic(&self) -> Option<&dyn AnalyticReference> {
        Some(self)
    }
}

impl AnalyticReference for QuadraticBilevel {
    fn y_star(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.implicit, x)
    }

    fn phi(&self, s: usize, x: &[f64]) -> f64 {
        self.ul_value(s, x, &self.y_star(x))
    }

    fn true_hypergradient(&self, s: usize, x: &[f64]) -> Vec<f64> {
        let resid = sub(&self.y_star(x), &self.c_targets[s]);
        let back = matvec_t(&self.implicit, &resid);
        sub(x, &self.a_targets[s])
            .into_iter()
            .zip(back)
            .map(|(a, b)| a + b)
            .collect()
    }
}
