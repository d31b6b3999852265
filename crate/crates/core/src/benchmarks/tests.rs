use super::*;
use crate::domain::{
    validate_problem, AnalyticReference, Batch, BatchPurpose, DeterministicOracles,
    StochasticOracles,
};
use crate::linalg::{dot, norm, sub};
use crate::{MoblError, SolverRng};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;

fn scalar_spec() -> QuadraticBilevelSpec {
    QuadraticBilevelSpec {
        p: 1,
        q: 1,
        s: 1,
        a: vec![vec![2.0]],
        bm: vec![vec![2.0]],
        a_targets: vec![vec![0.0]],
        c_targets: vec![vec![0.0]],
        seed: 0,
    }
}

#[test]
fn scalar_quadratic_closed_forms() {
    let (pb, c) = make_quadratic(&scalar_spec()).unwrap();
    for x in [-1.5, 0.0, 0.3, 2.0] {
        assert!((pb.y_star(&[x])[0] - x).abs() < 1e-15);
        assert!((pb.phi(0, &[x]) - x * x).abs() < 1e-14);
        assert!((pb.true_hypergradient(0, &[x])[0] - 2.0 * x).abs() < 1e-14);
    }
    assert_eq!(c.mu_g, 2.0);
}

#[test]
fn zero_targets_make_origin_stationary() {
    let mut spec = QuadraticBilevelSpec::random(4, 3, 3, 9);
    spec.a_targets = vec![vec![0.0; 4]; 3];
    spec.c_targets = vec![vec![0.0; 3]; 3];
    let (pb, _) = make_quadratic(&spec).unwrap();
    for s in 0..3 {
        assert_eq!(pb.true_hypergradient(s, &[0.0; 4]), vec![0.0; 4]);
    }
}

/// Implicit-function hypergradient with exact `y*` and a dense Hessian solve.
fn implicit_hypergradient(
    pb: &QuadraticBilevel,
    spec: &QuadraticBilevelSpec,
    s: usize,
    x: &[f64],
) -> Vec<f64> {
    let y = pb.y_star(x);
    let a = DMatrix::from_fn(spec.q, spec.q, |i, j| spec.a[i][j]);
    let rhs = DVector::from_vec(pb.ul_grad_y(s, x, &y));
    let v = a.lu().solve(&rhs).unwrap();
    let v: Vec<f64> = v.iter().copied().collect();
    sub(&pb.ul_grad_x(s, x, &y), &pb.ll_jvp(x, &y, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn analytic_hook_matches_implicit_formula(
        seed in 0u64..10_000,
        p in 1usize..8,
        q in 1usize..8,
        s in 1usize..4,
        scale in 0.1f64..3.0,
    ) {
        let spec = QuadraticBilevelSpec::random(p, q, s, seed);
        let (pb, _) = make_quadratic(&spec).unwrap();
        let x: Vec<f64> = (0..p).map(|i| scale * (i as f64 + seed as f64).cos()).collect();
        for k in 0..s {
            let a = pb.true_hypergradient(k, &x);
            let b = implicit_hypergradient(&pb, &spec, k, &x);
            prop_assert!(norm(&sub(&a, &b)) <= 1e-10 * (1.0 + norm(&a)));
        }
    }
}

#[test]
fn non_spd_matrix_is_rejected() {
    let mut spec = scalar_spec();
    spec.a = vec![vec![-1.0]];
    let err = make_quadratic(&spec).unwrap_err();
    assert!(matches!(err, MoblError::InvalidProblem(ref m) if m.contains("positive definite")));

    let mut spec = QuadraticBilevelSpec::random(2, 2, 1, 0);
    spec.a = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
    assert!(make_quadratic(&spec).is_err());
    spec.a = vec![vec![1.0, 0.5], vec![0.0, 1.0]];
    assert!(make_quadratic(&spec)
        .unwrap_err()
        .to_string()
        .contains("symmetric"));
}

#[test]
fn quadratic_passes_validation() {
    let spec = QuadraticBilevelSpec::random(5, 6, 2, 4);
    let (pb, c) = make_quadratic(&spec).unwrap();
    let a = DMatrix::from_fn(6, 6, |i, j| spec.a[i][j]);
    let lmin = SymmetricEigen::new(a).eigenvalues.min();
    let rep = validate_problem(&pb, &[0.3; 5], &[-0.2; 6], 8, 1).unwrap();
    assert!(rep.symmetry_residual <= 1e-10);
    assert!(rep.hvp_linearity_residual <= 1e-10);
    assert!(rep.jvp_linearity_residual <= 1e-10);
    assert!(rep.min_rayleigh >= lmin * (1.0 - 1e-12));
    assert!((c.mu_g - lmin).abs() <= 1e-12);
    assert!(pb.condition_number() >= 1.0);
}

#[test]
fn weighted_minimizer_is_stationary_for_the_weighted_sum() {
    let (pb, _) = make_quadratic(&QuadraticBilevelSpec::random(3, 4, 3, 2)).unwrap();
    let w = [0.2, 0.5, 0.3];
    let x = pb.weighted_minimizer(&w);
    let mut g = vec![0.0; 3];
    for (s, ws) in w.iter().enumerate() {
        crate::linalg::axpy(*ws, &pb.true_hypergradient(s, &x), &mut g);
    }
    assert!(norm(&g) <= 1e-12);
}

#[test]
fn finite_differences_match_analytic() {
    let (pb, c) = make_quadratic(&QuadraticBilevelSpec::random(4, 5, 2, 6)).unwrap();
    let x = [0.4, -0.3, 1.1, 0.0];
    for s in 0..2 {
        let fd = finite_diff_hypergrad(&pb, &x, s, 1e-5, 1e-12, 1.0 / c.l.unwrap()).unwrap();
        let an = pb.true_hypergradient(s, &x);
        for (a, b) in fd.iter().zip(&an) {
            assert!((a - b).abs() <= 1e-4);
        }
    }
}

/// Constant upper level over a ridge lower level.
struct Flat;

impl DeterministicOracles for Flat {
    fn dims(&self) -> crate::Dims {
        crate::Dims { p: 2, q: 2, s: 1 }
    }
    fn ul_value(&self, _: usize, _: &[f64], _: &[f64]) -> f64 {
        3.0
    }
    fn ul_grad_x(&self, _: usize, _: &[f64], _: &[f64]) -> Vec<f64> {
        vec![0.0; 2]
    }
    fn ul_grad_y(&self, _: usize, _: &[f64], _: &[f64]) -> Vec<f64> {
        vec![0.0; 2]
    }
    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        sub(y, x)
    }
    fn ll_hvp(&self, _: &[f64], _: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
    fn ll_jvp(&self, _: &[f64], _: &[f64], v: &[f64]) -> Vec<f64> {
        v.iter().map(|t| -t).collect()
    }
}

#[test]
fn finite_differences_of_constant_are_zero() {
    let fd = finite_diff_hypergrad(&Flat, &[1.0, -2.0], 0, 1e-5, 1e-12, 0.5).unwrap();
    assert_eq!(fd, vec![0.0, 0.0]);
}

#[test]
fn finite_differences_report_stalled_lower_level() {
    // step 0 never moves y
    let err = finite_diff_hypergrad(&Flat, &[1.0, 0.0], 0, 1e-5, 1e-12, 1e-300);
    assert!(matches!(err, Err(MoblError::OracleFailure(_))));
}

#[test]
fn brute_force_examples() {
    let g = vec![0.3, -1.2, 0.5];
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let l = brute_force_min_norm(&[g.clone(), neg], 1e-4).unwrap();
    assert!((l.as_slice()[0] - 0.5).abs() < 1e-12);
    assert_eq!(
        brute_force_min_norm(std::slice::from_ref(&g), 1e-4)
            .unwrap()
            .as_slice(),
        &[1.0]
    );
    let l = brute_force_min_norm(&[vec![1.0, 0.0], vec![0.0, 2.0]], 1e-4).unwrap();
    assert!((l.as_slice()[0] - 0.8).abs() < 1e-9);
    assert!(matches!(
        brute_force_min_norm(&[g.clone(), g.clone(), g.clone(), g], 1e-2),
        Err(MoblError::Unsupported(_))
    ));
}

#[test]
fn three_column_line_search_matches_full_enumeration() {
    let cols = vec![
        vec![1.0, 0.2, -0.3],
        vec![-0.4, 0.9, 0.1],
        vec![0.2, -0.8, 0.7],
    ];
    let res = 1e-2;
    let fast = brute_force_min_norm(&cols, res).unwrap();
    let n = 100;
    let mut best = (f64::INFINITY, vec![]);
    for i in 0..=n {
        for j in 0..=(n - i) {
            let l = [
                i as f64 / n as f64,
                j as f64 / n as f64,
                (n - i - j) as f64 / n as f64,
            ];
            let v = crate::linalg::norm_sq(&crate::linalg::combine(&cols, &l));
            if v < best.0 {
                best = (v, l.to_vec());
            }
        }
    }
    for (a, b) in fast.as_slice().iter().zip(&best.1) {
        assert!((a - b).abs() < 1e-9);
    }
}

fn toy() -> (HypercleaningToy, crate::ProblemConstants) {
    make_hypercleaning_toy(&HypercleaningToySpec::preset(3, 12, 10, 5)).unwrap()
}

#[test]
fn toy_preset_and_dims() {
    let spec = HypercleaningToySpec::preset(3, 12, 10, 5);
    assert_eq!(spec.corruption, vec![0.0, 0.15, 0.3, 0.45, 0.6]);
    let (t, c) = toy();
    let d = DeterministicOracles::dims(&t);
    assert_eq!((d.p, d.q, d.s), (60, 15, 5));
    assert_eq!(c.mu_g, 0.2);
}

#[test]
fn toy_spec_validation() {
    let mut spec = HypercleaningToySpec::preset(3, 12, 10, 5);
    spec.corruption[2] = 1.0;
    assert!(make_hypercleaning_toy(&spec).is_err());
    let mut spec = HypercleaningToySpec::preset(3, 12, 10, 5);
    spec.regularizer = 0.0;
    assert!(make_hypercleaning_toy(&spec).is_err());
}

#[test]
fn toy_curvature_is_bounded_below_by_regularizer() {
    let (t, c) = toy();
    let d = DeterministicOracles::dims(&t);
    let x: Vec<f64> = (0..d.p).map(|i| (i as f64).sin() * 3.0).collect();
    let y: Vec<f64> = (0..d.q).map(|i| (i as f64).cos()).collect();
    let rep = validate_problem(&t, &x, &y, 16, 2).unwrap();
    assert!(rep.passed(), "{rep:?}");
    assert!(rep.min_rayleigh >= c.mu_g * (1.0 - 1e-12));
}

#[test]
fn toy_full_batch_equals_deterministic_bitwise() {
    let (t, _) = toy();
    let d = DeterministicOracles::dims(&t);
    let x: Vec<f64> = (0..d.p).map(|i| (i as f64 * 0.3).sin()).collect();
    let y: Vec<f64> = (0..d.q).map(|i| (i as f64 * 0.2).cos()).collect();
    let v: Vec<f64> = (0..d.q).map(|i| i as f64 - 3.0).collect();
    let f = &Batch::Full;
    for s in 0..d.s {
        assert_eq!(
            StochasticOracles::ul_value(&t, s, &x, &y, f).to_bits(),
            DeterministicOracles::ul_value(&t, s, &x, &y).to_bits()
        );
        assert_eq!(
            StochasticOracles::ul_grad_y(&t, s, &x, &y, f),
            DeterministicOracles::ul_grad_y(&t, s, &x, &y)
        );
    }
    assert_eq!(
        StochasticOracles::ll_grad_y(&t, &x, &y, f),
        DeterministicOracles::ll_grad_y(&t, &x, &y)
    );
    assert_eq!(
        StochasticOracles::ll_hvp(&t, &x, &y, &v, f),
        DeterministicOracles::ll_hvp(&t, &x, &y, &v)
    );
    assert_eq!(
        StochasticOracles::ll_jvp(&t, &x, &y, &v, f),
        DeterministicOracles::ll_jvp(&t, &x, &y, &v)
    );
}

#[test]
fn toy_derivatives_match_finite_differences() {
    let (t, _) = toy();
    let d = DeterministicOracles::dims(&t);
    let x: Vec<f64> = (0..d.p).map(|i| (i as f64 * 0.7).sin()).collect();
    let y: Vec<f64> = (0..d.q).map(|i| (i as f64 * 0.4).cos()).collect();
    let v: Vec<f64> = (0..d.q).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
    let h = 1e-6;
    let shift = |base: &[f64], dir: &[f64], eps: f64| -> Vec<f64> {
        base.iter().zip(dir).map(|(a, b)| a + eps * b).collect()
    };
    // Hessian-vector product vs directional derivative of ∇_y g
    let gp = DeterministicOracles::ll_grad_y(&t, &x, &shift(&y, &v, h));
    let gm = DeterministicOracles::ll_grad_y(&t, &x, &shift(&y, &v, -h));
    let fd: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    let hv = DeterministicOracles::ll_hvp(&t, &x, &y, &v);
    assert!(norm(&sub(&fd, &hv)) <= 1e-6 * (1.0 + norm(&hv)));
    // Jacobian-vector product: ⟨e, jvp(v)⟩ = ⟨v, d/dx ∇_y g · e⟩
    let e: Vec<f64> = (0..d.p).map(|i| ((i % 3) as f64) - 1.0).collect();
    let gp = DeterministicOracles::ll_grad_y(&t, &shift(&x, &e, h), &y);
    let gm = DeterministicOracles::ll_grad_y(&t, &shift(&x, &e, -h), &y);
    let fd: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    let jv = DeterministicOracles::ll_jvp(&t, &x, &y, &v);
    assert!((dot(&fd, &v) - dot(&jv, &e)).abs() <= 1e-6 * (1.0 + dot(&jv, &e).abs()));
    // UL gradient vs value differences
    for s in 0..d.s {
        let gy = DeterministicOracles::ul_grad_y(&t, s, &x, &y);
        let fp = DeterministicOracles::ul_value(&t, s, &x, &shift(&y, &v, h));
        let fm = DeterministicOracles::ul_value(&t, s, &x, &shift(&y, &v, -h));
        assert!(((fp - fm) / (2.0 * h) - dot(&gy, &v)).abs() <= 1e-6);
    }
}

#[test]
fn toy_sampler_is_reproducible() {
    let (t, _) = toy();
    let draw = |seed| {
        let mut rng = SolverRng::seed_from_u64(seed);
        (
            t.sample_batch(BatchPurpose::LowerStep, 7, &mut rng),
            t.sample_batch(BatchPurpose::UpperObjective(2), 4, &mut rng),
        )
    };
    assert_eq!(draw(11), draw(11));
    assert_ne!(draw(11), draw(12));
    let (lo, up) = draw(3);
    assert_eq!(lo.len(), Some(7));
    assert_eq!(up.len(), Some(4));
}

#[test]
fn counting_wrapper_tracks_calls() {
    let (pb, _) = make_quadratic(&scalar_spec()).unwrap();
    let c = CountingOracles::new(pb);
    c.ll_grad_y(&[1.0], &[0.0]);
    c.ll_hvp(&[1.0], &[0.0], &[1.0]);
    c.ul_grad_x(0, &[1.0], &[0.0]);
    c.ul_grad_y(0, &[1.0], &[0.0]);
    c.ul_value(0, &[1.0], &[0.0]);
    let n = c.counts();
    assert_eq!(n.as_array(), [2, 1, 0, 1]);
    c.reset();
    assert_eq!(c.counts().as_array(), [0; 4]);
}
