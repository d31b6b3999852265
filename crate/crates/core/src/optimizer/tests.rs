use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::benchmarks::{make_quadratic, CountingOracles, QuadraticBilevel, QuadraticBilevelSpec};
use crate::domain::{
    rescale_to_simplex, AnalyticReference, AsStochastic, DeterministicOracles, Dims,
    HypergradOption, OracleCounters, Preference, ProblemConstants, SolverConfig, StepSizes,
    Termination,
};
use crate::linalg::{dot, norm, norm_sq, sub};
use crate::MoblError;

fn quad(seed: u64, p: usize, q: usize, s: usize) -> (QuadraticBilevel, ProblemConstants) {
    make_quadratic(&QuadraticBilevelSpec::random(p, q, s, seed)).unwrap()
}

fn config(c: &ProblemConstants, option: HypergradOption, beta: f64) -> SolverConfig {
    let l = c.l.unwrap();
    let mut cfg = SolverConfig::deterministic(StepSizes {
        alpha: 1.0 / l,
        beta,
        eta: 1.0 / l,
    });
    cfg.option = option;
    cfg
}

fn lambda_max(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j]);
    nalgebra::SymmetricEigen::new(mat).eigenvalues.max()
}

#[test]
fn counting_formulas() {
    let steps = StepSizes {
        alpha: 0.1,
        beta: 0.1,
        eta: 0.1,
    };
    let mut c = SolverConfig::deterministic(steps);
    c.outer_iters = 10;
    c.inner_iters = 5;
    let ns = expected_counters(&c, 3, Algorithm::Deterministic);
    assert_eq!((ns.gc_f, ns.gc_g), (60, 50));
    assert_eq!((ns.jv_g, ns.hv_g), (180, 180));
    c.option = HypergradOption::Cg;
    c.cg_iters = 4;
    c.warm_start_v = false;
    let cg = expected_counters(&c, 3, Algorithm::Deterministic);
    assert_eq!((cg.jv_g, cg.hv_g), (30, 120));
    c.warm_start_v = true;
    assert_eq!(
        expected_counters(&c, 3, Algorithm::Deterministic).hv_g,
        120 + 27
    );
    c.neumann_depth = 6;
    let st = expected_counters(&c, 3, Algorithm::Stochastic);
    assert_eq!(st.as_array(), [60, 50, 30, 180]);
    c.outer_iters = 0;
    for a in [
        Algorithm::Deterministic,
        Algorithm::Stochastic,
        Algorithm::NonPreference,
    ] {
        assert_eq!(expected_counters(&c, 3, a), OracleCounters::default());
    }
}

#[test]
fn starts_at_pareto_stationary_point() {
    let (pb, c) = quad(1, 3, 4, 2);
    let r = Preference::new(vec![0.3, 0.7]).unwrap();
    // λ ∝ w / r makes r⊙λ ∝ w, and x* minimises Σ w_s φ_s
    let w = [0.6, 0.4];
    let x = pb.weighted_minimizer(&w);
    let y = pb.y_star(&x);
    let mut cfg = config(&c, HypergradOption::Cg, 0.05);
    cfg.outer_iters = 1;
    cfg.cg_iters = 4;
    cfg.inner_iters = 200;
    cfg.tradeoff = 0.0;
    let trace = run_deterministic(&pb, &cfg, &r, &x, &y, None).unwrap();
    assert!(trace.records[0].d_norm_sq <= 1e-10);
    assert!(norm(&sub(&trace.final_x, &x)) <= 1e-8);
}

#[test]
fn single_objective_converges_linearly() {
    let (pb, c) = quad(2, 4, 5, 1);
    let beta = 1.0 / lambda_max(&pb.phi_hessian());
    let mut cfg = config(&c, HypergradOption::Cg, beta);
    cfg.outer_iters = 500;
    cfg.cg_iters = 5;
    let r = Preference::uniform(1);
    let trace = run_deterministic(&pb, &cfg, &r, &[0.0; 4], &[0.0; 5], None).unwrap();
    assert!(trace.lambdas().all(|l| l.as_slice() == [1.0]));
    let g = pb.true_hypergradient(0, &trace.final_x);
    assert!(norm(&g) <= 1e-6, "{}", norm(&g));
    let target = pb.weighted_minimizer(&[1.0]);
    assert!(norm(&sub(&trace.final_x, &target)) <= 1e-6);
    // linear rate: the true gap shrinks by a constant factor per 50 iterations
    let gaps: Vec<f64> = trace
        .records
        .iter()
        .map(|r| r.true_d_norm_sq.unwrap())
        .collect();
    for w in [50usize, 100, 150] {
        assert!(gaps[w + 50] <= 0.5 * gaps[w]);
    }
}

#[test]
fn counters_match_closed_forms() {
    let (pb, c) = quad(3, 3, 4, 3);
    let counting = CountingOracles::new(pb);
    for (option, warm_v) in [
        (HypergradOption::Ns, true),
        (HypergradOption::Cg, false),
        (HypergradOption::Cg, true),
    ] {
        let mut cfg = config(&c, option, 0.01);
        cfg.outer_iters = 7;
        cfg.inner_iters = 5;
        cfg.cg_iters = 3;
        cfg.warm_start_v = warm_v;
        counting.reset();
        let r = Preference::new(vec![0.2, 0.3, 0.5]).unwrap();
        let trace = run_deterministic(&counting, &cfg, &r, &[0.1; 3], &[0.0; 4], None).unwrap();
        assert_eq!(
            trace.counters,
            expected_counters(&cfg, 3, Algorithm::Deterministic)
        );
        assert_eq!(trace.counters, counting.counts());
        for w in trace.records.windows(2) {
            assert!(w[1].counters.dominates(&w[0].counters));
        }
        counting.reset();
        let trace = run_nonpreference(&counting, &cfg, &[0.1; 3], &[0.0; 4]).unwrap();
        assert_eq!(
            trace.counters,
            expected_counters(&cfg, 3, Algorithm::NonPreference)
        );
        assert_eq!(trace.counters, counting.counts());
    }
    let sto = CountingOracles::new(AsStochastic(counting.inner.clone()));
    let mut cfg = config(&c, HypergradOption::Ns, 0.01);
    cfg.outer_iters = 4;
    cfg.inner_iters = 6;
    cfg.neumann_depth = 5;
    let r = Preference::uniform(3);
    let trace = run_stochastic(&sto, &cfg, &r, &[0.1; 3], &[0.0; 4], None).unwrap();
    assert_eq!(
        trace.counters,
        expected_counters(&cfg, 3, Algorithm::Stochastic)
    );
    assert_eq!(trace.counters, sto.counts());
}

#[test]
fn zero_iterations_leave_everything_untouched() {
    let (pb, c) = quad(4, 2, 2, 2);
    let mut cfg = config(&c, HypergradOption::Ns, 0.1);
    cfg.outer_iters = 0;
    let trace = run_deterministic(
        &pb,
        &cfg,
        &Preference::uniform(2),
        &[1.0, 2.0],
        &[0.0; 2],
        None,
    )
    .unwrap();
    assert!(trace.records.is_empty());
    assert_eq!(trace.counters, OracleCounters::default());
    assert_eq!(trace.final_x, vec![1.0, 2.0]);
}

#[test]
fn small_tradeoff_satisfies_direction_bound() {
    let (pb, c) = quad(5, 4, 4, 3);
    let r = Preference::new(vec![0.6, 0.3, 0.1]).unwrap();
    let mut cfg = config(&c, HypergradOption::Ns, 0.02);
    cfg.outer_iters = 60;
    cfg.tradeoff = 1e-6;
    let r_max = r.max();
    let mut checked = 0;
    let mut obs = |v: &IterationView<'_>| {
        let dn = norm_sq(v.direction);
        for col in v.hypergradients.columns() {
            assert!(dn <= 2.0 * r_max * dot(v.direction, col) + 1e-8);
        }
        checked += 1;
    };
    run_deterministic_observed(&pb, &cfg, &r, &[1.0; 4], &[0.0; 4], None, &mut obs).unwrap();
    assert_eq!(checked, 60);
}

#[test]
fn zero_tradeoff_gives_common_descent() {
    let (pb, c) = quad(6, 3, 4, 2);
    let r = Preference::new(vec![0.4, 0.6]).unwrap();
    let mut cfg = config(&c, HypergradOption::Cg, 1e-3);
    cfg.outer_iters = 100;
    cfg.inner_iters = 200;
    cfg.cg_iters = 4;
    cfg.tradeoff = 0.0;
    let mut xs = Vec::new();
    let mut ds = Vec::new();
    let mut obs = |v: &IterationView<'_>| {
        xs.push(v.x.to_vec());
        ds.push(norm_sq(v.direction));
    };
    run_deterministic_observed(&pb, &cfg, &r, &[2.0, -1.0, 0.5], &[0.0; 4], None, &mut obs)
        .unwrap();
    for k in 0..xs.len() - 1 {
        if ds[k] > 1e-8 {
            for s in 0..2 {
                assert!(pb.phi(s, &xs[k + 1]) <= pb.phi(s, &xs[k]) + 1e-10);
            }
        }
    }
}

#[test]
fn rescaled_weights_certify_stationarity() {
    let (pb, c) = quad(7, 3, 3, 3);
    let r = Preference::new(vec![0.5, 0.2, 0.3]).unwrap();
    let mut cfg = config(&c, HypergradOption::Cg, 0.05);
    cfg.outer_iters = 40;
    cfg.cg_iters = 3;
    let mut obs = |v: &IterationView<'_>| {
        let eps = norm(v.direction);
        let (hat, total) = rescale_to_simplex(v.lambda, &r);
        assert!(crate::SimplexWeights::new(hat.as_slice().to_vec()).is_ok());
        let rl = v.lambda.hadamard(&r);
        assert!((total - rl.iter().sum::<f64>()).abs() == 0.0);
        let hn = norm(&v.hypergradients.apply(hat.as_slice()));
        assert!(hn <= eps / total * (1.0 + 1e-12) + 1e-300);
    };
    run_deterministic_observed(&pb, &cfg, &r, &[1.0; 3], &[0.0; 3], None, &mut obs).unwrap();
}

#[test]
fn replay_is_bitwise_identical() {
    let (pb, c) = quad(8, 3, 4, 2);
    let cfg = {
        let mut c = config(&c, HypergradOption::Ns, 0.05);
        c.outer_iters = 30;
        c
    };
    let r = Preference::preferred(2, 1).unwrap();
    let a = run_deterministic(&pb, &cfg, &r, &[0.5; 3], &[0.0; 4], None).unwrap();
    let b = run_deterministic(&pb, &cfg, &r, &[0.5; 3], &[0.0; 4], None).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn nonpreference_matches_uniform_zero_tradeoff() {
    let (pb, c) = quad(9, 3, 4, 2);
    let mut cfg = config(&c, HypergradOption::Ns, 0.05);
    cfg.outer_iters = 80;
    cfg.tradeoff = 0.0;
    let np = run_nonpreference(&pb, &cfg, &[1.0; 3], &[0.0; 4]).unwrap();
    // d_np = Σ λ ∇̂φ = S · ∇̂Φ(r⊙λ) for uniform r, so scale β by 1/S
    let mut det_cfg = cfg.clone();
    det_cfg.ul_step = cfg.ul_step * 2.0;
    let det = run_deterministic(
        &pb,
        &det_cfg,
        &Preference::uniform(2),
        &[1.0; 3],
        &[0.0; 4],
        None,
    )
    .unwrap();
    for (a, b) in np.lambdas().zip(det.lambdas()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }
}

/// `f^(s)` with constant partial gradient `±g` in `x` and no `y` dependence.
struct Opposing {
    g: Vec<f64>,
}

impl DeterministicOracles for Opposing {
    fn dims(&self) -> Dims {
        Dims {
            p: self.g.len(),
            q: 1,
            s: 2,
        }
    }
    fn ul_value(&self, s: usize, x: &[f64], _: &[f64]) -> f64 {
        let sign = if s == 0 { 1.0 } else { -1.0 };
        sign * dot(&self.g, x)
    }
    fn ul_grad_x(&self, s: usize, _: &[f64], _: &[f64]) -> Vec<f64> {
        let sign = if s == 0 { 1.0 } else { -1.0 };
        self.g.iter().map(|v| sign * v).collect()
    }
    fn ul_grad_y(&self, _: usize, _: &[f64], _: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
    fn ll_grad_y(&self, _: &[f64], y: &[f64]) -> Vec<f64> {
        y.to_vec()
    }
    fn ll_hvp(&self, _: &[f64], _: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
    fn ll_jvp(&self, _: &[f64], _: &[f64], _: &[f64]) -> Vec<f64> {
        vec![0.0; self.g.len()]
    }
}

#[test]
fn opposing_gradients_are_immediately_stationary() {
    let pb = Opposing { g: vec![0.3, -0.7] };
    let steps = StepSizes {
        alpha: 0.5,
        beta: 0.1,
        eta: 0.5,
    };
    let mut cfg = SolverConfig::deterministic(steps);
    cfg.option = HypergradOption::Cg;
    cfg.cg_iters = 1;
    let trace = run_nonpreference(&pb, &cfg, &[1.0, 1.0], &[0.0]).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.termination, Termination::Stationary);
    assert_eq!(trace.records[0].lambda.as_slice(), &[0.5, 0.5]);
    assert_eq!(trace.records[0].d_norm_sq, 0.0);
    assert_eq!(trace.final_x, vec![1.0, 1.0]);
}

#[test]
fn nonpreference_single_objective_is_plain_descent() {
    let (pb, c) = quad(10, 2, 3, 1);
    let mut cfg = config(&c, HypergradOption::Ns, 0.1);
    cfg.outer_iters = 20;
    let trace = run_nonpreference(&pb, &cfg, &[1.0; 2], &[0.0; 3]).unwrap();
    assert!(trace.lambdas().all(|l| l.as_slice() == [1.0]));
}

#[test]
fn stop_tolerance_ends_run_early() {
    let (pb, c) = quad(11, 2, 2, 1);
    let mut cfg = config(&c, HypergradOption::Ns, 0.3);
    cfg.outer_iters = 2000;
    cfg.stop_tol = 1e-8;
    let trace = run_deterministic(
        &pb,
        &cfg,
        &Preference::uniform(1),
        &[3.0; 2],
        &[0.0; 2],
        None,
    )
    .unwrap();
    assert_eq!(trace.termination, Termination::StopTolerance);
    assert!(trace.records.len() < 2000);
    assert!(trace.final_d_norm_sq().unwrap() <= 1e-8);
}

/// Returns NaN lower-level gradients after `budget` calls.
struct Faulty {
    inner: QuadraticBilevel,
    calls: AtomicUsize,
    budget: usize,
}

impl DeterministicOracles for Faulty {
    fn dims(&self) -> Dims {
        self.inner.dims()
    }
    fn ul_value(&self, s: usize, x: &[f64], y: &[f64]) -> f64 {
        self.inner.ul_value(s, x, y)
    }
    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.inner.ul_grad_x(s, x, y)
    }
    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.inner.ul_grad_y(s, x, y)
    }
    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        if self.calls.fetch_add(1, Ordering::Relaxed) >= self.budget {
            vec![f64::NAN; y.len()]
        } else {
            self.inner.ll_grad_y(x, y)
        }
    }
    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        self.inner.ll_hvp(x, y, v)
    }
    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        self.inner.ll_jvp(x, y, v)
    }
}

#[test]
fn failures_keep_partial_trace() {
    let (pb, c) = quad(12, 2, 2, 2);
    let mut cfg = config(&c, HypergradOption::Ns, 0.1);
    cfg.inner_iters = 4;
    let faulty = Faulty {
        inner: pb,
        calls: AtomicUsize::new(0),
        budget: 4 * 5 + 2,
    };
    let err = run_deterministic(
        &faulty,
        &cfg,
        &Preference::uniform(2),
        &[0.0; 2],
        &[0.0; 2],
        None,
    )
    .unwrap_err();
    assert!(matches!(err.error, MoblError::Divergence { step: 3 }));
    assert_eq!(err.trace.records.len(), 5);
}

#[test]
fn invalid_inputs_are_reported() {
    let (pb, c) = quad(13, 2, 2, 2);
    let cfg = config(&c, HypergradOption::Ns, 0.1);
    let err = run_deterministic(
        &pb,
        &cfg,
        &Preference::uniform(3),
        &[0.0; 2],
        &[0.0; 2],
        None,
    )
    .unwrap_err();
    assert!(matches!(err.error, MoblError::InvalidWeights(_)));
    let err = run_deterministic(
        &pb,
        &cfg,
        &Preference::uniform(2),
        &[0.0; 3],
        &[0.0; 2],
        None,
    )
    .unwrap_err();
    assert!(matches!(err.error, MoblError::InvalidProblem(_)));
    let mut bad = cfg.clone();
    bad.ul_step = 0.0;
    let err = run_deterministic(
        &pb,
        &bad,
        &Preference::uniform(2),
        &[0.0; 2],
        &[0.0; 2],
        None,
    )
    .unwrap_err();
    assert!(matches!(err.error, MoblError::Configuration(_)));
}

#[test]
fn stochastic_full_batch_tracks_deterministic_ns() {
    let (pb, c) = quad(14, 3, 4, 2);
    let mut cfg = config(&c, HypergradOption::Ns, 0.05);
    cfg.outer_iters = 100;
    cfg.inner_iters = 50;
    cfg.neumann_depth = 200;
    let r = Preference::new(vec![0.7, 0.3]).unwrap();
    let det = run_deterministic(&pb, &cfg, &r, &[1.0; 3], &[0.0; 4], None).unwrap();
    let st = run_stochastic(&AsStochastic(&pb), &cfg, &r, &[1.0; 3], &[0.0; 4], None).unwrap();
    for (a, b) in det.final_phi().unwrap().iter().zip(st.final_phi().unwrap()) {
        assert!((a - b).abs() <= 1e-3);
    }
    assert!(st.records.iter().all(|r| r.rng_word_pos.is_some()));
}

#[test]
fn sweep_preserves_order_and_matches_single_runs() {
    let (pb, c) = quad(15, 3, 3, 2);
    let mut cfg = config(&c, HypergradOption::Ns, 0.05);
    cfg.outer_iters = 40;
    let prefs: Vec<Preference> = [0.1, 0.5, 0.9]
        .iter()
        .map(|&a| Preference::new(vec![a, 1.0 - a]).unwrap())
        .collect();
    let seq = pareto_sweep(&pb, &cfg, &prefs, &[0.0; 3], &[0.0; 3], false).unwrap();
    let par = pareto_sweep(&pb, &cfg, &prefs, &[0.0; 3], &[0.0; 3], true).unwrap();
    for ((e, f), r) in seq.entries.iter().zip(&par.entries).zip(&prefs) {
        assert_eq!(&e.preference, r);
        let single = run_deterministic(&pb, &cfg, r, &[0.0; 3], &[0.0; 3], None).unwrap();
        assert_eq!(e.trace(), &single);
        assert_eq!(f.trace(), &single);
    }
    let one = pareto_sweep(&pb, &cfg, &prefs[..1], &[0.0; 3], &[0.0; 3], false).unwrap();
    assert_eq!(one.entries.len(), 1);
    assert!(pareto_sweep(&pb, &cfg, &[], &[0.0; 3], &[0.0; 3], false).is_err());
}

#[test]
fn sweep_records_failures_without_aborting() {
    let (pb, c) = quad(16, 2, 2, 2);
    let mut cfg = config(&c, HypergradOption::Ns, 0.05);
    cfg.outer_iters = 5;
    let prefs = vec![Preference::uniform(3), Preference::uniform(2)];
    let res = pareto_sweep(&pb, &cfg, &prefs, &[0.0; 2], &[0.0; 2], false).unwrap();
    assert!(res.entries[0].outcome.is_err());
    assert!(res.entries[1].outcome.is_ok());
    assert_eq!(res.entries[1].trace().records.len(), 5);
}
