//! `mobl verify`: invariant checks over every module on small benchmarks.

use mobl::benchmarks::{
    brute_force_min_norm, brute_force_simplex, finite_diff_hypergrad, make_hypercleaning_toy,
    make_quadratic, HypercleaningToy, HypercleaningToySpec, QuadraticBilevel, QuadraticBilevelSpec,
};
use mobl::hypergrad::{hypergrad_cg, hypergrad_ns, lower_level_solve, stochastic_hvp_neumann};
use mobl::linalg::{combine, dot, norm, norm_sq, sub};
use mobl::optimizer::{
    expected_counters, run_deterministic, run_deterministic_observed, run_stochastic, Algorithm,
    IterationView,
};
use mobl::subsolvers::{WcSolver, WcSubproblem};
use mobl::{
    validate_problem, AnalyticReference, Batch, BatchPurpose, DeterministicOracles, Dims,
    FullBatch, HypergradOption, OracleCounters, Preference, ProblemConstants, SolverConfig,
    SolverRng, StepSizes, StochasticOracles,
};

use crate::error::{CliError, CliResult};

/// Fault injected into the benchmark oracles, to confirm that checks fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds a skew-symmetric part to the lower-level Hessian-vector product.
    AsymmetricHvp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(Option<Fault>) -> Result<String, String>;

const QUICK: &[(&str, Check)] = &[
    ("oracle_validation", oracle_validation),
    ("hypergradient_analytic", hypergradient_analytic),
    (
        "hypergradient_finite_difference",
        hypergradient_finite_difference,
    ),
    ("wc_subproblem", wc_subproblem),
    ("direction_inequality", direction_inequality),
    ("counter_identities", counter_identities),
    ("sampled_oracles", sampled_oracles),
    ("stochastic_replay", stochastic_replay),
];

const FULL: &[(&str, Check)] = &[
    ("ns_bias_decay", ns_bias_decay),
    ("neumann_hvp", neumann_hvp),
    ("stochastic_full_batch", stochastic_full_batch),
    ("rate_regression", rate_regression),
];

/// Runs the quick suite, plus the slower suites when `full` is set.
pub fn run_checks(full: bool, fault: Option<Fault>) -> Vec<CheckOutcome> {
    let extra: &[(&str, Check)] = if full { FULL } else { &[] };
    QUICK
        .iter()
        .chain(extra)
        .map(|(name, check)| {
            let (passed, detail) = match check(fault) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome {
                name,
                passed,
                detail,
            }
        })
        .collect()
}

pub fn cmd_verify(full: bool, fault: Option<Fault>) -> CliResult<()> {
    let outcomes = run_checks(full, fault);
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<32} {}", o.name, o.detail);
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{} ({})", o.name, o.detail))
        .collect();
    if failed.is_empty() {
        println!("{} checks passed", outcomes.len());
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            outcomes.len(),
            failed.join("; ")
        )))
    }
}

fn quadratic(p: usize, q: usize, s: usize, seed: u64) -> (QuadraticBilevel, ProblemConstants) {
    make_quadratic(&QuadraticBilevelSpec::random(p, q, s, seed)).expect("generator yields SPD A")
}

fn point(n: usize, scale: f64, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| scale * ((i as f64 + 1.0) * 0.37 + phase).sin())
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err_str(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Skews `ll_hvp` by `v ↦ H v + ½(v₁, −v₀, 0, …)`.
struct Skewed<'a>(&'a QuadraticBilevel);

impl DeterministicOracles for Skewed<'_> {
    fn dims(&self) -> Dims {
        self.0.dims()
    }
    fn ul_value(&self, s: usize, x: &[f64], y: &[f64]) -> f64 {
        self.0.ul_value(s, x, y)
    }
    fn ul_grad_x(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.0.ul_grad_x(s, x, y)
    }
    fn ul_grad_y(&self, s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.0.ul_grad_y(s, x, y)
    }
    fn ll_grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.0.ll_grad_y(x, y)
    }
    fn ll_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        let mut h = self.0.ll_hvp(x, y, v);
        if v.len() >= 2 {
            h[0] += 0.5 * v[1];
            h[1] -= 0.5 * v[0];
        }
        h
    }
    fn ll_jvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        self.0.ll_jvp(x, y, v)
    }
}

fn oracle_validation(fault: Option<Fault>) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..5 {
        let (pb, _) = quadratic(4, 6, 3, seed);
        let (x, y) = (point(4, 1.0, seed as f64), point(6, 1.0, 0.5));
        let report = match fault {
            Some(Fault::AsymmetricHvp) => validate_problem(&Skewed(&pb), &x, &y, 8, seed),
            None => validate_problem(&pb, &x, &y, 8, seed),
        }
        .map_err(err_str)?;
        let flagged = report.flagged(1e-10);
        ensure(flagged.is_empty(), || {
            format!(
                "quadratic seed {seed}: {} (symmetry residual {:.3e})",
                flagged.join(", "),
                report.symmetry_residual
            )
        })?;
        let lo = pb.eigen_bounds().0;
        ensure(report.min_rayleigh >= lo * (1.0 - 1e-12), || {
            format!(
                "quadratic seed {seed}: hvp_rayleigh {:.6e} below smallest eigenvalue {lo:.6e}",
                report.min_rayleigh
            )
        })?;
        worst = worst
            .max(report.symmetry_residual)
            .max(report.hvp_linearity_residual)
            .max(report.jvp_linearity_residual);
    }
    let (toy, c) = toy(vec![0.0, 0.2, 0.4]);
    let d = DeterministicOracles::dims(&toy);
    let report = validate_problem(&toy, &point(d.p, 1.0, 0.0), &point(d.q, 0.5, 1.0), 8, 3)
        .map_err(err_str)?;
    let flagged = report.flagged(1e-10);
    ensure(flagged.is_empty(), || {
        format!("hypercleaning toy: {}", flagged.join(", "))
    })?;
    ensure(report.min_rayleigh >= c.mu_g * (1.0 - 1e-12), || {
        format!(
            "hypercleaning toy: hvp_rayleigh {:.6e} below mu_g",
            report.min_rayleigh
        )
    })?;
    worst = worst.max(report.symmetry_residual);
    Ok(format!("6 problems, worst residual {worst:.2e}"))
}

fn toy(corruption: Vec<f64>) -> (HypercleaningToy, ProblemConstants) {
    make_hypercleaning_toy(&HypercleaningToySpec {
        feature_dim: 3,
        n_train: 16,
        n_val: 16,
        corruption,
        regularizer: 0.2,
        seed: 4,
    })
    .expect("valid toy spec")
}

fn hypergradient_analytic(_: Option<Fault>) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..5 {
        let (pb, c) = quadratic(5, 8, 3, 100 + seed);
        let alpha = 1.0 / c.l.unwrap();
        let x = point(5, 1.0, seed as f64);
        let mut cnt = OracleCounters::default();
        let lower =
            lower_level_solve(&pb, &x, &[0.0; 8], 400, alpha, false, &mut cnt).map_err(err_str)?;
        for s in 0..3 {
            let (g, _) = hypergrad_cg(&pb, &x, &lower.y_final, s, &[0.0; 8], 8, 0.0, &mut cnt)
                .map_err(err_str)?;
            let truth = pb.true_hypergradient(s, &x);
            let rel = norm(&sub(&g, &truth)) / norm(&truth).max(1e-300);
            ensure(rel <= 1e-6, || {
                format!("seed {seed} objective {s}: relative error {rel:.3e}")
            })?;
            worst = worst.max(rel);
        }
    }
    Ok(format!(
        "15 hypergradients, worst relative error {worst:.2e}"
    ))
}

fn hypergradient_finite_difference(_: Option<Fault>) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for seed in 0..2 {
        let (pb, c) = quadratic(3, 4, 2, 200 + seed);
        let alpha = 1.0 / c.l.unwrap();
        let x = point(3, 1.0, seed as f64);
        for s in 0..2 {
            let fd = finite_diff_hypergrad(&pb, &x, s, 1e-5, 1e-12, alpha).map_err(err_str)?;
            let truth = pb.true_hypergradient(s, &x);
            let e = sub(&fd, &truth).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            ensure(e <= 1e-4, || {
                format!("seed {seed} objective {s}: max error {e:.3e}")
            })?;
            worst = worst.max(e);
        }
    }
    Ok(format!("4 gradients, worst coordinate error {worst:.2e}"))
}

/// Deterministic pseudo-random numbers for instance generation.
fn lcg(state: &mut u64) -> f64 {
    *state = state
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    ((*state >> 11) as f64) / ((1u64 << 53) as f64)
}

/// Minimiser of `λᵀMλ − u cᵀλ` along `(a, t, m − t)`.
fn wc_line_argmin(sp: &WcSubproblem, a: f64, m: f64) -> f64 {
    let q = |l: &[f64]| sp.objective(l);
    // the objective is quadratic in t: recover it from three evaluations
    let (f0, f1, f2) = (q(&[a, 0.0, m]), q(&[a, 0.5 * m, 0.5 * m]), q(&[a, m, 0.0]));
    if m == 0.0 {
        return 0.0;
    }
    // f(t) = A t² + B t + f0
    let a2 = 2.0 * (f0 - 2.0 * f1 + f2) / (m * m);
    let b1 = (4.0 * f1 - 3.0 * f0 - f2) / m;
    if a2 > 0.0 {
        -b1 / (2.0 * a2)
    } else if f2 < f0 {
        m
    } else {
        0.0
    }
}

fn wc_subproblem(_: Option<Fault>) -> Result<String, String> {
    let mut state = 17_u64;
    let solver = WcSolver::default();
    let mut worst_kkt = 0.0_f64;
    for case in 0..30 {
        let s = 2 + case % 2;
        let cols: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..4).map(|_| 4.0 * lcg(&mut state) - 2.0).collect())
            .collect();
        let gram: Vec<Vec<f64>> = cols
            .iter()
            .map(|a| cols.iter().map(|b| dot(a, b)).collect())
            .collect();
        let phi: Vec<f64> = (0..s).map(|_| 2.0 * lcg(&mut state)).collect();
        let raw: Vec<f64> = (0..s).map(|_| 0.1 + lcg(&mut state)).collect();
        let total: f64 = raw.iter().sum();
        let r = Preference::new(raw.iter().map(|v| v / total).collect()).map_err(err_str)?;
        let u = 5.0 * lcg(&mut state);
        let sp = WcSubproblem::new(gram.clone(), phi, &r, u).map_err(err_str)?;
        let sol = solver.solve(&sp, None).map_err(err_str)?;
        ensure(sol.kkt_residual <= 1e-10, || {
            format!("case {case}: kkt residual {:.3e}", sol.kkt_residual)
        })?;
        worst_kkt = worst_kkt.max(sol.kkt_residual);
        let grid = brute_force_simplex(
            s,
            1e-3,
            |l| sp.objective(l),
            |a, m| wc_line_argmin(&sp, a, m),
        )
        .map_err(err_str)?;
        let (mine, best) = (
            sp.objective(sol.lambda.as_slice()),
            sp.objective(grid.as_slice()),
        );
        ensure(mine <= best + 1e-9 && best - mine <= 1e-4, || {
            format!("case {case}: objective {mine:.12e} vs grid {best:.12e}")
        })?;

        let mn = WcSubproblem::min_norm(gram).map_err(err_str)?;
        let l = solver.solve(&mn, None).map_err(err_str)?.lambda;
        let g = brute_force_min_norm(&cols, 1e-3).map_err(err_str)?;
        let (a, b) = (
            norm(&combine(&cols, l.as_slice())),
            norm(&combine(&cols, g.as_slice())),
        );
        let lip: f64 = cols.iter().map(|c| norm(c)).sum();
        ensure(a <= b + 1e-12 && b - a <= 2e-3 * lip, || {
            format!("case {case}: min-norm {a:.12e} vs grid {b:.12e}")
        })?;
    }
    Ok(format!("30 instances, worst kkt residual {worst_kkt:.2e}"))
}

fn direction_inequality(_: Option<Fault>) -> Result<String, String> {
    let mut checked = 0usize;
    let mut failure: Option<String> = None;
    for seed in 0..2 {
        let (pb, c) = quadratic(4, 5, 3, 300 + seed);
        for r in [
            Preference::uniform(3),
            Preference::preferred(3, 0).map_err(err_str)?,
            Preference::extremely_preferred(3, 2).map_err(err_str)?,
        ] {
            let steps = StepSizes::from_constants(&c, r.max()).map_err(err_str)?;
            let mut cfg = SolverConfig::deterministic(steps);
            cfg.outer_iters = 30;
            cfg.tradeoff = 1e-6;
            let r_max = r.max();
            let mut observe = |v: &IterationView<'_>| {
                let dd = norm_sq(v.direction);
                for (s, col) in v.hypergradients.columns().iter().enumerate() {
                    let rhs = 2.0 * r_max * dot(v.direction, col);
                    checked += 1;
                    if dd > rhs + 1e-8 && failure.is_none() {
                        failure = Some(format!(
                            "seed {seed} k {} objective {s}: ‖d‖² = {dd:.6e} > {rhs:.6e}",
                            v.k
                        ));
                    }
                }
            };
            run_deterministic_observed(&pb, &cfg, &r, &[0.0; 4], &[0.0; 5], None, &mut observe)
                .map_err(err_str)?;
        }
    }
    match failure {
        Some(f) => Err(f),
        None => Ok(format!("{checked} (k, s) pairs")),
    }
}

fn counter_identities(_: Option<Fault>) -> Result<String, String> {
    let (pb, c) = quadratic(3, 4, 2, 400);
    let r = Preference::uniform(2);
    let mut runs = 0;
    for option in [HypergradOption::Ns, HypergradOption::Cg] {
        for warm_v in [false, true] {
            let mut cfg = SolverConfig::deterministic(StepSizes::from_constants(&c, 0.5).unwrap());
            cfg.outer_iters = 5;
            cfg.inner_iters = 6;
            cfg.cg_iters = 3;
            cfg.option = option;
            cfg.warm_start_v = warm_v;
            let trace =
                run_deterministic(&pb, &cfg, &r, &[0.0; 3], &[0.0; 4], None).map_err(err_str)?;
            let want = expected_counters(&cfg, 2, Algorithm::Deterministic);
            ensure(trace.counters == want, || {
                format!(
                    "{option:?} warm_v={warm_v}: {:?} != {:?}",
                    trace.counters, want
                )
            })?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs match exactly"))
}

fn sampled_oracles(_: Option<Fault>) -> Result<String, String> {
    let (toy, _) = toy(vec![0.0, 0.3]);
    let d = StochasticOracles::dims(&toy);
    let (x, y) = (point(d.p, 1.0, 0.3), point(d.q, 0.7, 0.1));
    let every = Batch::Samples((0..toy.n_train()).collect());
    let v = point(d.q, 1.0, 2.0);
    let pairs = [
        (
            StochasticOracles::ll_grad_y(&toy, &x, &y, &Batch::Full),
            DeterministicOracles::ll_grad_y(&toy, &x, &y),
            StochasticOracles::ll_grad_y(&toy, &x, &y, &every),
        ),
        (
            StochasticOracles::ll_hvp(&toy, &x, &y, &v, &Batch::Full),
            DeterministicOracles::ll_hvp(&toy, &x, &y, &v),
            StochasticOracles::ll_hvp(&toy, &x, &y, &v, &every),
        ),
    ];
    for (i, (full, det, all)) in pairs.iter().enumerate() {
        ensure(full == det, || {
            format!("oracle {i}: full batch differs from deterministic")
        })?;
        let e = norm(&sub(full, all)) / norm(full).max(1e-300);
        ensure(e <= 1e-12, || {
            format!("oracle {i}: explicit full sample differs by {e:.3e}")
        })?;
    }
    let mut a = <SolverRng as rand::SeedableRng>::seed_from_u64(9);
    let mut b = a.clone();
    let first = toy.sample_batch(BatchPurpose::Hessian, 7, &mut a);
    let second = toy.sample_batch(BatchPurpose::Hessian, 7, &mut b);
    ensure(first == second, || {
        "same rng state gave different batches".into()
    })?;
    Ok("full batches bitwise equal, sampler reproducible".into())
}

fn stochastic_replay(_: Option<Fault>) -> Result<String, String> {
    let (toy, c) = toy(vec![0.0, 0.3]);
    let d = StochasticOracles::dims(&toy);
    let l = c.l.unwrap();
    let mut cfg = SolverConfig::stochastic(StepSizes {
        alpha: 1.0 / l,
        beta: 1.0,
        eta: 1.0 / l,
    });
    cfg.outer_iters = 10;
    cfg.inner_iters = 20;
    cfg.seed = 11;
    let r = Preference::uniform(2);
    let run = || {
        run_stochastic(&toy, &cfg, &r, &vec![0.0; d.p], &vec![0.0; d.q], Some(&c)).map_err(err_str)
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "two runs with one seed differ".into())?;
    let want = expected_counters(&cfg, 2, Algorithm::Stochastic);
    ensure(a.counters == want, || {
        format!("counters {:?} != {:?}", a.counters, want)
    })?;
    Ok("identical traces, counters match".into())
}

fn ns_bias_decay(_: Option<Fault>) -> Result<String, String> {
    let (pb, c) = quadratic(4, 5, 2, 8);
    let alpha = 1.0 / c.l.unwrap();
    let x = point(4, 1.5, 0.0);
    let cap = (1.0 - alpha * c.mu_g).powi(8) + 0.05;
    let mut worst = 0.0_f64;
    for s in 0..2 {
        let truth = pb.true_hypergradient(s, &x);
        let mut errs = Vec::new();
        for depth in [8, 16, 32, 64] {
            let mut cnt = OracleCounters::default();
            let lower = lower_level_solve(&pb, &x, &[0.0; 5], depth, alpha, true, &mut cnt)
                .map_err(err_str)?;
            let g = hypergrad_ns(&pb, &x, &lower, s, alpha, &mut cnt).map_err(err_str)?;
            errs.push(norm(&sub(&truth, &g)));
        }
        for w in errs.windows(2) {
            let ratio = w[1] / w[0];
            ensure(w[1] < w[0] && ratio <= cap, || {
                format!("objective {s}: errors {errs:?}, ratio cap {cap:.4}")
            })?;
            worst = worst.max(ratio);
        }
    }
    Ok(format!("worst ratio {worst:.4} (cap {cap:.4})"))
}

/// `g = ½ yᵀH y − xᵀy` with a fixed diagonal `H`; only the Hessian oracle
/// matters here.
struct FixedHessian(Vec<f64>);

impl StochasticOracles for FixedHessian {
    fn dims(&self) -> Dims {
        Dims {
            p: self.0.len(),
            q: self.0.len(),
            s: 1,
        }
    }
    fn sample_batch(&self, _: BatchPurpose, _: usize, _: &mut SolverRng) -> Batch {
        Batch::Full
    }
    fn ul_value(&self, _: usize, _: &[f64], y: &[f64], _: &Batch) -> f64 {
        0.5 * norm_sq(y)
    }
    fn ul_grad_x(&self, _: usize, x: &[f64], _: &[f64], _: &Batch) -> Vec<f64> {
        vec![0.0; x.len()]
    }
    fn ul_grad_y(&self, _: usize, _: &[f64], y: &[f64], _: &Batch) -> Vec<f64> {
        y.to_vec()
    }
    fn ll_grad_y(&self, x: &[f64], y: &[f64], _: &Batch) -> Vec<f64> {
        self.0
            .iter()
            .zip(y.iter().zip(x))
            .map(|(h, (y, x))| h * y - x)
            .collect()
    }
    fn ll_hvp(&self, _: &[f64], _: &[f64], v: &[f64], _: &Batch) -> Vec<f64> {
        self.0.iter().zip(v).map(|(h, v)| h * v).collect()
    }
    fn ll_jvp(&self, _: &[f64], _: &[f64], v: &[f64], _: &Batch) -> Vec<f64> {
        v.iter().map(|v| -v).collect()
    }
}

fn neumann_hvp(_: Option<Fault>) -> Result<String, String> {
    let h = vec![1.0, 2.0, 5.0];
    let pb = FixedHessian(h.clone());
    let (mu, l) = (1.0, 5.0);
    let eta = 1.0 / l;
    let v0 = vec![1.0, -2.0, 0.5];
    let exact: Vec<f64> = v0.iter().zip(&h).map(|(v, h)| v / h).collect();
    for depth in [10usize, 20, 40] {
        let batches = vec![Batch::Full; depth];
        let mut cnt = OracleCounters::default();
        let got = stochastic_hvp_neumann(&pb, &[0.0; 3], &[0.0; 3], &v0, eta, &batches, &mut cnt)
            .map_err(err_str)?;
        let series: Vec<f64> = v0
            .iter()
            .zip(&h)
            .map(|(v, h)| {
                let ratio = 1.0 - eta * h;
                eta * v * (0..=depth).map(|i| ratio.powi(i as i32)).sum::<f64>()
            })
            .collect();
        let e = norm(&sub(&got, &series));
        ensure(e <= 1e-12, || {
            format!("Q = {depth}: series mismatch {e:.3e}")
        })?;
        let bound = (1.0 - eta * mu).powi(depth as i32 + 1) * norm(&exact) * (l / mu);
        let gap = norm(&sub(&got, &exact));
        ensure(gap <= bound, || {
            format!("Q = {depth}: gap {gap:.3e} above bound {bound:.3e}")
        })?;
    }
    Ok("Q = 10, 20, 40 within bounds".into())
}

fn stochastic_full_batch(_: Option<Fault>) -> Result<String, String> {
    let (toy, c) = toy(vec![0.0, 0.3]);
    let d = DeterministicOracles::dims(&toy);
    let l = c.l.unwrap();
    let mut cfg = SolverConfig::deterministic(StepSizes {
        alpha: 1.0 / l,
        beta: 5.0,
        eta: 1.0 / l,
    });
    cfg.option = HypergradOption::Cg;
    cfg.outer_iters = 150;
    cfg.inner_iters = 200;
    cfg.cg_iters = d.q;
    cfg.neumann_depth = 200;
    let r = Preference::uniform(2);
    let (x0, y0) = (vec![0.0; d.p], vec![0.0; d.q]);
    let det = run_deterministic(&toy, &cfg, &r, &x0, &y0, None).map_err(err_str)?;
    let sto = run_stochastic(&FullBatch(&toy), &cfg, &r, &x0, &y0, None).map_err(err_str)?;
    let (a, b) = (det.final_phi().unwrap(), sto.final_phi().unwrap());
    let gap = a
        .iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    ensure(gap <= 1e-3, || format!("final phi differs by {gap:.3e}"))?;
    Ok(format!("final phi gap {gap:.2e}"))
}

fn rate_regression(_: Option<Fault>) -> Result<String, String> {
    let (pb, c) = make_quadratic(&rate_spec()).map_err(err_str)?;
    let r = Preference::uniform(2);
    let mut cfg =
        SolverConfig::deterministic(StepSizes::from_constants(&c, r.max()).map_err(err_str)?);
    cfg.outer_iters = 500;
    cfg.inner_iters = 64;
    cfg.option = HypergradOption::Ns;
    let d = pb.dims();
    let trace = run_deterministic(&pb, &cfg, &r, &vec![0.0; d.p], &vec![0.0; d.q], None)
        .map_err(err_str)?;
    let gaps: Vec<f64> = trace
        .records
        .iter()
        .map(|r| r.true_d_norm_sq.unwrap())
        .collect();
    let avg = |k: usize| gaps[..k].iter().sum::<f64>() / k as f64;
    let ratio = avg(400) / avg(200);
    let min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(ratio <= 0.65 && min <= 1e-6, || {
        format!("average ratio {ratio:.4}, min gap {min:.3e}")
    })?;
    Ok(format!("average ratio {ratio:.4}, min gap {min:.3e}"))
}

/// Well-conditioned two-objective quadratic used by the rate check.
pub fn rate_spec() -> QuadraticBilevelSpec {
    QuadraticBilevelSpec::random_with(
        4,
        4,
        2,
        3,
        mobl::benchmarks::QuadraticShape {
            m_scale: 0.5,
            shift: 1.0,
            coupling: 0.5,
            target_scale: 1.0,
        },
    )
}
