use std::path::Path;
use std::time::Instant;

use mobl::optimizer::{run_deterministic, run_nonpreference, run_stochastic, Algorithm};
use mobl::{AsStochastic, RunError, RunTrace};

use crate::config::{self, BuiltProblem, RunSetup};
use crate::error::{CliError, CliResult};
use crate::trace_io::{write_json, write_trace_file, ProblemInfo, RunRecord};

/// Runs the configured algorithm on the configured problem.
pub fn execute(setup: &RunSetup) -> Result<RunTrace, RunError> {
    let c = &setup.resolved;
    let (cfg, x0, y0) = (&c.solver, c.x0.as_slice(), c.y0.as_slice());
    let r = setup.preference.as_ref();
    let constants = Some(&setup.constants);
    match (&setup.problem, setup.algorithm, r) {
        (_, Algorithm::NonPreference, _) | (_, _, None) => match &setup.problem {
            BuiltProblem::Quadratic(p) => run_nonpreference(p, cfg, x0, y0),
            BuiltProblem::Hypercleaning(p) => run_nonpreference(p, cfg, x0, y0),
        },
        (BuiltProblem::Quadratic(p), Algorithm::Deterministic, Some(r)) => {
            run_deterministic(p, cfg, r, x0, y0, None)
        }
        (BuiltProblem::Hypercleaning(p), Algorithm::Deterministic, Some(r)) => {
            run_deterministic(p, cfg, r, x0, y0, None)
        }
        (BuiltProblem::Quadratic(p), Algorithm::Stochastic, Some(r)) => {
            run_stochastic(&AsStochastic(p), cfg, r, x0, y0, constants)
        }
        (BuiltProblem::Hypercleaning(p), Algorithm::Stochastic, Some(r)) => {
            run_stochastic(p, cfg, r, x0, y0, constants)
        }
    }
}

pub fn problem_info(setup: &RunSetup) -> ProblemInfo {
    let d = setup.problem.dims();
    let c = &setup.constants;
    ProblemInfo {
        p: d.p,
        q: d.q,
        s: d.s,
        mu_g: c.mu_g,
        l: c.l,
        lipschitz_phi: c.lipschitz_phi().ok(),
        condition_number: match &setup.problem {
            BuiltProblem::Quadratic(p) => Some(p.condition_number()),
            BuiltProblem::Hypercleaning(_) => None,
        },
    }
}

/// Executes `setup`, writes its trace CSV and run record, and returns the
/// trace with the error message of a failed run.
pub fn run_and_write(
    setup: &RunSetup,
    trace_path: &Path,
    record_path: &Path,
) -> CliResult<(RunTrace, Option<String>)> {
    let start = Instant::now();
    let outcome = execute(setup);
    let elapsed = start.elapsed().as_secs_f64();
    let (trace, error) = match outcome {
        Ok(t) => (t, None),
        Err(e) => {
            let msg = e.to_string();
            (*e.trace, Some(msg))
        }
    };
    write_trace_file(trace_path, &trace, setup.problem.dims().s)?;
    let wall = setup.resolved.output.record_wall_time.then_some(elapsed);
    let record = RunRecord::new(
        setup.resolved.clone(),
        problem_info(setup),
        &trace,
        error.clone(),
        wall,
    );
    write_json(record_path, &record)?;
    Ok((trace, error))
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}

fn vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// `mobl run`: one run, one trace, one record.
pub fn cmd_run(config_path: &Path, overrides: &[String]) -> CliResult<()> {
    let loaded = config::load(config_path, overrides)?;
    let setup = config::resolve(&loaded, None)?;
    let out = &setup.resolved.output;
    create_dir(&out.dir)?;
    let (trace, error) = run_and_write(&setup, &out.trace_path(), &out.record_path())?;

    println!(
        "{} run, {} iterations, termination: {}",
        setup.resolved.algorithm,
        trace.records.len(),
        if error.is_some() {
            "failed"
        } else {
            trace.termination.as_str()
        }
    );
    match trace.last() {
        Some(r) => {
            println!("final phi: {}", vector(&r.phi));
            println!("final d_norm_sq: {:.6e}", r.d_norm_sq);
        }
        None => println!("final phi: none (no iterations)"),
    }
    let c = trace.counters;
    println!(
        "counters: gc_f={} gc_g={} jv_g={} hv_g={}",
        c.gc_f, c.gc_g, c.jv_g, c.hv_g
    );
    println!("trace: {}", out.trace_path().display());
    println!("record: {}", out.record_path().display());
    match error {
        None => Ok(()),
        Some(msg) => Err(CliError::Runtime(msg)),
    }
}
