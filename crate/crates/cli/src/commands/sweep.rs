use std::path::{Path, PathBuf};

use mobl::Preference;
use rayon::prelude::*;

use super::run::{create_dir, run_and_write};
use crate::config::{self, RunSetup};
use crate::error::{CliError, CliResult, ConfigError};
use crate::trace_io::format_float;

fn grid_error(message: String) -> ConfigError {
    ConfigError {
        source: "--grid".into(),
        line: None,
        field: None,
        message,
    }
}

/// Parses a preference grid for `s` objectives.
///
/// * `preferred` / `extreme`: one emphasis pattern per objective
///   (0.8/0.05 and 0.96/0.01).
/// * `uniform`: the single uniform preference.
/// * `r1:0.1,0.3,0.5`: two objectives with `r = (r₁, 1 − r₁)`.
/// * `0.2,0.8;0.5,0.5`: explicit vectors separated by `;`.
pub fn parse_grid(spec: &str, s: usize) -> Result<Vec<(Preference, String)>, ConfigError> {
    let spec = spec.trim();
    let weak = |e: mobl::MoblError| grid_error(e.to_string());
    let numbers = |list: &str| -> Result<Vec<f64>, ConfigError> {
        list.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| grid_error(format!("'{}' is not a number", t.trim())))
            })
            .collect()
    };
    let grid: Vec<(Preference, String)> = match spec {
        "preferred" => (0..s)
            .map(|i| {
                Ok((
                    Preference::preferred(s, i).map_err(weak)?,
                    "preferred".into(),
                ))
            })
            .collect::<Result<_, ConfigError>>()?,
        "extreme" => (0..s)
            .map(|i| {
                Ok((
                    Preference::extremely_preferred(s, i).map_err(weak)?,
                    "extreme".into(),
                ))
            })
            .collect::<Result<_, ConfigError>>()?,
        "uniform" => vec![(Preference::uniform(s), "uniform".into())],
        _ => {
            if let Some(list) = spec.strip_prefix("r1:") {
                if s != 2 {
                    return Err(grid_error(format!(
                        "the r1: grid needs two objectives, the problem has {s}"
                    )));
                }
                numbers(list)?
                    .into_iter()
                    .map(|r1| {
                        Ok((
                            Preference::new(vec![r1, 1.0 - r1]).map_err(weak)?,
                            "r1".into(),
                        ))
                    })
                    .collect::<Result<_, ConfigError>>()?
            } else {
                spec.split(';')
                    .filter(|part| !part.trim().is_empty())
                    .map(|part| {
                        let w = numbers(part)?;
                        if w.len() != s {
                            return Err(grid_error(format!(
                                "vector '{}' has {} components for {s} objectives",
                                part.trim(),
                                w.len()
                            )));
                        }
                        Ok((Preference::new(w).map_err(weak)?, "weights".into()))
                    })
                    .collect::<Result<_, ConfigError>>()?
            }
        }
    };
    if grid.is_empty() {
        return Err(grid_error("the grid is empty".into()));
    }
    Ok(grid)
}

struct Entry {
    trace_path: PathBuf,
    outcome: CliResult<(mobl::RunTrace, Option<String>)>,
}

/// `mobl sweep`: one run per grid preference, a trace and record per run
/// under `<dir>/traces`, and `<dir>/summary.csv`.
pub fn cmd_sweep(
    config_path: &Path,
    overrides: &[String],
    grid: &str,
    jobs: usize,
) -> CliResult<()> {
    let loaded = config::load(config_path, overrides)?;
    let base = config::resolve(&loaded, None)?;
    let s = base.problem.dims().s;
    let prefs = parse_grid(grid, s)?;
    let setups: Vec<RunSetup> = prefs
        .into_iter()
        .map(|p| config::resolve(&loaded, Some(p)))
        .collect::<Result<_, _>>()?;
    if jobs == 0 {
        return Err(grid_error("--jobs must be at least 1".into()).into());
    }

    let dir = base.resolved.output.dir.clone();
    let traces = dir.join("traces");
    create_dir(&traces)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    let entries: Vec<Entry> = pool.install(|| {
        setups
            .par_iter()
            .enumerate()
            .map(|(i, setup)| {
                let trace_path = traces.join(format!("run_{i:03}.csv"));
                let record_path = traces.join(format!("run_{i:03}.json"));
                let outcome = run_and_write(setup, &trace_path, &record_path);
                Entry {
                    trace_path,
                    outcome,
                }
            })
            .collect()
    });

    let summary_path = dir.join("summary.csv");
    let mut rows = Vec::with_capacity(entries.len());
    let mut failed = 0;
    for (i, (entry, setup)) in entries.into_iter().zip(&setups).enumerate() {
        let (trace, error) = entry.outcome?;
        let r = setup
            .preference
            .as_ref()
            .map(|r| r.as_slice().to_vec())
            .unwrap_or_default();
        let last = trace.last();
        let mut row = vec![i.to_string()];
        row.extend(r.iter().map(|v| format_float(*v)));
        match last {
            Some(rec) => row.extend(rec.phi.iter().map(|v| format_float(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), s)),
        }
        row.push(last.map(|r| format_float(r.d_norm_sq)).unwrap_or_default());
        row.push(
            last.and_then(|r| r.true_d_norm_sq)
                .map(format_float)
                .unwrap_or_default(),
        );
        row.push(trace.termination.as_str().into());
        row.push(if error.is_some() { "failed" } else { "ok" }.into());
        row.push(
            entry
                .trace_path
                .strip_prefix(&dir)
                .unwrap_or(&entry.trace_path)
                .display()
                .to_string(),
        );
        match &error {
            Some(msg) => {
                failed += 1;
                println!("run {i:03} r={r:?}: failed: {msg}");
            }
            None => println!(
                "run {i:03} r={r:?}: {} iterations, final d_norm_sq {}",
                trace.records.len(),
                last.map_or("n/a".into(), |r| format!("{:.6e}", r.d_norm_sq))
            ),
        }
        rows.push(row);
    }
    write_summary(&summary_path, s, &rows)?;
    println!("summary: {}", summary_path.display());
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} sweep runs failed",
            rows.len()
        )));
    }
    Ok(())
}

pub fn summary_header(s: usize) -> Vec<String> {
    let mut h = vec!["run".to_string()];
    h.extend((1..=s).map(|i| format!("r_{i}")));
    h.extend((1..=s).map(|i| format!("phi_{i}")));
    for c in [
        "d_norm_sq",
        "true_d_norm_sq",
        "termination",
        "status",
        "trace",
    ] {
        h.push(c.into());
    }
    h
}

fn write_summary(path: &Path, s: usize, rows: &[Vec<String>]) -> CliResult<()> {
    let io = |e: csv::Error| CliError::write(path, std::io::Error::other(e));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(io)?;
    w.write_record(summary_header(s)).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_grids() {
        let g = parse_grid("preferred", 3).unwrap();
        assert_eq!(g.len(), 3);
        for (i, (r, label)) in g.iter().enumerate() {
            assert_eq!(r, &Preference::preferred(3, i).unwrap());
            assert_eq!(label, "preferred");
        }
        let g = parse_grid("extreme", 2).unwrap();
        assert_eq!(g[1].0, Preference::extremely_preferred(2, 1).unwrap());
        assert_eq!(
            parse_grid("uniform", 4).unwrap()[0].0,
            Preference::uniform(4)
        );
    }

    #[test]
    fn r1_and_explicit_grids() {
        let g = parse_grid("r1:0.1, 0.5,0.9", 2).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0].0.as_slice(), &[0.1, 0.9][..]);
        assert!(parse_grid("r1:0.5", 3).is_err());
        let g = parse_grid("0.25,0.75;0.5,0.5", 2).unwrap();
        assert_eq!(g[1].0.as_slice(), &[0.5, 0.5][..]);
        assert!(parse_grid("0.5,0.6", 2).is_err());
        assert!(parse_grid("0.5", 2).is_err());
        assert!(parse_grid("", 2).is_err());
        assert!(parse_grid("r1:x", 2).is_err());
    }
}
