//! Trace CSV and JSON run-record formats.
//!
//! The CSV has one row per outer iteration with columns
//! `k, phi_1..phi_S, lambda_1..lambda_S, d_norm_sq, true_d_norm_sq, gc_f,
//! gc_g, jv_g, hv_g`. Floats use 17 significant digits, so reading a trace
//! back reproduces every value bit for bit. An unavailable `true_d_norm_sq`
//! is an empty field.

use std::io::{Read, Write};
use std::path::Path;

use mobl::{IterationRecord, OracleCounters, RunTrace, SimplexWeights, Termination};
use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;
use crate::error::{CliError, CliResult};

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(s: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((1..=s).map(|i| format!("phi_{i}")));
    h.extend((1..=s).map(|i| format!("lambda_{i}")));
    for c in [
        "d_norm_sq",
        "true_d_norm_sq",
        "gc_f",
        "gc_g",
        "jv_g",
        "hv_g",
    ] {
        h.push(c.into());
    }
    h
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Writes `trace` as CSV for a problem with `s` objectives.
pub fn write_trace<W: Write>(w: W, trace: &RunTrace, s: usize) -> csv::Result<()> {
    let mut out = csv_writer(w);
    out.write_record(header(s))?;
    for r in &trace.records {
        let mut row = vec![r.k.to_string()];
        row.extend(r.phi.iter().map(|v| format_float(*v)));
        row.extend(r.lambda.as_slice().iter().map(|v| format_float(*v)));
        row.push(format_float(r.d_norm_sq));
        row.push(r.true_d_norm_sq.map(format_float).unwrap_or_default());
        row.extend(r.counters.as_array().iter().map(|c| c.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &RunTrace, s: usize) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::write(path, e))?;
    write_trace(std::io::BufWriter::new(file), trace, s)
        .map_err(|e| CliError::write(path, std::io::Error::other(e)))
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Parses a trace CSV back into iteration records. The stream position of
/// stochastic runs is not part of the CSV; it lives in the run record.
pub fn read_trace<R: Read>(r: R) -> Result<Vec<IterationRecord>, TraceReadError> {
    let mut rd = csv::ReaderBuilder::new().from_reader(r);
    let head = rd.headers()?.clone();
    let cols = head.len();
    if cols < 7 || (cols - 7) % 2 != 0 || head.get(0) != Some("k") {
        return Err(TraceReadError::Row {
            row: 0,
            message: format!("unexpected header with {cols} columns"),
        });
    }
    let s = (cols - 7) / 2;
    let mut records = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let bad = |message: String| TraceReadError::Row {
            row: i + 1,
            message,
        };
        let float = |j: usize| -> Result<f64, TraceReadError> {
            row[j]
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", &head[j])))
        };
        let int = |j: usize| -> Result<u64, TraceReadError> {
            row[j]
                .parse::<u64>()
                .map_err(|e| bad(format!("column {}: {e}", &head[j])))
        };
        let phi = (1..=s).map(float).collect::<Result<Vec<_>, _>>()?;
        let lambda = (s + 1..=2 * s).map(float).collect::<Result<Vec<_>, _>>()?;
        let lambda = SimplexWeights::new(lambda).map_err(|e| bad(e.to_string()))?;
        let d = 2 * s + 1;
        let true_d = if row[d + 1].is_empty() {
            None
        } else {
            Some(float(d + 1)?)
        };
        records.push(IterationRecord {
            k: int(0)? as usize,
            phi,
            lambda,
            d_norm_sq: float(d)?,
            counters: OracleCounters {
                gc_f: int(d + 2)?,
                gc_g: int(d + 3)?,
                jv_g: int(d + 4)?,
                hv_g: int(d + 5)?,
            },
            true_d_norm_sq: true_d,
            rng_word_pos: None,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterRecord {
    pub gc_f: u64,
    pub gc_g: u64,
    pub jv_g: u64,
    pub hv_g: u64,
}

impl From<OracleCounters> for CounterRecord {
    fn from(c: OracleCounters) -> Self {
        Self {
            gc_f: c.gc_f,
            gc_g: c.gc_g,
            jv_g: c.jv_g,
            hv_g: c.hv_g,
        }
    }
}

impl From<CounterRecord> for OracleCounters {
    fn from(c: CounterRecord) -> Self {
        Self {
            gc_f: c.gc_f,
            gc_g: c.gc_g,
            jv_g: c.jv_g,
            hv_g: c.hv_g,
        }
    }
}

/// Problem metadata reported alongside a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInfo {
    pub p: usize,
    pub q: usize,
    pub s: usize,
    pub mu_g: f64,
    pub l: Option<f64>,
    pub lipschitz_phi: Option<f64>,
    pub condition_number: Option<f64>,
}

/// JSON record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ResolvedConfig,
    pub problem_info: ProblemInfo,
    /// `ok` or `failed`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub termination: String,
    pub iterations: usize,
    pub final_x: Vec<f64>,
    pub final_y: Vec<f64>,
    pub final_phi: Option<Vec<f64>>,
    pub final_d_norm_sq: Option<f64>,
    pub counters: CounterRecord,
    /// Per-iteration random-stream word positions (stochastic runs only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rng_word_pos: Option<Vec<u128>>,
    /// Only written when `output.record_wall_time` is set, so that records
    /// stay byte-identical across repeated runs by default.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

impl RunRecord {
    pub fn new(
        config: ResolvedConfig,
        problem_info: ProblemInfo,
        trace: &RunTrace,
        error: Option<String>,
        wall_time_s: Option<f64>,
    ) -> Self {
        let positions: Option<Vec<u128>> = trace.records.iter().map(|r| r.rng_word_pos).collect();
        Self {
            config,
            problem_info,
            status: if error.is_some() { "failed" } else { "ok" }.into(),
            error,
            termination: trace.termination.as_str().into(),
            iterations: trace.records.len(),
            final_x: trace.final_x.clone(),
            final_y: trace.final_y.clone(),
            final_phi: trace.final_phi().map(<[f64]>::to_vec),
            final_d_norm_sq: trace.final_d_norm_sq(),
            counters: trace.counters.into(),
            rng_word_pos: positions.filter(|p| !p.is_empty()),
            wall_time_s,
        }
    }
}

pub fn parse_termination(s: &str) -> Option<Termination> {
    [
        Termination::Completed,
        Termination::StopTolerance,
        Termination::Stationary,
    ]
    .into_iter()
    .find(|t| t.as_str() == s)
}

/// Rebuilds a [`RunTrace`] from its CSV rows and JSON record.
pub fn assemble_trace(
    mut records: Vec<IterationRecord>,
    record: &RunRecord,
) -> Result<RunTrace, String> {
    if let Some(pos) = &record.rng_word_pos {
        if pos.len() != records.len() {
            return Err(format!(
                "record lists {} stream positions for {} rows",
                pos.len(),
                records.len()
            ));
        }
        for (r, p) in records.iter_mut().zip(pos) {
            r.rng_word_pos = Some(*p);
        }
    }
    let termination = parse_termination(&record.termination)
        .ok_or_else(|| format!("unknown termination '{}'", record.termination))?;
    Ok(RunTrace {
        records,
        final_x: record.final_x.clone(),
        final_y: record.final_y.clone(),
        counters: record.counters.into(),
        termination,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::write(path, std::io::Error::other(e)))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::write(path, e))
}
