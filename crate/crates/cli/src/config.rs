//! Run configuration files: TOML with `[problem]`, `[solver]`, `[preference]`
//! and `[output]` sections, plus `--set key=value` overrides and the
//! `MOBL_SEED` environment override.

use std::path::{Path, PathBuf};

use mobl::benchmarks::{
    make_hypercleaning_toy, make_quadratic, HypercleaningToy, HypercleaningToySpec,
    QuadraticBilevel, QuadraticBilevelSpec, QuadraticShape,
};
use mobl::optimizer::Algorithm;
use mobl::{DeterministicOracles, HypergradOption, Preference, ProblemConstants, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Environment variable that replaces every seed in the config.
pub const SEED_ENV: &str = "MOBL_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Quadratic,
    Hypercleaning,
}

/// `[problem]`. Which keys apply depends on `family`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub family: Family,
    pub seed: Option<u64>,
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub s: Option<usize>,
    pub m_scale: Option<f64>,
    pub shift: Option<f64>,
    pub coupling: Option<f64>,
    pub target_scale: Option<f64>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub a_targets: Option<Vec<Vec<f64>>>,
    pub c_targets: Option<Vec<Vec<f64>>>,
    pub feature_dim: Option<usize>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub corruption: Option<Vec<f64>>,
    pub regularizer: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
}

const QUADRATIC_KEYS: &[&str] = &[
    "p",
    "q",
    "s",
    "m_scale",
    "shift",
    "coupling",
    "target_scale",
    "a",
    "b",
    "a_targets",
    "c_targets",
];
const HYPERCLEANING_KEYS: &[&str] = &[
    "feature_dim",
    "n_train",
    "n_val",
    "corruption",
    "regularizer",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmChoice {
    Deterministic,
    Stochastic,
}

/// `[solver]`: every [`SolverConfig`] field, all optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub algorithm: Option<AlgorithmChoice>,
    pub outer_iters: Option<usize>,
    pub inner_iters: Option<usize>,
    pub cg_iters: Option<usize>,
    pub neumann_depth: Option<usize>,
    pub ll_step: Option<f64>,
    pub ul_step: Option<f64>,
    pub hvp_step: Option<f64>,
    pub tradeoff: Option<f64>,
    pub option: Option<HypergradOption>,
    pub ll_batch: Option<usize>,
    pub ul_batch: Option<usize>,
    pub jacobian_batch: Option<usize>,
    pub hessian_batch: Option<usize>,
    pub seed: Option<u64>,
    pub warm_start_y: Option<bool>,
    pub warm_start_v: Option<bool>,
    pub stop_tol: Option<f64>,
    pub exact_counters: Option<bool>,
    pub cg_tol: Option<f64>,
    pub wc_tol: Option<f64>,
    pub wc_max_iters: Option<usize>,
}

/// `[preference]`: either `pattern` (with `index` for the emphasis patterns)
/// or an explicit `weights` vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSection {
    pub pattern: Option<String>,
    pub index: Option<usize>,
    pub weights: Option<Vec<f64>>,
}

/// `[output]`. Relative paths resolve against the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub trace: Option<String>,
    pub record: Option<String>,
    pub record_wall_time: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub preference: Option<PreferenceSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// A parsed config together with the text it came from, for error locations.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub file: ConfigFile,
    source: String,
    text: String,
    overridden: Vec<String>,
}

/// Reads `path`, applies `overrides` and the `MOBL_SEED` variable.
pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        source: source.clone(),
        line: None,
        field: None,
        message: format!("cannot read config: {e}"),
    })?;
    let seed = std::env::var(SEED_ENV).ok();
    parse(&text, &source, overrides, seed.as_deref())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_error(text: &str, source: &str, e: &toml::de::Error) -> ConfigError {
    ConfigError {
        source: source.to_string(),
        line: e.span().map(|s| line_of(text, s.start)),
        field: None,
        message: e.message().trim().to_string(),
    }
}

fn override_error(field: Option<String>, message: String) -> ConfigError {
    ConfigError {
        source: "--set".into(),
        line: None,
        field,
        message,
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<String, ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| override_error(None, format!("expected key=value, got '{item}'")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(override_error(
            Some(key.to_string()),
            "keys look like section.name".into(),
        ));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            override_error(Some(key.to_string()), format!("'{part}' is not a section"))
        })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(key.to_string())
}

/// Parses config text. `seed_env` is the value of `MOBL_SEED`, if set.
pub fn parse(
    text: &str,
    source: &str,
    overrides: &[String],
    seed_env: Option<&str>,
) -> Result<LoadedConfig, ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, source, &e))?;
    let mut overridden = Vec::new();
    for item in overrides {
        overridden.push(apply_override(&mut table, item)?);
    }
    let mut file: ConfigFile = match toml::Value::Table(table).try_into() {
        Ok(f) => f,
        Err(e) => {
            // report against the file when the file alone is already invalid
            if let Err(fe) = toml::from_str::<ConfigFile>(text) {
                return Err(toml_error(text, source, &fe));
            }
            return Err(override_error(None, e.message().trim().to_string()));
        }
    };
    if let Some(raw) = seed_env {
        let seed: u64 = raw.trim().parse().map_err(|_| ConfigError {
            source: SEED_ENV.into(),
            line: None,
            field: None,
            message: format!("expected an unsigned integer, got '{raw}'"),
        })?;
        file.problem.seed = Some(seed);
        file.solver.seed = Some(seed);
    }
    Ok(LoadedConfig {
        file,
        source: source.to_string(),
        text: text.to_string(),
        overridden,
    })
}

/// Line of `key = …` inside `[section]`.
fn locate(text: &str, field: &str) -> Option<usize> {
    let (section, key) = field.split_once('.')?;
    let mut inside = false;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            inside = t.trim_matches(|c| c == '[' || c == ']').trim() == section;
        } else if inside {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl LoadedConfig {
    /// An error about `field`, pointing at its line when it came from the file.
    pub fn error(&self, field: &str, message: impl Into<String>) -> ConfigError {
        if self.overridden.iter().any(|k| k == field) {
            return override_error(Some(field.to_string()), message.into());
        }
        ConfigError {
            source: self.source.clone(),
            line: locate(&self.text, field),
            field: Some(field.to_string()),
            message: message.into(),
        }
    }
}

/// A constructed benchmark.
#[derive(Debug, Clone)]
pub enum BuiltProblem {
    Quadratic(QuadraticBilevel),
    Hypercleaning(HypercleaningToy),
}

impl BuiltProblem {
    pub fn dims(&self) -> mobl::Dims {
        match self {
            BuiltProblem::Quadratic(p) => p.dims(),
            BuiltProblem::Hypercleaning(p) => DeterministicOracles::dims(p),
        }
    }
}

/// `[problem]` with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ResolvedProblem {
    Quadratic {
        p: usize,
        q: usize,
        s: usize,
        seed: u64,
        m_scale: f64,
        shift: f64,
        coupling: f64,
        target_scale: f64,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        a: Option<Vec<Vec<f64>>>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        b: Option<Vec<Vec<f64>>>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        a_targets: Option<Vec<Vec<f64>>>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        c_targets: Option<Vec<Vec<f64>>>,
    },
    Hypercleaning(HypercleaningToySpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPreference {
    /// `preferred`, `extreme`, `uniform`, `weights`, `grid` or `none`.
    pub pattern: String,
    pub index: Option<usize>,
    /// `None` only for the preference-free algorithm.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedOutput {
    pub dir: PathBuf,
    pub trace: String,
    pub record: String,
    pub record_wall_time: bool,
}

impl ResolvedOutput {
    pub fn trace_path(&self) -> PathBuf {
        self.dir.join(&self.trace)
    }

    pub fn record_path(&self) -> PathBuf {
        self.dir.join(&self.record)
    }
}

/// The complete configuration of one run, as written to the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub algorithm: String,
    pub problem: ResolvedProblem,
    pub solver: SolverConfig,
    pub preference: ResolvedPreference,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub output: ResolvedOutput,
}

/// Everything needed to execute one run.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub problem: BuiltProblem,
    pub constants: ProblemConstants,
    pub algorithm: Algorithm,
    pub preference: Option<Preference>,
    pub resolved: ResolvedConfig,
}

pub fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Deterministic => "deterministic",
        Algorithm::Stochastic => "stochastic",
        Algorithm::NonPreference => "nonpreference",
    }
}

fn check_matrix(
    cfg: &LoadedConfig,
    field: &str,
    m: &[Vec<f64>],
    rows: usize,
    cols: usize,
) -> Result<(), ConfigError> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(cfg.error(field, format!("expected {rows} rows of length {cols}")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(cfg.error(field, "entries must be finite"));
    }
    Ok(())
}

fn build_quadratic(
    cfg: &LoadedConfig,
) -> Result<(BuiltProblem, ProblemConstants, ResolvedProblem), ConfigError> {
    let sec = &cfg.file.problem;
    let (p, q, s) = (sec.p.unwrap_or(10), sec.q.unwrap_or(10), sec.s.unwrap_or(3));
    for (name, v) in [("p", p), ("q", q), ("s", s)] {
        if v == 0 {
            return Err(cfg.error(&format!("problem.{name}"), "must be at least 1"));
        }
    }
    let d = QuadraticShape::default();
    let shape = QuadraticShape {
        m_scale: sec.m_scale.unwrap_or(d.m_scale),
        shift: sec.shift.unwrap_or(d.shift),
        coupling: sec.coupling.unwrap_or(d.coupling),
        target_scale: sec.target_scale.unwrap_or(d.target_scale),
    };
    for (name, v) in [
        ("m_scale", shape.m_scale),
        ("shift", shape.shift),
        ("coupling", shape.coupling),
        ("target_scale", shape.target_scale),
    ] {
        if !v.is_finite() {
            return Err(cfg.error(&format!("problem.{name}"), "must be finite"));
        }
    }
    let seed = sec.seed.unwrap_or(0);
    let mut spec = QuadraticBilevelSpec::random_with(p, q, s, seed, shape);
    if let Some(a) = &sec.a {
        check_matrix(cfg, "problem.a", a, q, q)?;
        spec.a = a.clone();
    }
    if let Some(b) = &sec.b {
        check_matrix(cfg, "problem.b", b, q, p)?;
        spec.bm = b.clone();
    }
    if let Some(t) = &sec.a_targets {
        check_matrix(cfg, "problem.a_targets", t, s, p)?;
        spec.a_targets = t.clone();
    }
    if let Some(t) = &sec.c_targets {
        check_matrix(cfg, "problem.c_targets", t, s, q)?;
        spec.c_targets = t.clone();
    }
    let (problem, constants) = make_quadratic(&spec).map_err(|e| {
        // after the shape checks above only A itself can be rejected
        let field = if sec.a.is_some() {
            "problem.a"
        } else {
            "problem.shift"
        };
        cfg.error(field, e.to_string())
    })?;
    let resolved = ResolvedProblem::Quadratic {
        p,
        q,
        s,
        seed,
        m_scale: shape.m_scale,
        shift: shape.shift,
        coupling: shape.coupling,
        target_scale: shape.target_scale,
        a: sec.a.clone(),
        b: sec.b.clone(),
        a_targets: sec.a_targets.clone(),
        c_targets: sec.c_targets.clone(),
    };
    Ok((BuiltProblem::Quadratic(problem), constants, resolved))
}

fn build_hypercleaning(
    cfg: &LoadedConfig,
) -> Result<(BuiltProblem, ProblemConstants, ResolvedProblem), ConfigError> {
    let sec = &cfg.file.problem;
    let mut spec = HypercleaningToySpec::preset(
        sec.feature_dim.unwrap_or(5),
        sec.n_train.unwrap_or(50),
        sec.n_val.unwrap_or(50),
        sec.seed.unwrap_or(0),
    );
    if let Some(c) = &sec.corruption {
        if let Some(bad) = c.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(cfg.error(
                "problem.corruption",
                format!("rate {bad} is outside [0, 1)"),
            ));
        }
        spec.corruption = c.clone();
    }
    if let Some(rho) = sec.regularizer {
        if rho <= 0.0 || !rho.is_finite() {
            return Err(cfg.error("problem.regularizer", "must be positive and finite"));
        }
        spec.regularizer = rho;
    }
    let (problem, constants) =
        make_hypercleaning_toy(&spec).map_err(|e| cfg.error("problem.family", e.to_string()))?;
    Ok((
        BuiltProblem::Hypercleaning(problem),
        constants,
        ResolvedProblem::Hypercleaning(spec),
    ))
}

fn reject_foreign_keys(cfg: &LoadedConfig) -> Result<(), ConfigError> {
    let sec = &cfg.file.problem;
    let set = |k: &str| -> bool {
        match k {
            "p" => sec.p.is_some(),
            "q" => sec.q.is_some(),
            "s" => sec.s.is_some(),
            "m_scale" => sec.m_scale.is_some(),
            "shift" => sec.shift.is_some(),
            "coupling" => sec.coupling.is_some(),
            "target_scale" => sec.target_scale.is_some(),
            "a" => sec.a.is_some(),
            "b" => sec.b.is_some(),
            "a_targets" => sec.a_targets.is_some(),
            "c_targets" => sec.c_targets.is_some(),
            "feature_dim" => sec.feature_dim.is_some(),
            "n_train" => sec.n_train.is_some(),
            "n_val" => sec.n_val.is_some(),
            "corruption" => sec.corruption.is_some(),
            "regularizer" => sec.regularizer.is_some(),
            _ => false,
        }
    };
    let (foreign, family) = match sec.family {
        Family::Quadratic => (HYPERCLEANING_KEYS, "quadratic"),
        Family::Hypercleaning => (QUADRATIC_KEYS, "hypercleaning"),
    };
    match foreign.iter().find(|k| set(k)) {
        Some(k) => Err(cfg.error(
            &format!("problem.{k}"),
            format!("not a parameter of the {family} family"),
        )),
        None => Ok(()),
    }
}

fn resolve_preference(
    cfg: &LoadedConfig,
    s: usize,
    preset: Option<(Preference, String)>,
) -> Result<(Option<Preference>, ResolvedPreference), ConfigError> {
    if let Some((r, pattern)) = preset {
        if r.len() != s {
            return Err(cfg.error(
                "preference.weights",
                format!(
                    "grid preference has {} components for {s} objectives",
                    r.len()
                ),
            ));
        }
        let weights = Some(r.as_slice().to_vec());
        return Ok((
            Some(r),
            ResolvedPreference {
                pattern,
                index: None,
                weights,
            },
        ));
    }
    let sec = cfg
        .file
        .preference
        .as_ref()
        .ok_or_else(|| cfg.error("preference", "the [preference] section is required"))?;
    let resolved =
        |pattern: &str, index: Option<usize>, r: &Option<Preference>| ResolvedPreference {
            pattern: pattern.to_string(),
            index,
            weights: r.as_ref().map(|r| r.as_slice().to_vec()),
        };
    let weak = |e: mobl::MoblError, field: &str| cfg.error(field, e.to_string());
    match (&sec.pattern, &sec.weights) {
        (Some(_), Some(_)) | (None, None) => Err(cfg.error(
            "preference.pattern",
            "set exactly one of preference.pattern and preference.weights",
        )),
        (None, Some(w)) => {
            if w.len() != s {
                return Err(cfg.error(
                    "preference.weights",
                    format!("{} components for {s} objectives", w.len()),
                ));
            }
            let r = Some(Preference::new(w.clone()).map_err(|e| weak(e, "preference.weights"))?);
            Ok((r.clone(), resolved("weights", None, &r)))
        }
        (Some(pattern), None) => {
            let index = sec.index.unwrap_or(0);
            let r = match pattern.as_str() {
                "preferred" => {
                    Some(Preference::preferred(s, index).map_err(|e| weak(e, "preference.index"))?)
                }
                "extreme" => Some(
                    Preference::extremely_preferred(s, index)
                        .map_err(|e| weak(e, "preference.index"))?,
                ),
                "uniform" | "none" if sec.index.is_some() => {
                    return Err(cfg.error(
                        "preference.index",
                        format!("pattern '{pattern}' takes no index"),
                    ))
                }
                "uniform" => Some(Preference::uniform(s)),
                "none" => None,
                other => {
                    return Err(cfg.error(
                        "preference.pattern",
                        format!(
                        "unknown pattern '{other}' (expected preferred, extreme, uniform or none)"
                    ),
                    ))
                }
            };
            let idx = matches!(pattern.as_str(), "preferred" | "extreme").then_some(index);
            Ok((r.clone(), resolved(pattern, idx, &r)))
        }
    }
}

fn solver_error(cfg: &LoadedConfig, e: mobl::MoblError) -> ConfigError {
    let msg = match &e {
        mobl::MoblError::Configuration(m) => m.clone(),
        other => other.to_string(),
    };
    let first = msg.split_whitespace().next().unwrap_or("");
    let field = format!("solver.{first}");
    if locate(&cfg.text, &field).is_some()
        || cfg.overridden.contains(&field)
        || is_solver_key(first)
    {
        cfg.error(&field, msg)
    } else {
        cfg.error("solver", msg)
    }
}

fn is_solver_key(k: &str) -> bool {
    [
        "outer_iters",
        "inner_iters",
        "cg_iters",
        "neumann_depth",
        "ll_step",
        "ul_step",
        "hvp_step",
        "tradeoff",
        "ll_batch",
        "ul_batch",
        "jacobian_batch",
        "hessian_batch",
        "stop_tol",
        "cg_tol",
        "wc_tol",
        "wc_max_iters",
    ]
    .contains(&k)
}

fn build_solver(
    cfg: &LoadedConfig,
    algorithm: Algorithm,
    constants: &ProblemConstants,
    r_max: f64,
) -> Result<SolverConfig, ConfigError> {
    let sec = &cfg.file.solver;
    let stochastic = algorithm == Algorithm::Stochastic;
    let derive = |field: &str, v: Option<f64>, derived: mobl::Result<f64>| {
        v.map_or_else(
            || {
                derived.map_err(|e| {
                    cfg.error(
                        &format!("solver.{field}"),
                        format!("must be given explicitly: {e}"),
                    )
                })
            },
            Ok,
        )
    };
    let l = constants
        .l
        .ok_or_else(|| mobl::MoblError::Configuration("smoothness constant L is unknown".into()));
    let alpha = derive(
        "ll_step",
        sec.ll_step,
        l.clone().map(|l| {
            if stochastic {
                2.0 / (l + constants.mu_g)
            } else {
                1.0 / l
            }
        }),
    )?;
    let beta = derive("ul_step", sec.ul_step, constants.ul_step(r_max))?;
    let eta = derive("hvp_step", sec.hvp_step, l.map(|l| 1.0 / l))?;
    let steps = mobl::StepSizes { alpha, beta, eta };
    let mut c = if stochastic {
        SolverConfig::stochastic(steps)
    } else {
        SolverConfig::deterministic(steps)
    };
    macro_rules! take {
        ($($f:ident),*) => { $( if let Some(v) = sec.$f { c.$f = v; } )* };
    }
    take!(
        outer_iters,
        inner_iters,
        cg_iters,
        neumann_depth,
        tradeoff,
        option,
        ll_batch,
        ul_batch,
        jacobian_batch,
        hessian_batch,
        seed,
        warm_start_y,
        warm_start_v,
        stop_tol,
        exact_counters,
        cg_tol,
        wc_tol,
        wc_max_iters
    );
    let checked = if stochastic {
        c.validate_stochastic(Some(constants))
    } else {
        c.validate(Some(constants))
    };
    checked.map_err(|e| solver_error(cfg, e))?;
    Ok(c)
}

fn start_point(
    cfg: &LoadedConfig,
    field: &str,
    v: &Option<Vec<f64>>,
    n: usize,
) -> Result<Vec<f64>, ConfigError> {
    match v {
        None => Ok(vec![0.0; n]),
        Some(v) if v.len() != n => Err(cfg.error(
            field,
            format!("length {} does not match dimension {n}", v.len()),
        )),
        Some(v) if v.iter().any(|x| !x.is_finite()) => {
            Err(cfg.error(field, "entries must be finite"))
        }
        Some(v) => Ok(v.clone()),
    }
}

/// Builds the problem and materializes every default. `preset` replaces the
/// `[preference]` section (used by sweeps); its string names the pattern.
pub fn resolve(
    cfg: &LoadedConfig,
    preset: Option<(Preference, String)>,
) -> Result<RunSetup, ConfigError> {
    reject_foreign_keys(cfg)?;
    let (problem, constants, resolved_problem) = match cfg.file.problem.family {
        Family::Quadratic => build_quadratic(cfg)?,
        Family::Hypercleaning => build_hypercleaning(cfg)?,
    };
    let dims = problem.dims();
    let (preference, resolved_pref) = resolve_preference(cfg, dims.s, preset)?;
    let algorithm = match (cfg.file.solver.algorithm, &preference) {
        (Some(AlgorithmChoice::Stochastic), None) => {
            return Err(cfg.error(
                "solver.algorithm",
                "the preference-free variant (pattern \"none\") is deterministic only",
            ))
        }
        (Some(AlgorithmChoice::Stochastic), Some(_)) => Algorithm::Stochastic,
        (_, None) => Algorithm::NonPreference,
        (_, Some(_)) => Algorithm::Deterministic,
    };
    let r_max = preference.as_ref().map_or(1.0, |r| r.max());
    let solver = build_solver(cfg, algorithm, &constants, r_max)?;
    let x0 = start_point(cfg, "problem.x0", &cfg.file.problem.x0, dims.p)?;
    let y0 = start_point(cfg, "problem.y0", &cfg.file.problem.y0, dims.q)?;
    let out = &cfg.file.output;
    let output = ResolvedOutput {
        dir: out.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        trace: out.trace.clone().unwrap_or_else(|| "trace.csv".into()),
        record: out.record.clone().unwrap_or_else(|| "run.json".into()),
        record_wall_time: out.record_wall_time.unwrap_or(false),
    };
    Ok(RunSetup {
        problem,
        constants,
        algorithm,
        preference,
        resolved: ResolvedConfig {
            algorithm: algorithm_name(algorithm).into(),
            problem: resolved_problem,
            solver,
            preference: resolved_pref,
            x0,
            y0,
            output,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "\
[problem]
family = \"quadratic\"
p = 3
q = 4
s = 2
seed = 5

[solver]
outer_iters = 10

[preference]
pattern = \"preferred\"
index = 1
";

    fn load_str(text: &str, overrides: &[&str]) -> Result<LoadedConfig, ConfigError> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        parse(text, "test.toml", &o, None)
    }

    #[test]
    fn defaults_are_materialized() {
        let cfg = load_str(BASIC, &[]).unwrap();
        let setup = resolve(&cfg, None).unwrap();
        assert_eq!(setup.algorithm, Algorithm::Deterministic);
        let r = &setup.resolved;
        assert_eq!(r.solver.outer_iters, 10);
        assert_eq!(r.solver.inner_iters, 32);
        assert_eq!(r.solver.tradeoff, 10.0);
        assert_eq!(
            r.preference.weights.as_deref(),
            Some(Preference::preferred(2, 1).unwrap().as_slice())
        );
        assert_eq!(r.x0, vec![0.0; 3]);
        assert_eq!(r.output.trace_path(), PathBuf::from("out/trace.csv"));
        let l = setup.constants.l.unwrap();
        assert_eq!(r.solver.ll_step, 1.0 / l);
        assert_eq!(r.solver.ul_step, setup.constants.ul_step(0.8).unwrap());
    }

    #[test]
    fn overrides_replace_and_add_keys() {
        let cfg = load_str(
            BASIC,
            &[
                "solver.outer_iters=0",
                "solver.option=cg",
                "output.dir=elsewhere",
            ],
        )
        .unwrap();
        assert_eq!(cfg.file.solver.outer_iters, Some(0));
        assert_eq!(cfg.file.solver.option, Some(HypergradOption::Cg));
        assert_eq!(cfg.file.output.dir, Some(PathBuf::from("elsewhere")));
    }

    #[test]
    fn seed_env_replaces_both_seeds() {
        let cfg = parse(BASIC, "t", &[], Some("99")).unwrap();
        assert_eq!(cfg.file.problem.seed, Some(99));
        assert_eq!(cfg.file.solver.seed, Some(99));
        assert!(parse(BASIC, "t", &[], Some("x")).is_err());
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = "[problem]\nfamily = \"quadratic\"\np = = 3\n";
        let e = load_str(text, &[]).unwrap_err();
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn unknown_key_is_located() {
        let text = BASIC.replace("outer_iters = 10", "outer_iterz = 10");
        let e = load_str(&text, &[]).unwrap_err();
        assert_eq!(e.line, Some(9));
        assert!(e.message.contains("outer_iterz"), "{e}");
    }

    #[test]
    fn non_spd_matrix_names_the_field() {
        let text = "\
[problem]
family = \"quadratic\"
p = 1
q = 2
s = 1
a = [[1.0, 0.0], [0.0, -2.0]]

[preference]
pattern = \"uniform\"
";
        let cfg = load_str(text, &[]).unwrap();
        let e = resolve(&cfg, None).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("problem.a"));
        assert_eq!(e.line, Some(6));
        assert!(e.message.contains("positive definite"), "{e}");
    }

    #[test]
    fn preference_needs_exactly_one_form() {
        let text = BASIC.replace("index = 1", "index = 1\nweights = [0.5, 0.5]");
        let e = resolve(&load_str(&text, &[]).unwrap(), None).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("preference.pattern"));
        let text = BASIC.replace("pattern = \"preferred\"\nindex = 1\n", "");
        assert!(resolve(&load_str(&text, &[]).unwrap(), None).is_err());
    }

    #[test]
    fn none_pattern_selects_preference_free_run() {
        let text = BASIC.replace("pattern = \"preferred\"\nindex = 1", "pattern = \"none\"");
        let setup = resolve(&load_str(&text, &[]).unwrap(), None).unwrap();
        assert_eq!(setup.algorithm, Algorithm::NonPreference);
        assert!(setup.preference.is_none());
        let e = resolve(
            &load_str(&text, &["solver.algorithm=stochastic"]).unwrap(),
            None,
        )
        .unwrap_err();
        assert_eq!(e.source, "--set");
    }

    #[test]
    fn foreign_family_keys_are_rejected() {
        let text = BASIC.replace("seed = 5", "seed = 5\nn_train = 4");
        let e = resolve(&load_str(&text, &[]).unwrap(), None).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("problem.n_train"));
    }

    #[test]
    fn invalid_solver_value_names_the_field() {
        let cfg = load_str(BASIC, &["solver.inner_iters=0"]).unwrap();
        let e = resolve(&cfg, None).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("solver.inner_iters"));
    }

    #[test]
    fn hypercleaning_needs_explicit_ul_step() {
        let text = "\
[problem]
family = \"hypercleaning\"
feature_dim = 3
n_train = 8
n_val = 8

[preference]
pattern = \"uniform\"
";
        let e = resolve(&load_str(text, &[]).unwrap(), None).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("solver.ul_step"));
        let cfg = load_str(text, &["solver.ul_step=0.5"]).unwrap();
        let setup = resolve(&cfg, None).unwrap();
        assert_eq!(setup.problem.dims().s, 5);
    }
}
