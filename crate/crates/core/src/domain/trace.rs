use serde::Serialize;

use super::weights::SimplexWeights;
use crate::error::MoblError;
use crate::linalg;

/// First- and second-order oracle evaluation counts of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OracleCounters {
    /// UL partial gradients (`∇_x f`, `∇_y f`).
    pub gc_f: u64,
    /// LL gradients.
    pub gc_g: u64,
    /// Jacobian-vector products `∇²_{xy} g · v`.
    pub jv_g: u64,
    /// Hessian-vector products `∇²_y g · v`.
    pub hv_g: u64,
}

impl OracleCounters {
    pub fn as_array(&self) -> [u64; 4] {
        [self.gc_f, self.gc_g, self.jv_g, self.hv_g]
    }

    /// Every counter of `self` is at least the matching one of `earlier`.
    pub fn dominates(&self, earlier: &OracleCounters) -> bool {
        self.as_array()
            .iter()
            .zip(earlier.as_array())
            .all(|(a, b)| *a >= b)
    }
}

/// Estimated hypergradients `∇̂Φ(x) ∈ R^{p×S}` stored column-wise, with the
/// UL values used by the weighted-Chebyshev term.
#[derive(Debug, Clone, PartialEq)]
pub struct HypergradientMatrix {
    columns: Vec<Vec<f64>>,
    phi_values: Vec<f64>,
}

impl HypergradientMatrix {
    pub fn new(columns: Vec<Vec<f64>>, phi_values: Vec<f64>) -> Result<Self, MoblError> {
        if columns.len() != phi_values.len() || columns.is_empty() {
            return Err(MoblError::InvalidProblem(format!(
                "{} hypergradient columns for {} objective values",
                columns.len(),
                phi_values.len()
            )));
        }
        let p = columns[0].len();
        if columns.iter().any(|c| c.len() != p) {
            return Err(MoblError::InvalidProblem(
                "hypergradient columns have different lengths".into(),
            ));
        }
        if !columns.iter().all(|c| linalg::all_finite(c)) || !linalg::all_finite(&phi_values) {
            return Err(MoblError::InvalidProblem(
                "hypergradient matrix has non-finite entries".into(),
            ));
        }
        Ok(Self {
            columns,
            phi_values,
        })
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn phi_values(&self) -> &[f64] {
        &self.phi_values
    }

    pub fn num_objectives(&self) -> usize {
        self.columns.len()
    }

    /// `G = ∇̂Φᵀ ∇̂Φ`, row-major `S×S`.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let s = self.columns.len();
        let mut g = vec![vec![0.0; s]; s];
        for i in 0..s {
            for j in i..s {
                let v = linalg::dot(&self.columns[i], &self.columns[j]);
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        g
    }

    /// `∇̂Φ · w`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        linalg::combine(&self.columns, w)
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// All `K` outer iterations ran.
    Completed,
    /// `‖d_k‖² ≤ stop_tol`.
    StopTolerance,
    /// `d_k` was exactly zero.
    Stationary,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::StopTolerance => "stop_tolerance",
            Termination::Stationary => "stationary",
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// UL values `Φ(x_k)` at `(x_k, y_k^D)`.
    pub phi: Vec<f64>,
    pub lambda: SimplexWeights,
    /// `‖d_k‖²` of the estimated direction.
    pub d_norm_sq: f64,
    /// Counters after this iteration.
    pub counters: OracleCounters,
    /// `‖d̄_k‖²` from true hypergradients, when the problem has an analytic hook.
    pub true_d_norm_sq: Option<f64>,
    /// Random-stream word position at the start of the iteration (stochastic runs).
    pub rng_word_pos: Option<u128>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub final_x: Vec<f64>,
    pub final_y: Vec<f64>,
    pub counters: OracleCounters,
    pub termination: Termination,
}

impl RunTrace {
    pub(crate) fn empty(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            records: Vec::new(),
            final_x: x,
            final_y: y,
            counters: OracleCounters::default(),
            termination: Termination::Completed,
        }
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn final_phi(&self) -> Option<&[f64]> {
        self.last().map(|r| r.phi.as_slice())
    }

    pub fn final_d_norm_sq(&self) -> Option<f64> {
        self.last().map(|r| r.d_norm_sq)
    }

    pub fn lambdas(&self) -> impl Iterator<Item = &SimplexWeights> {
        self.records.iter().map(|r| &r.lambda)
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug, Clone, thiserror::Error)]
#[error("run aborted after {} iterations: {error}", trace.records.len())]
pub struct RunError {
    pub error: MoblError,
    pub trace: Box<RunTrace>,
}
