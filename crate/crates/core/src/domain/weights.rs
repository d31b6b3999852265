use serde::Serialize;

use crate::error::{MoblError, Result};

/// Smallest admissible preference component.
pub const MIN_PREFERENCE_COMPONENT: f64 = 1e-9;

const PREFERENCE_SUM_TOL: f64 = 1e-12;
const SIMPLEX_SUM_TOL: f64 = 1e-10;

/// A strictly positive preference vector `r` on the simplex.
///
/// Components below [`MIN_PREFERENCE_COMPONENT`] are rejected, never clamped.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Preference(Vec<f64>);

impl Preference {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.is_empty() {
            return Err(MoblError::InvalidWeights("preference is empty".into()));
        }
        if let Some((i, v)) = r
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < MIN_PREFERENCE_COMPONENT)
        {
            return Err(MoblError::InvalidWeights(format!(
                "preference component {i} = {v} is not strictly positive"
            )));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > PREFERENCE_SUM_TOL {
            return Err(MoblError::InvalidWeights(format!(
                "preference sums to {sum}, expected 1"
            )));
        }
        Ok(Self(r))
    }

    pub fn uniform(s: usize) -> Self {
        assert!(s > 0, "preference needs at least one objective");
        Self(vec![1.0 / s as f64; s])
    }

    /// `r_index = high` and every other component `low`, renormalised only
    /// when the raw values do not already sum to one.
    pub fn emphasis(s: usize, index: usize, high: f64, low: f64) -> Result<Self> {
        if index >= s {
            return Err(MoblError::InvalidWeights(format!(
                "preferred index {index} out of range for {s} objectives"
            )));
        }
        let mut r = vec![low; s];
        r[index] = high;
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > PREFERENCE_SUM_TOL {
            r.iter_mut().for_each(|v| *v /= sum);
        }
        Self::new(r)
    }

    /// The "preferred" pattern: 0.8 on one objective, 0.05 elsewhere.
    pub fn preferred(s: usize, index: usize) -> Result<Self> {
        Self::emphasis(s, index, 0.8, 0.05)
    }

    /// The "extremely preferred" pattern: 0.96 on one objective, 0.01 elsewhere.
    pub fn extremely_preferred(s: usize, index: usize) -> Result<Self> {
        Self::emphasis(s, index, 0.96, 0.01)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::MIN, f64::max)
    }
}

/// A point `λ` of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(MoblError::InvalidWeights(
                "simplex weights are empty".into(),
            ));
        }
        if let Some((i, v)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(MoblError::InvalidWeights(format!(
                "simplex component {i} = {v} is negative or not finite"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(MoblError::InvalidWeights(format!(
                "simplex weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(w))
    }

    pub fn uniform(s: usize) -> Self {
        assert!(s > 0, "simplex needs at least one coordinate");
        Self(vec![1.0 / s as f64; s])
    }

    pub fn vertex(s: usize, index: usize) -> Self {
        let mut w = vec![0.0; s];
        w[index] = 1.0;
        Self(w)
    }

    /// Callers guarantee the invariants (used for outputs of exact projections).
    pub(crate) fn from_vec_unchecked(w: Vec<f64>) -> Self {
        debug_assert!(w.iter().all(|v| *v >= 0.0));
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `r ⊙ λ`.
    pub fn hadamard(&self, r: &Preference) -> Vec<f64> {
        self.0
            .iter()
            .zip(r.as_slice())
            .map(|(l, r)| l * r)
            .collect()
    }
}

/// Rescale `r ⊙ λ` back onto the simplex: `λ̂ = (r⊙λ) / Σ(r⊙λ)`.
///
/// Returns the rescaled weights together with the normaliser `Σ(r⊙λ)`, which
/// is strictly positive because `r` is and `λ` has at least one positive entry.
pub fn rescale_to_simplex(lambda: &SimplexWeights, r: &Preference) -> (SimplexWeights, f64) {
    let scaled = lambda.hadamard(r);
    let total: f64 = scaled.iter().sum();
    let w = scaled.into_iter().map(|v| v / total).collect();
    (SimplexWeights::from_vec_unchecked(w), total)
}
