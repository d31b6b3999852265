use crate::domain::SimplexWeights;

/// Euclidean projection onto the probability simplex (sort-and-threshold).
///
/// Entries must be finite.
pub fn project_simplex(z: &[f64]) -> SimplexWeights {
    assert!(!z.is_empty(), "cannot project an empty vector");
    debug_assert!(z.iter().all(|v| v.is_finite()));
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    let w: Vec<f64> = z.iter().map(|v| (v - theta).max(0.0)).collect();
    SimplexWeights::from_vec_unchecked(w)
}
