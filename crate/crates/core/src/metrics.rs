//! Error metrics for state estimates.

use crate::error::{check_len, Error, Result};

/// `|estimate - truth| / |truth|` in the Euclidean mode-space norm, which
/// equals the `L²(D)` norm ratio for an orthonormal basis.
pub fn relative_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_len(truth.len(), estimate.len(), "estimate length")?;
    let norm: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidParameter("truth has zero norm".into()));
    }
    let diff: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}
