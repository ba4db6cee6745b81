//! Log-space weight arithmetic, resampling and adaptive tempering.

use rand::Rng;

use crate::error::{Error, Result};

fn max_finite(log_w: &[f64]) -> Result<f64> {
    let m = log_w.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Err(Error::InvalidWeights("all weights are zero".into()));
    }
    if m == f64::INFINITY {
        return Err(Error::InvalidWeights("infinite log-weight".into()));
    }
    Ok(m)
}

/// Normalised weights from log-weights, by max subtraction. NaN entries get weight 0.
pub fn normalize(log_w: &[f64]) -> Result<Vec<f64>> {
    let m = max_finite(log_w)?;
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { (v - m).exp() })
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    Ok(w)
}

/// `log (1/J) sum_j exp(log_w_j)`.
pub fn log_mean_exp(log_w: &[f64]) -> Result<f64> {
    let m = max_finite(log_w)?;
    let s: f64 = log_w
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { (v - m).exp() })
        .sum();
    Ok(m + (s / log_w.len() as f64).ln())
}

/// Effective sample size `1 / sum w^2` of normalised weights.
pub fn ess(log_w: &[f64]) -> Result<f64> {
    let w = normalize(log_w)?;
    Ok(1.0 / w.iter().map(|v| v * v).sum::<f64>())
}

/// Systematic resampling with a single uniform offset; returns sorted parent indices.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let j = weights.len();
    if j == 0 {
        return Err(Error::InvalidWeights("no particles".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidWeights("negative or NaN weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
    }
    let u: f64 = rng.random::<f64>();
    Ok(systematic_from_offset(weights, u))
}

/// Resampling indices for a fixed offset `u` in `[0, 1)`.
pub fn systematic_from_offset(weights: &[f64], u: f64) -> Vec<usize> {
    let j = weights.len();
    let mut out = Vec::with_capacity(j);
    let mut cum = weights[0] * j as f64;
    let mut i = 0;
    for k in 0..j {
        let point = u + k as f64;
        while cum <= point && i + 1 < j {
            i += 1;
            cum += weights[i] * j as f64;
        }
        out.push(i);
    }
    out
}

/// Next inverse temperature: the `psi` in `(psi_current, 1]` at which the
/// incremental weights `Lambda^(psi - psi_current)` have ESS `alpha J`, or
/// `1` if the ESS at `psi = 1` is already at least `alpha J`.
pub fn adapt_temperature(log_lambda: &[f64], psi_current: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&psi_current) {
        return Err(Error::InvalidParameter(format!(
            "current temperature must lie in [0, 1), got {psi_current}"
        )));
    }
    let target = alpha * log_lambda.len() as f64;
    let ess_at = |delta: f64| -> Result<f64> {
        let scaled: Vec<f64> = log_lambda.iter().map(|v| delta * v).collect();
        ess(&scaled)
    };
    let full = 1.0 - psi_current;
    if ess_at(full)? >= target {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, full);
    for _ in 0..60 {
        if hi - lo <= 1e-6 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if ess_at(mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(psi_current + 0.5 * (lo + hi))
}
