//! Guiding functions `g(t, x)` and their scores `G(t, x) = D_x log g(t, x)`.
//!
//! Three constructions are available:
//!
//! * one-step guides, which only look at the next observation
//!   ([`build_onestep_guide`], plus the Brownian-auxiliary variant
//!   [`build_gpf2_guide`]);
//! * the direct full-observation guide, from backward block recursions on
//!   stacked observation operators ([`build_direct_guide`]);
//! * the Riccati guide, integrating the backward information filter
//!   `(U, V, c)` on a time grid ([`RiccatiGuide`]).
//!
//! Intervals are zero-based: interval `k` ends at observation `k`, i.e.
//! covers `(t_{k-1}, t_k]` with `t_{-1} = 0`. At the left endpoint the
//! guide returns the right limit, which excludes observation `k - 1`.

mod linear;
mod riccati;

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};

pub use linear::{build_direct_guide, build_gpf2_guide, build_onestep_guide, GuideKind, LinearGuide};
pub use riccati::{riccati_mode_closed_form, RiccatiGuide};

/// Evaluator of `log g` and its score on each observation interval.
pub trait Guide: Send + Sync {
    /// State dimension `M`.
    fn dim(&self) -> usize;

    fn num_intervals(&self) -> usize;

    /// `(start, end)` of interval `k`.
    fn interval_bounds(&self, k: usize) -> (f64, f64);

    /// Writes `G(t, x)` into `out`. `t` must lie in interval `k`.
    fn score_into(&self, k: usize, t: f64, x: &[f64], out: &mut [f64]);

    /// `log g(t, x)` for `t` in interval `k`.
    fn log_g(&self, k: usize, t: f64, x: &[f64]) -> f64;

    /// Whether the guide comes from an auxiliary process without linear drift.
    ///
    /// The importance weight of such a guide must pair the score with
    /// `F(x) + A x` rather than `F(x)` alone.
    fn brownian_auxiliary(&self) -> bool {
        false
    }
}

fn check_args(guide: &dyn Guide, k: usize, t: f64, x: &[f64]) -> Result<()> {
    check_len(guide.dim(), x.len(), "state")?;
    if k >= guide.num_intervals() {
        return Err(Error::InvalidParameter(format!(
            "interval {k} out of range (guide has {})",
            guide.num_intervals()
        )));
    }
    let (a, b) = guide.interval_bounds(k);
    let tol = 1e-12 * b.abs().max(1.0);
    if !(t >= a - tol && t <= b + tol) {
        return Err(Error::TimeOutOfRange {
            t,
            context: format!("interval {k} = [{a}, {b}]"),
        });
    }
    Ok(())
}

/// Checked score evaluation.
pub fn score(guide: &dyn Guide, k: usize, t: f64, x: &[f64]) -> Result<DVector<f64>> {
    check_args(guide, k, t, x)?;
    let mut out = DVector::zeros(guide.dim());
    guide.score_into(k, t, x, out.as_mut_slice());
    Ok(out)
}

/// Checked `log g` evaluation.
pub fn log_g(guide: &dyn Guide, k: usize, t: f64, x: &[f64]) -> Result<f64> {
    check_args(guide, k, t, x)?;
    Ok(guide.log_g(k, t, x))
}

/// Locates the interval of `t` under the `(t_{k-1}, t_k]` convention.
pub fn interval_of(guide: &dyn Guide, t: f64) -> Result<usize> {
    let n = guide.num_intervals();
    let (start, _) = guide.interval_bounds(0);
    let (_, end) = guide.interval_bounds(n - 1);
    if !(t >= start && t <= end) {
        return Err(Error::TimeOutOfRange {
            t,
            context: format!("guide horizon [{start}, {end}]"),
        });
    }
    Ok((0..n).find(|&k| t <= guide.interval_bounds(k).1).unwrap_or(n - 1))
}
