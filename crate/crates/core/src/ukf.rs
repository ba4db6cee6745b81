//! Unscented Kalman filter on the mode state.
//!
//! Prediction pushes sigma points through deterministic exponential-Euler
//! substeps and adds the OU step variance after each substep. The observation
//! operator is linear, so the update is an exact Kalman update.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::amari::{Drift, DriftWorkspace};
use crate::dataset::Problem;
use crate::error::{check_len, Error, Result};
use crate::filter::FilterResult;
use crate::linalg::{cholesky, symmetrize};
use crate::metrics::relative_error;
use crate::observation::ObservationScheme;
use crate::spectral::{LinearDynamics, StepCoefficients};

const JITTER: f64 = 1e-10;

/// Scaling parameters of the unscented transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UkfParams {
    fn lambda(&self, m: usize) -> f64 {
        self.alpha * self.alpha * (m as f64 + self.kappa) - m as f64
    }
}

/// Sigma points with mean and covariance weights.
#[derive(Debug, Clone)]
pub struct SigmaPoints {
    /// `2M + 1` points, the first one being the mean.
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkfState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub params: UkfParams,
}

impl UkfState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, params: UkfParams) -> Result<Self> {
        check_len(mean.len(), covariance.nrows(), "covariance rows")?;
        check_len(mean.len(), covariance.ncols(), "covariance columns")?;
        Ok(Self {
            mean,
            covariance,
            params,
        })
    }

    /// Point mass at `x0`.
    pub fn point(x0: &[f64], params: UkfParams) -> Self {
        let m = x0.len();
        Self {
            mean: DVector::from_column_slice(x0),
            covariance: DMatrix::zeros(m, m),
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sigma_points(&self) -> Result<SigmaPoints> {
        let m = self.dim();
        let lambda = self.params.lambda(m);
        let spread = m as f64 + lambda;
        if !(spread > 0.0) {
            return Err(Error::InvalidParameter(format!("unscented spread M + lambda = {spread} is not positive")));
        }
        let scaled = &self.covariance * spread;
        let root = match cholesky(&scaled, "sigma-point covariance") {
            Ok(c) => c.l(),
            Err(_) => {
                let jittered = &scaled + DMatrix::identity(m, m) * (JITTER * spread);
                cholesky(&jittered, "sigma-point covariance")?.l()
            }
        };
        let mut points = Vec::with_capacity(2 * m + 1);
        points.push(self.mean.clone());
        for i in 0..m {
            points.push(&self.mean + root.column(i));
        }
        for i in 0..m {
            points.push(&self.mean - root.column(i));
        }
        let w = 1.0 / (2.0 * spread);
        let mut mean_weights = vec![w; 2 * m + 1];
        let mut cov_weights = vec![w; 2 * m + 1];
        mean_weights[0] = lambda / spread;
        cov_weights[0] = lambda / spread + (1.0 - self.params.alpha * self.params.alpha + self.params.beta);
        Ok(SigmaPoints {
            points,
            mean_weights,
            cov_weights,
        })
    }

    fn from_points(points: &[DVector<f64>], sp: &SigmaPoints, params: UkfParams) -> Self {
        let m = points[0].len();
        // Centre on the first point to limit cancellation from the large negative weight.
        let base = &points[0];
        let mut offset = DVector::zeros(m);
        for (p, w) in points.iter().zip(&sp.mean_weights).skip(1) {
            offset.axpy(*w, &(p - base), 1.0);
        }
        let mean = base + &offset;
        let mut cov = DMatrix::zeros(m, m);
        for (p, w) in points.iter().zip(&sp.cov_weights) {
            let d = p - &mean;
            cov.ger(*w, &d, &d, 1.0);
        }
        symmetrize(&mut cov);
        Self {
            mean,
            covariance: cov,
            params,
        }
    }

    fn check_symmetric(&self) -> Result<()> {
        let c = &self.covariance;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("UKF covariance is not finite".into()));
        }
        let scale = c.amax().max(1.0);
        if (c - c.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Numerical("UKF covariance lost symmetry".into()));
        }
        Ok(())
    }
}

/// One prediction substep.
fn predict_step(
    state: &UkfState,
    coeffs: &StepCoefficients,
    drift: &Drift,
    ws: &mut DriftWorkspace,
) -> Result<UkfState> {
    let sp = state.sigma_points()?;
    let m = state.dim();
    let mut f = vec![0.0; m];
    let propagated: Vec<DVector<f64>> = sp
        .points
        .iter()
        .map(|p| {
            drift.eval_modes(p.as_slice(), ws, &mut f);
            DVector::from_fn(m, |l, _| coeffs.decay[l] * p[l] + coeffs.phi[l] * f[l])
        })
        .collect();
    let mut next = UkfState::from_points(&propagated, &sp, state.params);
    for l in 0..m {
        next.covariance[(l, l)] += coeffs.noise_scale[l] * coeffs.noise_scale[l];
    }
    Ok(next)
}

/// Advances the state over `substeps` steps of length `dt`.
pub fn ukf_predict(
    state: &UkfState,
    dynamics: &LinearDynamics,
    drift: &Drift,
    dt: f64,
    substeps: usize,
) -> Result<UkfState> {
    check_len(dynamics.dim(), state.dim(), "UKF state")?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {dt}")));
    }
    let coeffs = dynamics.step_coefficients(dt);
    let mut ws = DriftWorkspace::new(state.dim());
    let mut s = state.clone();
    for _ in 0..substeps {
        s = predict_step(&s, &coeffs, drift, &mut ws)?;
    }
    s.check_symmetric()?;
    Ok(s)
}

/// Exact Kalman update in Joseph form; returns the new state and the
/// predictive log-likelihood of `y`.
pub fn ukf_update(state: &UkfState, scheme: &ObservationScheme, y: &[f64]) -> Result<(UkfState, f64)> {
    check_len(scheme.state_dim(), state.dim(), "UKF state")?;
    check_len(scheme.len(), y.len(), "observation row")?;
    let h = scheme.operator();
    let p = &state.covariance;
    let ph = p * h.transpose();
    let mut s = h * &ph + scheme.sigma();
    symmetrize(&mut s);
    let chol = cholesky(&s, "innovation covariance")?;
    let innov = DVector::from_column_slice(y) - h * &state.mean;
    let gain = chol.solve(&ph.transpose()).transpose();
    let mean = &state.mean + &gain * &innov;
    let m = state.dim();
    let ikh = DMatrix::identity(m, m) - &gain * h;
    let mut cov = &ikh * p * ikh.transpose() + &gain * scheme.sigma() * gain.transpose();
    symmetrize(&mut cov);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = innov.dot(&chol.solve(&innov));
    let loglik = -0.5 * (y.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    let out = UkfState {
        mean,
        covariance: cov,
        params: state.params,
    };
    out.check_symmetric()?;
    Ok((out, loglik))
}

/// Filtered states at every observation time plus the summary result.
#[derive(Debug, Clone)]
pub struct UkfRun {
    pub states: Vec<UkfState>,
    pub result: FilterResult,
}

pub fn run_ukf_states(
    problem: &Problem,
    x0: &[f64],
    params: UkfParams,
    truth: Option<&[DVector<f64>]>,
) -> Result<UkfRun> {
    check_len(problem.dim(), x0.len(), "initial state")?;
    let grid = &problem.grid;
    let n = grid.num_intervals();
    let mut state = UkfState::point(x0, params);
    let mut states = Vec::with_capacity(n);
    let mut incs = Vec::with_capacity(n);
    for k in 0..n {
        let pred = ukf_predict(&state, &problem.model.dynamics, &problem.model.drift, grid.step(k), grid.substeps(k))?;
        let (upd, ll) = ukf_update(&pred, &problem.scheme, problem.y[k].as_slice())?;
        incs.push(ll);
        state = upd;
        states.push(state.clone());
    }
    let means: Vec<Vec<f64>> = states.iter().map(|s| s.mean.as_slice().to_vec()).collect();
    let relative_errors = match truth {
        Some(t) => {
            check_len(n, t.len(), "true states")?;
            Some(
                means
                    .iter()
                    .zip(t)
                    .map(|(m, x)| relative_error(m, x.as_slice()))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    let result = FilterResult {
        flavor: "ukf".into(),
        times: grid.times().to_vec(),
        variances: states.iter().map(|s| s.covariance.diagonal().as_slice().to_vec()).collect(),
        means,
        ess: Vec::new(),
        schedules: Vec::new(),
        log_evidence: incs.iter().sum(),
        log_evidence_increments: incs,
        relative_errors,
    };
    Ok(UkfRun { states, result })
}

pub fn run_ukf(
    problem: &Problem,
    x0: &[f64],
    params: UkfParams,
    truth: Option<&[DVector<f64>]>,
) -> Result<FilterResult> {
    Ok(run_ukf_states(problem, x0, params, truth)?.result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigma_points_basics() {
        let s = UkfState::point(&[1.0, -2.0, 0.5], UkfParams::default());
        let sp = s.sigma_points().unwrap();
        assert_eq!(sp.points.len(), 7);
        assert_relative_eq!(sp.mean_weights.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
        for p in &sp.points {
            assert_relative_eq!((p - &s.mean).amax(), 0.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn unit_spread_gives_unit_axes() {
        // M + lambda = alpha^2 (M + kappa) = 1 with alpha = 1, kappa = -1
        let params = UkfParams {
            alpha: 1.0,
            beta: 2.0,
            kappa: -1.0,
        };
        let s = UkfState::new(DVector::from_vec(vec![0.5, 1.0]), DMatrix::identity(2, 2), params).unwrap();
        let sp = s.sigma_points().unwrap();
        let expect = [[0.5, 1.0], [1.5, 1.0], [0.5, 2.0], [-0.5, 1.0], [0.5, 0.0]];
        for (p, e) in sp.points.iter().zip(expect) {
            assert_relative_eq!(p[0], e[0], epsilon = 1e-14);
            assert_relative_eq!(p[1], e[1], epsilon = 1e-14);
        }
        let mean: DVector<f64> = sp.points.iter().zip(&sp.mean_weights).map(|(p, w)| p * *w).sum();
        assert_relative_eq!((mean - &s.mean).amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn noiseless_linear_prediction_contracts() {
        let dyn_ = LinearDynamics::uniform_decay(1.5, DVector::zeros(2)).unwrap();
        let s = UkfState::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2) * 0.3, UkfParams::default()).unwrap();
        let p = ukf_predict(&s, &dyn_, &Drift::Zero, 0.1, 1).unwrap();
        let e = (-0.15f64).exp();
        assert_relative_eq!(p.mean[1], 2.0 * e, epsilon = 1e-10);
        assert_relative_eq!(p.covariance[(0, 0)], 0.3 * e * e, epsilon = 1e-10);
        assert_relative_eq!(p.covariance[(0, 1)], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn update_limits() {
        let s = UkfState::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2), UkfParams::default()).unwrap();
        let vague = ObservationScheme::from_matrices(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 1e12).unwrap();
        let (u, _) = ukf_update(&s, &vague, &[5.0, -3.0]).unwrap();
        assert_relative_eq!((&u.mean - &s.mean).amax(), 0.0, epsilon = 1e-6);
        let sharp = ObservationScheme::from_matrices(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 1e-12).unwrap();
        let (u, _) = ukf_update(&s, &sharp, &[5.0, -3.0]).unwrap();
        assert_relative_eq!(u.mean[0], 5.0, epsilon = 1e-9);
        assert_relative_eq!(u.mean[1], -3.0, epsilon = 1e-9);
        assert!(ukf_update(&s, &sharp, &[5.0]).is_err());
    }
}
