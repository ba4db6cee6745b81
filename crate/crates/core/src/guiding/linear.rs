//! Guides built from Gaussian likelihoods of stacked future observations.
//!
//! On interval `k` the guide is `g(t, x) = N(y_k^+; L_t x, R_t)` with
//! `L_t = L_k S_{t_k - t}` and `R_t = B_k + L_k Q_{t_k - t} L_k^T`, where
//! `L_k`, `y_k^+` stack the observations still ahead and `B_k` is their
//! covariance at `t_k`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{chol_logdet, cholesky, pencil};
use crate::observation::{weighted_gram, ObservationScheme};
use crate::spectral::{ou_variance_factor, LinearDynamics};

use super::Guide;

/// Which construction produced a [`LinearGuide`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuideKind {
    /// Next observation only, auxiliary process with the true linear part.
    OneStep,
    /// Next observation only, Brownian auxiliary process (`A = 0`).
    Brownian,
    /// All remaining observations.
    Direct,
}

/// Simultaneous diagonalisation of `(C_k, B_k)` for one interval.
///
/// With `W^T B W = I` and `W^T C W = diag(lambda)` the residual form only
/// needs `P = W^T L_k` and `z = W^T y_k^+`.
#[derive(Debug, Clone)]
struct EigenBlock {
    /// Row-major `P`.
    p: Vec<f64>,
    z: Vec<f64>,
    lambda: Vec<f64>,
    logdet_b: f64,
}

#[derive(Debug, Clone)]
struct Interval {
    start: f64,
    end: f64,
    l: DMatrix<f64>,
    b: DMatrix<f64>,
    y: DVector<f64>,
    eigen: Option<EigenBlock>,
}

/// One-step, Brownian one-step or direct guide.
#[derive(Debug, Clone)]
pub struct LinearGuide {
    kind: GuideKind,
    dim: usize,
    a: DVector<f64>,
    q: DVector<f64>,
    /// Common decay rate when all modes share one.
    decay: Option<f64>,
    intervals: Vec<Interval>,
}

fn check_inputs(
    scheme: &ObservationScheme,
    dynamics: &LinearDynamics,
    times: &[f64],
    y: &[DVector<f64>],
) -> Result<()> {
    check_len(scheme.state_dim(), dynamics.dim(), "observation operator columns")?;
    check_len(times.len(), y.len(), "observation rows")?;
    if times.is_empty() {
        return Err(Error::InvalidParameter("no observations".into()));
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev) {
            return Err(Error::InvalidParameter(format!(
                "observation times must be positive and increasing (got {t} after {prev})"
            )));
        }
        prev = t;
    }
    for row in y {
        check_len(scheme.len(), row.len(), "observation row")?;
    }
    Ok(())
}

/// One-step guide: each interval only sees its own endpoint observation.
pub fn build_onestep_guide(
    scheme: &ObservationScheme,
    dynamics: &LinearDynamics,
    times: &[f64],
    y: &[DVector<f64>],
) -> Result<LinearGuide> {
    check_inputs(scheme, dynamics, times, y)?;
    let stacks = y
        .iter()
        .map(|yk| (scheme.operator().clone(), scheme.sigma().clone(), yk.clone()))
        .collect();
    LinearGuide::assemble(GuideKind::OneStep, dynamics, times, stacks)
}

/// One-step guide of the Brownian auxiliary process:
/// `G(t, x) = L^T (Sigma + (t_k - t) L Q L^T)^{-1} (y_k - L x)`.
pub fn build_gpf2_guide(
    scheme: &ObservationScheme,
    dynamics: &LinearDynamics,
    times: &[f64],
    y: &[DVector<f64>],
) -> Result<LinearGuide> {
    check_inputs(scheme, dynamics, times, y)?;
    let stacks = y
        .iter()
        .map(|yk| (scheme.operator().clone(), scheme.sigma().clone(), yk.clone()))
        .collect();
    LinearGuide::assemble(GuideKind::Brownian, dynamics, times, stacks)
}

/// Full-observation guide from the backward block recursion
/// `B_{n-1} = Sigma`, `B_k = blockdiag(Sigma, B_{k+1} + L_{k+1} Q_{Delta} L_{k+1}^T)`,
/// `L_k = [L; L_{k+1} S_{Delta}]` with `Delta = t_{k+1} - t_k`.
pub fn build_direct_guide(
    scheme: &ObservationScheme,
    dynamics: &LinearDynamics,
    times: &[f64],
    y: &[DVector<f64>],
) -> Result<LinearGuide> {
    check_inputs(scheme, dynamics, times, y)?;
    let n = times.len();
    let m = scheme.len();
    let dim = dynamics.dim();
    let a = dynamics.decay_rates();
    let q = dynamics.noise_spectrum();
    let mut stacks: Vec<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(n);
    stacks.push((scheme.operator().clone(), scheme.sigma().clone(), y[n - 1].clone()));
    for k in (0..n - 1).rev() {
        let delta = times[k + 1] - times[k];
        let (l_next, b_next, y_next) = stacks.last().unwrap();
        let qd = a.zip_map(q, |a, q| q * ou_variance_factor(a, delta));
        let r_plus = b_next + weighted_gram(l_next, &qd);
        let rows = m + l_next.nrows();
        let mut l = DMatrix::zeros(rows, dim);
        l.rows_mut(0, m).copy_from(scheme.operator());
        let mut shifted = l_next.clone();
        for (j, mut col) in shifted.column_iter_mut().enumerate() {
            col *= (-a[j] * delta).exp();
        }
        l.rows_mut(m, rows - m).copy_from(&shifted);
        let mut b = DMatrix::zeros(rows, rows);
        b.view_mut((0, 0), (m, m)).copy_from(scheme.sigma());
        b.view_mut((m, m), (rows - m, rows - m)).copy_from(&r_plus);
        let mut yk = DVector::zeros(rows);
        yk.rows_mut(0, m).copy_from(&y[k]);
        yk.rows_mut(m, rows - m).copy_from(y_next);
        stacks.push((l, b, yk));
    }
    stacks.reverse();
    LinearGuide::assemble(GuideKind::Direct, dynamics, times, stacks)
}

impl LinearGuide {
    fn assemble(
        kind: GuideKind,
        dynamics: &LinearDynamics,
        times: &[f64],
        stacks: Vec<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)>,
    ) -> Result<Self> {
        let q = dynamics.noise_spectrum();
        let decay = dynamics.common_decay();
        let fast = decay.is_some() || kind == GuideKind::Brownian;
        let mut intervals = Vec::with_capacity(stacks.len());
        for (k, (l, b, y)) in stacks.into_iter().enumerate() {
            let what = format!("stacked covariance of interval {k}");
            let eigen = if fast {
                let c = weighted_gram(&l, q);
                let pen = pencil(&c, &b, &what)?;
                let pm = pen.w.transpose() * &l;
                let mut p = Vec::with_capacity(pm.len());
                for r in 0..pm.nrows() {
                    p.extend(pm.row(r).iter());
                }
                let z = pen.w.transpose() * &y;
                Some(EigenBlock {
                    p,
                    z: z.as_slice().to_vec(),
                    lambda: pen.lambda.as_slice().to_vec(),
                    logdet_b: pen.logdet_b,
                })
            } else {
                cholesky(&b, &what)?;
                None
            };
            intervals.push(Interval {
                start: if k == 0 { 0.0 } else { times[k - 1] },
                end: times[k],
                l,
                b,
                y,
                eigen,
            });
        }
        Ok(Self {
            kind,
            dim: dynamics.dim(),
            a: dynamics.decay_rates().clone(),
            q: q.clone(),
            decay,
            intervals,
        })
    }

    pub fn kind(&self) -> GuideKind {
        self.kind
    }

    /// Number of stacked observations `m_k^+` seen from interval `k`.
    pub fn stacked_len(&self, k: usize) -> usize {
        self.intervals[k].y.len()
    }

    /// Drops the cached factorisations so every call assembles `R_t` densely.
    pub fn without_fast_path(mut self) -> Self {
        for iv in &mut self.intervals {
            iv.eigen = None;
        }
        self
    }

    /// Per-mode `(S_tau, Q_tau)` diagonals.
    fn mode_maps(&self, tau: f64) -> (DVector<f64>, DVector<f64>) {
        match self.kind {
            GuideKind::Brownian => (DVector::from_element(self.dim, 1.0), self.q.map(|q| q * tau)),
            _ => (
                self.a.map(|a| (-a * tau).exp()),
                self.a.zip_map(&self.q, |a, q| q * ou_variance_factor(a, tau)),
            ),
        }
    }

    /// Scalar `(exp(-a tau), rho(tau))` for the fast path.
    fn scalar_maps(&self, tau: f64) -> (f64, f64) {
        match (self.kind, self.decay) {
            (GuideKind::Brownian, _) => (1.0, tau),
            (_, Some(a)) => ((-a * tau).exp(), ou_variance_factor(a, tau)),
            (_, None) => unreachable!("fast path requires a common decay rate"),
        }
    }

    /// Dense `(R_t, L_t)` for interval `k`.
    pub fn stacked_covariance(&self, k: usize, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let iv = &self.intervals[k];
        let tau = (iv.end - t).max(0.0);
        let (s, qd) = self.mode_maps(tau);
        let r = &iv.b + weighted_gram(&iv.l, &qd);
        let mut lt = iv.l.clone();
        for (j, mut col) in lt.column_iter_mut().enumerate() {
            col *= s[j];
        }
        (r, lt)
    }

    fn dense_eval(&self, k: usize, t: f64, x: &[f64], score: Option<&mut [f64]>) -> f64 {
        let iv = &self.intervals[k];
        let (r, lt) = self.stacked_covariance(k, t);
        let chol = match cholesky(&r, "R") {
            Ok(c) => c,
            Err(_) => return f64::NAN,
        };
        let resid = &iv.y - &lt * DVector::from_column_slice(x);
        let s = chol.solve(&resid);
        if let Some(out) = score {
            let g = lt.transpose() * &s;
            out.copy_from_slice(g.as_slice());
        }
        let mp = iv.y.len() as f64;
        -0.5 * (mp * (2.0 * PI).ln() + chol_logdet(&chol) + resid.dot(&s))
    }

    fn eigen_log_g(&self, e: &EigenBlock, tau: f64, x: &[f64]) -> f64 {
        let (ef, rho) = self.scalar_maps(tau);
        let mut quad = 0.0;
        let mut logdet = e.logdet_b;
        for (j, row) in e.p.chunks_exact(self.dim).enumerate() {
            let px = dot(row, x);
            let d = 1.0 + rho * e.lambda[j];
            let r = e.z[j] - ef * px;
            quad += r * r / d;
            logdet += d.ln();
        }
        -0.5 * (e.z.len() as f64 * (2.0 * PI).ln() + logdet + quad)
    }

    fn eigen_score(&self, e: &EigenBlock, tau: f64, x: &[f64], out: &mut [f64]) {
        let (ef, rho) = self.scalar_maps(tau);
        out.fill(0.0);
        for (j, row) in e.p.chunks_exact(self.dim).enumerate() {
            let px = dot(row, x);
            let w = ef * (e.z[j] - ef * px) / (1.0 + rho * e.lambda[j]);
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Guide for LinearGuide {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_intervals(&self) -> usize {
        self.intervals.len()
    }

    fn interval_bounds(&self, k: usize) -> (f64, f64) {
        (self.intervals[k].start, self.intervals[k].end)
    }

    fn score_into(&self, k: usize, t: f64, x: &[f64], out: &mut [f64]) {
        let iv = &self.intervals[k];
        match &iv.eigen {
            Some(e) => self.eigen_score(e, (iv.end - t).max(0.0), x, out),
            None => {
                self.dense_eval(k, t, x, Some(out));
            }
        }
    }

    fn log_g(&self, k: usize, t: f64, x: &[f64]) -> f64 {
        let iv = &self.intervals[k];
        match &iv.eigen {
            Some(e) => self.eigen_log_g(e, (iv.end - t).max(0.0), x),
            None => self.dense_eval(k, t, x, None),
        }
    }

    fn brownian_auxiliary(&self) -> bool {
        self.kind == GuideKind::Brownian
    }
}
