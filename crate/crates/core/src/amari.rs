//! The Amari neural-field nonlinearity and the generic drift interface.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::spectral::SpectralGrid;

/// Connectivity and firing-rate parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmariParams {
    /// Amplitude of the excitatory Gaussian.
    pub amp: f64,
    /// Relative width of the inhibitory Gaussian.
    #[serde(rename = "B")]
    pub b: f64,
    pub eta: f64,
    pub zeta: f64,
    /// Shift of the kernel; nonzero values produce travelling waves.
    pub delta: f64,
}

impl AmariParams {
    pub fn new(amp: f64, b: f64, eta: f64, zeta: f64, delta: f64) -> Self {
        Self {
            amp,
            b,
            eta,
            zeta,
            delta,
        }
    }

    /// The reference configuration with travelling waves (`delta = 0.5`).
    pub fn travelling_waves() -> Self {
        Self::new(4.0, 1.5, 10.0, 0.5, 0.5)
    }

    /// The reference configuration with stationary patterns (`delta = 0`).
    pub fn stationary_patterns() -> Self {
        Self::new(4.0, 1.5, 10.0, 0.5, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) || !self.b.is_finite() {
            return Err(Error::InvalidParameter(format!("B must be positive, got {}", self.b)));
        }
        for (name, v) in [("amp", self.amp), ("eta", self.eta), ("zeta", self.zeta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidParameter("delta must be finite".into()));
        }
        Ok(())
    }

    /// Sigmoid firing rate shifted so that `f(0) = 0`.
    pub fn activation(&self, x: f64) -> f64 {
        logistic(self.eta * x - self.zeta) - logistic(-self.zeta)
    }

    /// Connectivity as a function of the displacement `r`.
    pub fn kernel(&self, r: f64) -> f64 {
        let s = r - self.delta;
        let c = self.amp / PI.sqrt();
        c * (-s * s).exp() - c / self.b * (-(s / self.b) * (s / self.b)).exp()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Kernel sampled at the wrapped node displacements `min(k dx, |D| - k dx)`.
pub fn kernel_table(params: &AmariParams, grid: &SpectralGrid) -> Vec<f64> {
    let m = grid.len();
    let dx = grid.dx();
    (0..m)
        .map(|k| {
            let r = (k as f64 * dx).min((m - k) as f64 * dx);
            params.kernel(r)
        })
        .collect()
}

/// Amari drift with the convolution diagonalised in the real Fourier basis.
#[derive(Debug, Clone)]
pub struct AmariDrift {
    params: AmariParams,
    grid: SpectralGrid,
    /// Per-mode multiplier of the convolution operator.
    multipliers: DVector<f64>,
    /// Firing rate at zero input.
    rest: f64,
}

impl AmariDrift {
    pub fn new(params: AmariParams, grid: &SpectralGrid) -> Result<Self> {
        params.validate()?;
        let table = kernel_table(&params, grid);
        let spectrum = grid.dft_real(&table);
        let dx = grid.dx();
        let multipliers = DVector::from_iterator(
            grid.len(),
            (0..grid.len()).map(|i| dx * spectrum[grid.mode_kind(i).frequency()].re),
        );
        Ok(Self {
            rest: logistic(-params.zeta),
            params,
            grid: grid.clone(),
            multipliers,
        })
    }

    pub fn params(&self) -> &AmariParams {
        &self.params
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn multipliers(&self) -> &DVector<f64> {
        &self.multipliers
    }
}

/// Scratch buffers for drift evaluation.
#[derive(Debug, Clone, Default)]
pub struct DriftWorkspace {
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    field: Vec<f64>,
}

impl DriftWorkspace {
    pub fn new(m: usize) -> Self {
        Self {
            buf: vec![Complex64::new(0.0, 0.0); m],
            scratch: Vec::new(),
            field: vec![0.0; m],
        }
    }

    fn ensure(&mut self, m: usize, scratch: usize) {
        if self.field.len() != m {
            *self = Self::new(m);
        }
        if self.scratch.len() < scratch {
            self.scratch.resize(scratch, Complex64::new(0.0, 0.0));
        }
    }
}

/// Mode-space drift map `x -> F(x)`.
pub type CustomDriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// The nonlinear part `F` of the SPDE, evaluated in mode coordinates.
#[derive(Clone)]
pub enum Drift {
    Zero,
    Amari(AmariDrift),
    /// Arbitrary map on mode vectors, mainly for low-dimensional test models.
    Custom(CustomDriftFn),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::Amari(a) => f.debug_tuple("Amari").field(a.params()).finish(),
            Drift::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Drift {
    pub fn amari(params: AmariParams, grid: &SpectralGrid) -> Result<Self> {
        Ok(Drift::Amari(AmariDrift::new(params, grid)?))
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Drift::Custom(Arc::new(f))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Drift::Zero)
    }

    /// Evaluates `F(x)` for a mode vector `x`, writing into `out`.
    pub fn eval_modes(&self, x: &[f64], ws: &mut DriftWorkspace, out: &mut [f64]) {
        match self {
            Drift::Zero => out.fill(0.0),
            Drift::Custom(f) => f(x, out),
            Drift::Amari(a) => {
                let m = a.grid.len();
                ws.ensure(m, a.grid.scratch_len());
                a.grid.to_field_into(x, &mut ws.buf, &mut ws.scratch, &mut ws.field);
                let (eta, zeta) = (a.params.eta, a.params.zeta);
                for v in ws.field.iter_mut() {
                    *v = logistic(eta * *v - zeta) - a.rest;
                }
                a.grid.to_modes_into(&ws.field, &mut ws.buf, &mut ws.scratch, out);
                for (o, l) in out.iter_mut().zip(a.multipliers.iter()) {
                    *o *= l;
                }
            }
        }
    }

    /// Evaluates `F` on grid values, returning grid values.
    pub fn apply_field(&self, grid: &SpectralGrid, field: &[f64]) -> Result<Vec<f64>> {
        check_len(grid.len(), field.len(), "field length")?;
        let modes = grid.to_modes(field)?;
        let mut out = vec![0.0; grid.len()];
        let mut ws = DriftWorkspace::new(grid.len());
        self.eval_modes(modes.as_slice(), &mut ws, &mut out);
        grid.to_field(&out)
    }
}

/// A drift indexed by a parameter vector, used for parameter inference.
pub trait DriftFamily: Send + Sync {
    fn names(&self) -> Vec<String>;
    fn build(&self, theta: &[f64]) -> Result<Drift>;
}

/// Amari drift with `(eta, zeta, amp, delta)` free and `B` fixed.
#[derive(Debug, Clone)]
pub struct AmariFamily {
    pub b: f64,
    pub grid: SpectralGrid,
}

impl AmariFamily {
    pub const NAMES: [&'static str; 4] = ["eta", "zeta", "amp", "delta"];

    pub fn params(&self, theta: &[f64]) -> AmariParams {
        AmariParams::new(theta[2], self.b, theta[0], theta[1], theta[3])
    }

    pub fn theta_of(params: &AmariParams) -> Vec<f64> {
        vec![params.eta, params.zeta, params.amp, params.delta]
    }
}

impl DriftFamily for AmariFamily {
    fn names(&self) -> Vec<String> {
        Self::NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn build(&self, theta: &[f64]) -> Result<Drift> {
        check_len(4, theta.len(), "Amari parameter vector")?;
        Drift::amari(self.params(theta), &self.grid)
    }
}
