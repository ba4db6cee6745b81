//! Periodic one-dimensional spectral discretization.
//!
//! States live in a real orthonormal Fourier basis of `L²(D)` on the periodic
//! domain `D = [-|D|/2, |D|/2)`. Mode index `0` is the constant function,
//! indices `2l-1` and `2l` hold the cosine and sine of frequency `l`, and the
//! last index holds the unpaired Nyquist cosine. Orthonormality holds for the
//! grid quadrature with weight `dx`, so the field/mode transform is an
//! isometry between grid values and coefficient vectors.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

/// Role of a single coefficient in the real Fourier basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Constant,
    Cosine(usize),
    Sine(usize),
    Nyquist(usize),
}

impl ModeKind {
    /// Integer frequency `l` of the basis function.
    pub fn frequency(self) -> usize {
        match self {
            ModeKind::Constant => 0,
            ModeKind::Cosine(l) | ModeKind::Sine(l) | ModeKind::Nyquist(l) => l,
        }
    }
}

/// Uniform periodic grid with its Fourier mode table and cached FFT plans.
#[derive(Clone)]
pub struct SpectralGrid {
    domain_length: f64,
    points: usize,
    dx: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("domain_length", &self.domain_length)
            .field("points", &self.points)
            .field("dx", &self.dx)
            .finish()
    }
}

impl SpectralGrid {
    /// Builds a grid of `points` nodes on a domain of length `domain_length`.
    ///
    /// `points` must be a power of two and at least 4.
    pub fn new(domain_length: f64, points: usize) -> Result<Self> {
        if !(domain_length > 0.0) || !domain_length.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "domain length must be positive, got {domain_length}"
            )));
        }
        if points < 4 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "grid size must be a power of two >= 4, got {points}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            domain_length,
            points,
            dx: domain_length / points as f64,
            forward: planner.plan_fft_forward(points),
            inverse: planner.plan_fft_inverse(points),
        })
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    /// Number of grid points, which equals the number of retained modes.
    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Node coordinates `-|D|/2 + k dx`.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points)
            .map(|k| -0.5 * self.domain_length + k as f64 * self.dx)
            .collect()
    }

    pub fn mode_kind(&self, index: usize) -> ModeKind {
        let half = self.points / 2;
        if index == 0 {
            ModeKind::Constant
        } else if index == self.points - 1 {
            ModeKind::Nyquist(half)
        } else if index % 2 == 1 {
            ModeKind::Cosine(index.div_ceil(2))
        } else {
            ModeKind::Sine(index / 2)
        }
    }

    pub fn mode_table(&self) -> Vec<ModeKind> {
        (0..self.points).map(|i| self.mode_kind(i)).collect()
    }

    /// Angular frequency `2 pi l / |D|` of mode `index`.
    pub fn wavenumber(&self, index: usize) -> f64 {
        2.0 * PI * self.mode_kind(index).frequency() as f64 / self.domain_length
    }

    /// Value of basis function `index` at coordinate `xi`.
    pub fn basis_value(&self, index: usize, xi: f64) -> f64 {
        let s = xi + 0.5 * self.domain_length;
        let k = self.wavenumber(index);
        let c1 = 1.0 / self.domain_length.sqrt();
        let c2 = (2.0 / self.domain_length).sqrt();
        match self.mode_kind(index) {
            ModeKind::Constant => c1,
            ModeKind::Cosine(_) => c2 * (k * s).cos(),
            ModeKind::Sine(_) => c2 * (k * s).sin(),
            ModeKind::Nyquist(_) => c1 * (k * s).cos(),
        }
    }

    /// Antiderivative of basis function `index` in `xi`.
    pub fn basis_antiderivative(&self, index: usize, xi: f64) -> f64 {
        let s = xi + 0.5 * self.domain_length;
        let k = self.wavenumber(index);
        let c1 = 1.0 / self.domain_length.sqrt();
        let c2 = (2.0 / self.domain_length).sqrt();
        match self.mode_kind(index) {
            ModeKind::Constant => c1 * s,
            ModeKind::Cosine(_) => c2 * (k * s).sin() / k,
            ModeKind::Sine(_) => -c2 * (k * s).cos() / k,
            ModeKind::Nyquist(_) => c1 * (k * s).sin() / k,
        }
    }

    /// Grid values to mode coefficients.
    pub fn to_modes(&self, field: &[f64]) -> Result<DVector<f64>> {
        check_len(self.points, field.len(), "field length")?;
        let mut out = DVector::zeros(self.points);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.points];
        self.to_modes_into(field, &mut buf, &mut vec![Complex64::default(); self.scratch_len()], out.as_mut_slice());
        Ok(out)
    }

    /// Mode coefficients to grid values.
    pub fn to_field(&self, modes: &[f64]) -> Result<Vec<f64>> {
        check_len(self.points, modes.len(), "mode vector length")?;
        let mut out = vec![0.0; self.points];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.points];
        self.to_field_into(modes, &mut buf, &mut vec![Complex64::default(); self.scratch_len()], &mut out);
        Ok(out)
    }

    /// Unchecked transform into caller-provided storage; `buf` is FFT scratch.
    /// Scratch length needed by the `_into` transforms.
    pub(crate) fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    pub(crate) fn to_modes_into(&self, field: &[f64], buf: &mut [Complex64], scratch: &mut [Complex64], out: &mut [f64]) {
        let m = self.points;
        for (b, &x) in buf.iter_mut().zip(field) {
            *b = Complex64::new(x, 0.0);
        }
        self.forward.process_with_scratch(buf, scratch);
        let c1 = self.dx / self.domain_length.sqrt();
        let c2 = self.dx * (2.0 / self.domain_length).sqrt();
        out[0] = c1 * buf[0].re;
        for l in 1..m / 2 {
            out[2 * l - 1] = c2 * buf[l].re;
            out[2 * l] = -c2 * buf[l].im;
        }
        out[m - 1] = c1 * buf[m / 2].re;
    }

    pub(crate) fn to_field_into(&self, modes: &[f64], buf: &mut [Complex64], scratch: &mut [Complex64], out: &mut [f64]) {
        let m = self.points;
        let c1 = 1.0 / self.domain_length.sqrt();
        let c2 = 1.0 / (2.0 * self.domain_length).sqrt();
        buf[0] = Complex64::new(c1 * modes[0], 0.0);
        buf[m / 2] = Complex64::new(c1 * modes[m - 1], 0.0);
        for l in 1..m / 2 {
            let z = Complex64::new(c2 * modes[2 * l - 1], -c2 * modes[2 * l]);
            buf[l] = z;
            buf[m - l] = z.conj();
        }
        self.inverse.process_with_scratch(buf, scratch);
        for (o, b) in out.iter_mut().zip(buf.iter()) {
            *o = b.re;
        }
    }

    /// Plain DFT of a real sequence on this grid (used for convolution kernels).
    pub(crate) fn dft_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// `L²(D)` inner product of two grid fields by the grid quadrature.
    pub fn inner_product(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dx * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }
}

/// Eigenvalues of the diagonal linear part: `A e_l = -a_l e_l`, `Q e_l = q_l e_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    a: DVector<f64>,
    q: DVector<f64>,
}

impl LinearDynamics {
    pub fn new(a: DVector<f64>, q: DVector<f64>) -> Result<Self> {
        check_len(a.len(), q.len(), "decay rates vs noise spectrum")?;
        if a.is_empty() {
            return Err(Error::InvalidParameter("empty dynamics".into()));
        }
        if let Some(v) = a.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "decay rates must be positive, got {v}"
            )));
        }
        if let Some(v) = q.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise eigenvalues must be nonnegative, got {v}"
            )));
        }
        Ok(Self { a, q })
    }

    /// Constant decay rate `a` on every mode (the Amari linear part uses `a = 1`).
    pub fn uniform_decay(rate: f64, q: DVector<f64>) -> Result<Self> {
        Self::new(DVector::from_element(q.len(), rate), q)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn decay_rates(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn noise_spectrum(&self) -> &DVector<f64> {
        &self.q
    }

    /// The common decay rate when all modes share one.
    pub fn common_decay(&self) -> Option<f64> {
        let a0 = self.a[0];
        self.a.iter().all(|&a| a == a0).then_some(a0)
    }

    /// Per-mode semigroup factors `exp(-a_l dt)`.
    pub fn semigroup_factors(&self, dt: f64) -> Result<DVector<f64>> {
        check_time_step(dt)?;
        Ok(self.a.map(|a| (-a * dt).exp()))
    }

    /// Per-mode variance of the stochastic convolution over a step of length `dt`.
    pub fn ou_step_variance(&self, dt: f64) -> Result<DVector<f64>> {
        check_time_step(dt)?;
        Ok(self.a.zip_map(&self.q, |a, q| q * ou_variance_factor(a, dt)))
    }

    /// Diagonal of `Q_dt = int_0^dt S_u Q S_u^* du` (same as the step variance).
    pub fn integrated_covariance(&self, dt: f64) -> Result<DVector<f64>> {
        self.ou_step_variance(dt)
    }

    /// Stationary per-mode variance `q_l / (2 a_l)`.
    pub fn stationary_variance(&self) -> DVector<f64> {
        self.a.zip_map(&self.q, |a, q| q / (2.0 * a))
    }

    pub(crate) fn step_coefficients(&self, dt: f64) -> StepCoefficients {
        StepCoefficients {
            decay: self.a.map(|a| (-a * dt).exp()),
            phi: self.a.map(|a| -(-a * dt).exp_m1() / a),
            noise_scale: self
                .a
                .zip_map(&self.q, |a, q| (q * ou_variance_factor(a, dt)).sqrt()),
            q: self.q.clone(),
            dt,
        }
    }
}

/// `(1 - exp(-2 a t)) / (2 a)`, the variance factor of an OU mode after time `t`.
pub fn ou_variance_factor(a: f64, t: f64) -> f64 {
    -(-2.0 * a * t).exp_m1() / (2.0 * a)
}

fn check_time_step(dt: f64) -> Result<()> {
    if dt >= 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "time step must be nonnegative, got {dt}"
        )))
    }
}

/// Precomputed exponential-Euler coefficients for one step size.
#[derive(Debug, Clone)]
pub(crate) struct StepCoefficients {
    pub decay: DVector<f64>,
    pub phi: DVector<f64>,
    pub noise_scale: DVector<f64>,
    pub q: DVector<f64>,
    pub dt: f64,
}

/// Parameters of the Matérn-type noise spectrum.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaternParams {
    pub sigma0: f64,
    pub rho0: f64,
    pub eta0: f64,
    /// Spatial dimension `d` entering the exponent.
    #[serde(default = "default_dimension")]
    pub dimension: f64,
    /// Use `2 pi l / |D|` instead of the literal integer frequency `2 pi l`.
    #[serde(default)]
    pub scaled_frequencies: bool,
}

fn default_dimension() -> f64 {
    1.0
}

impl MaternParams {
    pub fn new(sigma0: f64, rho0: f64, eta0: f64) -> Self {
        Self {
            sigma0,
            rho0,
            eta0,
            dimension: 1.0,
            scaled_frequencies: false,
        }
    }

    /// Eigenvalue for integer frequency `l`.
    pub fn eigenvalue(&self, l: usize, domain_length: f64) -> f64 {
        let mut w = 2.0 * PI * l as f64;
        if self.scaled_frequencies {
            w /= domain_length;
        }
        let base = self.rho0.powi(-2) + w * w;
        self.sigma0 * self.sigma0 * base.powf(-(0.5 * self.dimension + self.eta0))
    }
}

/// Noise eigenvalues `q_l = sigma0² (rho0⁻² + (2 pi l)²)^-(d/2 + eta0)` per mode index.
pub fn matern_spectrum(params: &MaternParams, grid: &SpectralGrid) -> Result<DVector<f64>> {
    for (name, v) in [
        ("sigma0", params.sigma0),
        ("rho0", params.rho0),
        ("eta0", params.eta0),
        ("dimension", params.dimension),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    Ok(DVector::from_iterator(
        grid.len(),
        (0..grid.len()).map(|i| params.eigenvalue(grid.mode_kind(i).frequency(), grid.domain_length())),
    ))
}
