//! Model assembly: grid, linear part and nonlinear drift.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::amari::{AmariParams, Drift};
use crate::error::{Error, Result};
use crate::spectral::{matern_spectrum, LinearDynamics, MaternParams, SpectralGrid};

/// The semilinear SPDE `dX = (AX + F(X)) dt + dW` in mode coordinates.
///
/// Low-dimensional test models may omit the spatial grid.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: Option<SpectralGrid>,
    pub dynamics: LinearDynamics,
    pub drift: Drift,
}

impl Model {
    pub fn new(dynamics: LinearDynamics, drift: Drift) -> Self {
        Self {
            grid: None,
            dynamics,
            drift,
        }
    }

    pub fn on_grid(grid: SpectralGrid, dynamics: LinearDynamics, drift: Drift) -> Result<Self> {
        if dynamics.dim() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                got: dynamics.dim(),
                context: "dynamics dimension vs grid size",
            });
        }
        Ok(Self {
            grid: Some(grid),
            dynamics,
            drift,
        })
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn spatial_grid(&self) -> Result<&SpectralGrid> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("model has no spatial grid".into()))
    }

    pub fn with_drift(&self, drift: Drift) -> Self {
        Self {
            grid: self.grid.clone(),
            dynamics: self.dynamics.clone(),
            drift,
        }
    }
}

/// Serializable description of an Amari model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmariModelSpec {
    pub domain_length: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default = "default_decay")]
    pub decay: f64,
    pub noise: MaternParams,
    pub amari: AmariParams,
    /// Disable the nonlinear drift (linear Ornstein-Uhlenbeck model).
    #[serde(default)]
    pub linear: bool,
}

fn default_decay() -> f64 {
    1.0
}

impl AmariModelSpec {
    /// Reference configuration on `[-10 pi, 10 pi]` with `m` grid points.
    pub fn reference(m: usize, amari: AmariParams) -> Self {
        Self {
            domain_length: 20.0 * std::f64::consts::PI,
            m,
            decay: 1.0,
            noise: MaternParams::new(3e5, 5e-5, 1.0),
            amari,
            linear: false,
        }
    }

    pub fn build(&self) -> Result<Model> {
        let grid = SpectralGrid::new(self.domain_length, self.m)?;
        let q = matern_spectrum(&self.noise, &grid)?;
        let dynamics = LinearDynamics::uniform_decay(self.decay, q)?;
        let drift = if self.linear {
            Drift::Zero
        } else {
            Drift::amari(self.amari, &grid)?
        };
        Model::on_grid(grid, dynamics, drift)
    }
}

/// Initial state specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitialState {
    /// The zero field.
    Zero,
    /// Explicit mode coefficients.
    Modes { values: Vec<f64> },
}

impl InitialState {
    pub fn resolve(&self, m: usize) -> Result<DVector<f64>> {
        match self {
            InitialState::Zero => Ok(DVector::zeros(m)),
            InitialState::Modes { values } => {
                if values.len() != m {
                    return Err(Error::ShapeMismatch {
                        expected: m,
                        got: values.len(),
                        context: "initial state",
                    });
                }
                Ok(DVector::from_column_slice(values))
            }
        }
    }
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Zero
    }
}
