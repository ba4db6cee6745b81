//! Synthetic data generation, the dataset file format and assembled problems.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::amari::AmariParams;
use crate::error::{check_len, Error, Result};
use crate::integrator::{SimulatedPath, Simulator, TimeGrid};
use crate::model::{AmariModelSpec, Model};
use crate::observation::{equally_spaced_centers, ObservationScheme};
use crate::rng::{purpose, standard_normals, stream};
use crate::spectral::MaternParams;

/// Parameters the data were generated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    #[serde(flatten)]
    pub amari: AmariParams,
    #[serde(flatten)]
    pub noise: MaternParams,
    #[serde(default = "one")]
    pub decay: f64,
    #[serde(default)]
    pub linear: bool,
}

fn one() -> f64 {
    1.0
}

/// Observations together with everything needed to rebuild the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub domain_length: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub times: Vec<f64>,
    pub cell_centers: Vec<f64>,
    pub cell_width: f64,
    pub sigma_scale: f64,
    /// One row per observation time.
    pub y: Vec<Vec<f64>>,
    pub theta_true: TrueParameters,
    pub seed: u64,
    /// Step size of the simulation that produced the data.
    pub dt: f64,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::Format("dataset has no observation times".into()));
        }
        if self.y.len() != self.times.len() {
            return Err(Error::Format(format!(
                "{} observation rows for {} times",
                self.y.len(),
                self.times.len()
            )));
        }
        for (i, row) in self.y.iter().enumerate() {
            if row.len() != self.cell_centers.len() {
                return Err(Error::Format(format!(
                    "observation row {i} has {} entries, expected {}",
                    row.len(),
                    self.cell_centers.len()
                )));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::Format(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn num_observations(&self) -> usize {
        self.times.len()
    }

    pub fn model_spec(&self) -> AmariModelSpec {
        AmariModelSpec {
            domain_length: self.domain_length,
            m: self.m,
            decay: self.theta_true.decay,
            noise: self.theta_true.noise,
            amari: self.theta_true.amari,
            linear: self.theta_true.linear,
        }
    }

    /// Keeps rows `step-1, 2 step-1, ...`, so `step = 4` on times `1..20` leaves `4, 8, ..., 20`.
    pub fn downsample(&self, step: usize) -> Result<Dataset> {
        if step == 0 {
            return Err(Error::InvalidParameter("downsampling step must be positive".into()));
        }
        let keep: Vec<usize> = (0..self.times.len()).filter(|i| (i + 1) % step == 0).collect();
        if keep.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "downsampling by {step} leaves no observations"
            )));
        }
        let mut out = self.clone();
        out.times = keep.iter().map(|&i| self.times[i]).collect();
        out.y = keep.iter().map(|&i| self.y[i].clone()).collect();
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Dataset = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Observations as CSV, one row per time, optionally with a header line.
    pub fn y_csv(&self, header: bool) -> String {
        let mut out = String::new();
        if header {
            let cols: Vec<String> = (1..=self.cell_centers.len()).map(|j| format!("y{j}")).collect();
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        for row in &self.y {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Settings for synthetic data generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub model: AmariModelSpec,
    pub times: Vec<f64>,
    pub dt: f64,
    /// Number of equally spaced cells.
    pub cells: usize,
    pub cell_width: f64,
    pub sigma_scale: f64,
    pub seed: u64,
}

impl GenerateConfig {
    /// Reference setup: `[0, 20] x [-10 pi, 10 pi]`, 20 observation times, 15 unit cells.
    pub fn reference(m: usize, dt: f64, amari: AmariParams, seed: u64) -> Self {
        Self {
            model: AmariModelSpec::reference(m, amari),
            times: (1..=20).map(|i| i as f64).collect(),
            dt,
            cells: 15,
            cell_width: 1.0,
            sigma_scale: 0.01,
            seed,
        }
    }
}

/// Output of [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub grid: TimeGrid,
    pub path: SimulatedPath,
}

/// Forward-simulates from the zero field and observes at each time.
pub fn generate_dataset(config: &GenerateConfig) -> Result<Generated> {
    let model = config.model.build()?;
    let grid = TimeGrid::with_step(config.times.clone(), config.dt)?;
    let centers = equally_spaced_centers(config.model.domain_length, config.cells);
    let scheme = ObservationScheme::local_average(
        model.spatial_grid()?,
        &centers,
        config.cell_width,
        config.sigma_scale,
    )?;
    let m = model.dim();
    let sim = Simulator::new(&model, &grid);
    let mut noise_rng = stream(config.seed, &[purpose::SIMULATE]);
    let noise = standard_normals(&mut noise_rng, grid.total_steps() * m);
    let path = sim.simulate_path(&vec![0.0; m], &noise, None)?;
    let mut obs_rng = stream(config.seed, &[purpose::OBSERVE]);
    let mut y = Vec::with_capacity(config.times.len());
    for k in 0..grid.num_intervals() {
        y.push(scheme.observe(path.at_observation(k), &mut obs_rng)?.as_slice().to_vec());
    }
    let dataset = Dataset {
        domain_length: config.model.domain_length,
        m,
        times: config.times.clone(),
        cell_centers: centers,
        cell_width: config.cell_width,
        sigma_scale: config.sigma_scale,
        y,
        theta_true: TrueParameters {
            amari: config.model.amari,
            noise: config.model.noise,
            decay: config.model.decay,
            linear: config.model.linear,
        },
        seed: config.seed,
        dt: config.dt,
    };
    Ok(Generated {
        dataset,
        grid,
        path,
    })
}

/// A fully assembled filtering or smoothing problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Model,
    pub scheme: ObservationScheme,
    pub grid: TimeGrid,
    pub y: Vec<DVector<f64>>,
}

impl Problem {
    pub fn new(model: Model, scheme: ObservationScheme, grid: TimeGrid, y: Vec<DVector<f64>>) -> Result<Self> {
        check_len(grid.num_intervals(), y.len(), "observation rows")?;
        check_len(model.dim(), scheme.state_dim(), "observation operator columns")?;
        for row in &y {
            check_len(scheme.len(), row.len(), "observation row")?;
        }
        Ok(Self {
            model,
            scheme,
            grid,
            y,
        })
    }

    /// Rebuilds model, scheme and time grid; `dt` overrides the dataset step.
    pub fn from_dataset(dataset: &Dataset, dt: Option<f64>) -> Result<Self> {
        dataset.validate()?;
        let model = dataset.model_spec().build()?;
        let scheme = ObservationScheme::local_average(
            model.spatial_grid()?,
            &dataset.cell_centers,
            dataset.cell_width,
            dataset.sigma_scale,
        )?;
        let grid = TimeGrid::with_step(dataset.times.clone(), dt.unwrap_or(dataset.dt))?;
        let y = dataset.y.iter().map(|r| DVector::from_column_slice(r)).collect();
        Self::new(model, scheme, grid, y)
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn num_observations(&self) -> usize {
        self.y.len()
    }

    pub fn with_model(&self, model: Model) -> Result<Self> {
        Self::new(model, self.scheme.clone(), self.grid.clone(), self.y.clone())
    }
}
