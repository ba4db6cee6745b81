//! Run configuration file.

use std::fs;
use std::path::Path;

use guided_spde::filter::{FilterConfig, Flavor};
use guided_spde::model::{AmariModelSpec, InitialState};
use guided_spde::smoother::{InitialMode, SmootherConfig, ThetaMode, AMARI_PRIOR};
use guided_spde::ukf::UkfParams;
use guided_spde::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: AmariModelSpec,
    #[serde(default)]
    pub x0: InitialState,
    pub observation: ObservationBlock,
    #[serde(default)]
    pub method: MethodBlock,
    #[serde(default)]
    pub output: OutputBlock,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationBlock {
    pub times: Vec<f64>,
    /// Simulation step used to generate data.
    pub dt: f64,
    pub cells: usize,
    pub cell_width: f64,
    pub sigma_scale: f64,
}

/// Filter and smoother settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodBlock {
    pub flavor: Method,
    /// Step size for filtering and smoothing; defaults to the dataset step.
    pub dt: Option<f64>,
    /// Keep every `downsample`-th observation.
    pub downsample: Option<usize>,
    pub particles: usize,
    pub alpha: f64,
    pub n_move: usize,
    pub beta: f64,
    pub tempering: bool,
    pub resample_threshold: f64,
    pub ukf: UkfParams,
    pub compare: Vec<Method>,
    pub smoother: SmootherBlock,
}

impl Default for MethodBlock {
    fn default() -> Self {
        Self {
            flavor: Method::Gpf1,
            dt: None,
            downsample: None,
            particles: 100,
            alpha: 0.75,
            n_move: 30,
            beta: 0.1,
            tempering: true,
            resample_threshold: 0.5,
            ukf: UkfParams::default(),
            compare: vec![Method::Gpf1, Method::Gpf2, Method::Bootstrap, Method::Ukf],
            smoother: SmootherBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmootherBlock {
    pub iterations: usize,
    pub burn_in: usize,
    pub beta: f64,
    pub beta0: f64,
    pub thinning: usize,
    pub s0: f64,
    pub mean_window: usize,
    pub initial: InitialMode,
    /// Parameter start: `"low"`, `"high"` (prior box ends) or explicit values.
    pub init: ThetaInit,
    pub prior: Vec<[f64; 2]>,
}

impl Default for SmootherBlock {
    fn default() -> Self {
        Self {
            iterations: 15_000,
            burn_in: 5_000,
            beta: 0.1,
            beta0: 0.1,
            thinning: 100,
            s0: 0.0,
            mean_window: 1000,
            initial: InitialMode::Known,
            init: ThetaInit::Named(BoxEnd::Low),
            prior: AMARI_PRIOR.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxEnd {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaInit {
    Named(BoxEnd),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gpf1,
    Gpf2,
    Bootstrap,
    Ukf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gpf1 => "gpf1",
            Method::Gpf2 => "gpf2",
            Method::Bootstrap => "bootstrap",
            Method::Ukf => "ukf",
        }
    }

    pub fn particle_flavor(self) -> Option<Flavor> {
        match self {
            Method::Gpf1 => Some(Flavor::Gpf1),
            Method::Gpf2 => Some(Flavor::Gpf2),
            Method::Bootstrap => Some(Flavor::Bootstrap),
            Method::Ukf => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub heatmaps: bool,
    /// Integer pixel upscale of heatmaps.
    pub upscale: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            heatmaps: true,
            upscale: 2,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        self.filter_config(Flavor::Gpf1).validate()?;
        if self.output.upscale == 0 {
            return Err(Error::InvalidParameter("output.upscale must be positive".into()));
        }
        if let Some(0) = self.method.downsample {
            return Err(Error::InvalidParameter("method.downsample must be positive".into()));
        }
        Ok(())
    }

    pub fn filter_config(&self, flavor: Flavor) -> FilterConfig {
        let m = &self.method;
        FilterConfig {
            flavor,
            particles: m.particles,
            alpha: m.alpha,
            n_move: m.n_move,
            beta: m.beta,
            seed: self.seed,
            tempering: m.tempering,
            resample_threshold: m.resample_threshold,
        }
    }

    /// Smoother settings; `sample_theta` selects parameter inference.
    pub fn smoother_config(&self, sample_theta: bool) -> Result<SmootherConfig> {
        let s = &self.method.smoother;
        let theta = if sample_theta {
            let init = match &s.init {
                ThetaInit::Named(BoxEnd::Low) => s.prior.iter().map(|b| b[0]).collect(),
                ThetaInit::Named(BoxEnd::High) => s.prior.iter().map(|b| b[1]).collect(),
                ThetaInit::Values(v) => v.clone(),
            };
            ThetaMode::Sample {
                init,
                prior: s.prior.clone(),
            }
        } else {
            ThetaMode::Fixed
        };
        let cfg = SmootherConfig {
            iterations: s.iterations,
            burn_in: s.burn_in,
            beta: s.beta,
            beta0: s.beta0,
            initial: s.initial.clone(),
            theta,
            thinning: s.thinning,
            seed: self.seed,
            s0: s.s0,
            mean_window: s.mean_window,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
