//! Guided particle filters with adaptive tempering and pCN move steps.
//!
//! Between observations every particle is propagated with a guided (or, for
//! the bootstrap flavour, unguided) simulation. The importance weight of the
//! guided flavours is `g_k(t_{k-1}, x) Psi`, the bootstrap weight is the
//! observation density. The weights are then bridged in by a sequence of
//! adaptively chosen powers `psi`, with resampling and Metropolis moves on
//! the interval noise records at each stage.

mod weights;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Problem;
use crate::error::{check_len, Error, Result};
use crate::guiding::{build_gpf2_guide, build_onestep_guide, Guide};
use crate::integrator::{SimWorkspace, Simulator};
use crate::metrics::relative_error;
use crate::rng::{fill_standard_normal, purpose, stream};

pub use weights::{adapt_temperature, ess, log_mean_exp, normalize, systematic_from_offset, systematic_resample};

/// Proposal and weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    /// One-step guide with the model's linear part.
    Gpf1,
    /// One-step guide of a Brownian auxiliary process.
    Gpf2,
    /// Unguided proposals weighted by the observation density.
    Bootstrap,
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpf1" => Ok(Flavor::Gpf1),
            "gpf2" => Ok(Flavor::Gpf2),
            "bootstrap" => Ok(Flavor::Bootstrap),
            other => Err(Error::InvalidParameter(format!("unknown filter flavor '{other}'"))),
        }
    }
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Gpf1 => "gpf1",
            Flavor::Gpf2 => "gpf2",
            Flavor::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub flavor: Flavor,
    /// Number of particles `J`.
    pub particles: usize,
    /// Target ESS fraction for adaptive tempering.
    pub alpha: f64,
    /// pCN moves per particle and tempering stage.
    pub n_move: usize,
    /// pCN step size; `1` gives independent proposals.
    pub beta: f64,
    pub seed: u64,
    /// Without tempering, weights accumulate and the cloud is resampled
    /// whenever the ESS drops below `resample_threshold * J`.
    #[serde(default = "yes")]
    pub tempering: bool,
    #[serde(default = "half")]
    pub resample_threshold: f64,
}

fn yes() -> bool {
    true
}

fn half() -> f64 {
    0.5
}

impl FilterConfig {
    /// `J = 100`, `alpha = 0.75`, 30 moves, `beta = 0.1`.
    pub fn reference(flavor: Flavor, seed: u64) -> Self {
        Self {
            flavor,
            particles: 100,
            alpha: 0.75,
            n_move: 30,
            beta: 0.1,
            seed,
            tempering: true,
            resample_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidParameter("at least one particle is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.resample_threshold >= 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::InvalidParameter("resample threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Tempering record at one observation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperSchedule {
    /// `0 = psi_0 < psi_1 < ... < psi_L = 1`.
    pub psi: Vec<f64>,
    /// Accepted moves per stage (out of `J * n_move`).
    pub accepted: Vec<usize>,
    /// ESS of the weights after each stage's resampling.
    pub post_resample_ess: Vec<f64>,
}

/// Per-time filter output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub flavor: String,
    pub times: Vec<f64>,
    /// Particle mean in mode space, one row per observation time.
    pub means: Vec<Vec<f64>>,
    /// Per-mode particle variance.
    pub variances: Vec<Vec<f64>>,
    /// ESS of the full incremental weights before tempering or resampling.
    pub ess: Vec<f64>,
    pub schedules: Vec<TemperSchedule>,
    /// Increments of the log evidence estimate.
    pub log_evidence_increments: Vec<f64>,
    pub log_evidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_errors: Option<Vec<f64>>,
}

impl FilterResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Particle means as CSV: `t, mode_0, ..., mode_{M-1}`.
    pub fn means_csv(&self) -> String {
        let mut out = String::new();
        for (t, row) in self.times.iter().zip(&self.means) {
            out.push_str(&format!("{t:?}"));
            for v in row {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    /// Relative errors as CSV: `t, error`.
    pub fn errors_csv(&self) -> Option<String> {
        let e = self.relative_errors.as_ref()?;
        let mut out = String::from("t,relative_error\n");
        for (t, v) in self.times.iter().zip(e) {
            out.push_str(&format!("{t:?},{v:?}\n"));
        }
        Some(out)
    }
}

/// Particle states, their interval start states and noise records.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub dim: usize,
    /// Row-major `J x M`.
    pub states: Vec<f64>,
    pub starts: Vec<f64>,
    /// Row-major `J x (substeps * M)` noise of the current interval.
    pub noise: Vec<f64>,
    pub log_weights: Vec<f64>,
    /// Log incremental weight `Lambda` of each particle on the current interval.
    pub log_lambda: Vec<f64>,
}

impl ParticleCloud {
    pub fn from_state(x0: &[f64], particles: usize) -> Self {
        let dim = x0.len();
        let states: Vec<f64> = (0..particles).flat_map(|_| x0.iter().copied()).collect();
        Self {
            dim,
            starts: states.clone(),
            states,
            noise: Vec::new(),
            log_weights: vec![0.0; particles],
            log_lambda: vec![0.0; particles],
        }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    /// Self-normalised weighted mean and per-mode variance.
    pub fn moments(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = normalize(&self.log_weights)?;
        let mut mean = vec![0.0; self.dim];
        for (j, wj) in w.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(self.state(j)) {
                *m += wj * x;
            }
        }
        let mut var = vec![0.0; self.dim];
        for (j, wj) in w.iter().enumerate() {
            for ((v, x), m) in var.iter_mut().zip(self.state(j)).zip(&mean) {
                *v += wj * (x - m) * (x - m);
            }
        }
        Ok((mean, var))
    }

    fn resample(&mut self, parents: &[usize]) {
        let dim = self.dim;
        let nl = if self.is_empty() { 0 } else { self.noise.len() / self.len() };
        let mut states = Vec::with_capacity(self.states.len());
        let mut starts = Vec::with_capacity(self.starts.len());
        let mut noise = Vec::with_capacity(self.noise.len());
        let mut lam = Vec::with_capacity(parents.len());
        for &p in parents {
            states.extend_from_slice(&self.states[p * dim..(p + 1) * dim]);
            starts.extend_from_slice(&self.starts[p * dim..(p + 1) * dim]);
            noise.extend_from_slice(&self.noise[p * nl..(p + 1) * nl]);
            lam.push(self.log_lambda[p]);
        }
        self.states = states;
        self.starts = starts;
        self.noise = noise;
        self.log_lambda = lam;
        self.log_weights = vec![0.0; parents.len()];
    }
}

/// Maps `f` over particle indices, in parallel when the `parallel` feature is on.
pub(crate) fn map_particles<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Propagation and weighting on one interval.
pub struct IntervalKernel<'a> {
    sim: Simulator<'a>,
    problem: &'a Problem,
    guide: Option<&'a dyn Guide>,
}

impl<'a> IntervalKernel<'a> {
    pub fn new(problem: &'a Problem, guide: Option<&'a dyn Guide>) -> Self {
        Self {
            sim: Simulator::new(&problem.model, &problem.grid),
            problem,
            guide,
        }
    }

    /// Simulates interval `k` from `start` with `noise`; returns `(end, Lambda)`.
    pub fn propagate(&self, k: usize, start: &[f64], noise: &[f64], ws: &mut SimWorkspace) -> (Vec<f64>, f64) {
        let mut end = vec![0.0; start.len()];
        let log_psi = self.sim.simulate_interval(k, start, noise, self.guide, ws, &mut end, None);
        let lam = match self.guide {
            Some(g) => g.log_g(k, self.problem.grid.start(k), start) + log_psi,
            None => self.problem.scheme.log_density_unchecked(&end, self.problem.y[k].as_slice()),
        };
        (end, if lam.is_nan() { f64::NEG_INFINITY } else { lam })
    }
}

/// Algorithm state for a full filtering run.
pub struct ParticleFilter<'a> {
    problem: &'a Problem,
    config: FilterConfig,
    kernel: IntervalKernel<'a>,
}

impl<'a> ParticleFilter<'a> {
    /// Uses `guide` for proposals and weights; `None` gives the bootstrap filter.
    pub fn new(problem: &'a Problem, config: FilterConfig, guide: Option<&'a dyn Guide>) -> Result<Self> {
        config.validate()?;
        if let Some(g) = guide {
            check_len(problem.dim(), g.dim(), "guide dimension")?;
            check_len(problem.num_observations(), g.num_intervals(), "guide intervals")?;
        }
        Ok(Self {
            problem,
            kernel: IntervalKernel::new(problem, guide),
            config,
        })
    }

    /// Propagates every particle over interval `k` and stores `Lambda`.
    pub fn propagate(&self, cloud: &mut ParticleCloud, k: usize) {
        let dim = cloud.dim;
        let nl = self.kernel.sim.interval_noise_len(k);
        let seed = self.config.seed;
        cloud.starts.clone_from(&cloud.states);
        let starts = &cloud.starts;
        let out = map_particles(cloud.len(), |j| {
            let mut rng = stream(seed, &[purpose::PROPAGATE, k as u64, j as u64]);
            let mut noise = vec![0.0; nl];
            fill_standard_normal(&mut rng, &mut noise);
            let mut ws = SimWorkspace::new(dim);
            let (end, lam) = self.kernel.propagate(k, &starts[j * dim..(j + 1) * dim], &noise, &mut ws);
            (end, noise, lam)
        });
        cloud.noise.clear();
        for (j, (end, noise, lam)) in out.into_iter().enumerate() {
            cloud.states[j * dim..(j + 1) * dim].copy_from_slice(&end);
            cloud.noise.extend_from_slice(&noise);
            cloud.log_lambda[j] = lam;
        }
    }

    /// Tempering with resampling and pCN moves until `psi = 1`.
    ///
    /// Returns the schedule and the log evidence increment.
    pub fn temper_and_move(&self, cloud: &mut ParticleCloud, k: usize) -> Result<(TemperSchedule, f64)> {
        let cfg = &self.config;
        let dim = cloud.dim;
        let nl = self.kernel.sim.interval_noise_len(k);
        let rho = (1.0 - cfg.beta * cfg.beta).sqrt();
        let mut psi = 0.0;
        let mut sched = TemperSchedule {
            psi: vec![0.0],
            accepted: Vec::new(),
            post_resample_ess: Vec::new(),
        };
        let mut log_z = 0.0;
        let mut stage = 0u64;
        while psi < 1.0 {
            let next = adapt_temperature(&cloud.log_lambda, psi, cfg.alpha)?;
            let incr: Vec<f64> = cloud.log_lambda.iter().map(|l| (next - psi) * l).collect();
            log_z += log_mean_exp(&incr)?;
            let w = normalize(&incr)?;
            let parents = systematic_resample(&w, &mut stream(cfg.seed, &[purpose::RESAMPLE, k as u64, stage]))?;
            cloud.resample(&parents);
            sched.post_resample_ess.push(ess(&cloud.log_weights)?);
            let starts = &cloud.starts;
            let states = &cloud.states;
            let noise = &cloud.noise;
            let lams = &cloud.log_lambda;
            let moved = map_particles(cloud.len(), |j| {
                let mut rng = stream(cfg.seed, &[purpose::MOVE, k as u64, stage, j as u64]);
                let mut ws = SimWorkspace::new(dim);
                let start = &starts[j * dim..(j + 1) * dim];
                let mut cur_noise = noise[j * nl..(j + 1) * nl].to_vec();
                let mut cur_state = states[j * dim..(j + 1) * dim].to_vec();
                let mut cur_lam = lams[j];
                let mut prop = vec![0.0; nl];
                let mut acc = 0usize;
                for _ in 0..cfg.n_move {
                    fill_standard_normal(&mut rng, &mut prop);
                    for (p, w) in prop.iter_mut().zip(&cur_noise) {
                        *p = rho * w + cfg.beta * *p;
                    }
                    let (end, lam) = self.kernel.propagate(k, start, &prop, &mut ws);
                    let log_u = rng.random::<f64>().ln();
                    if log_u < next * (lam - cur_lam) {
                        std::mem::swap(&mut cur_noise, &mut prop);
                        cur_state = end;
                        cur_lam = lam;
                        acc += 1;
                    }
                }
                (cur_state, cur_noise, cur_lam, acc)
            });
            let mut accepted = 0;
            for (j, (s, n, l, a)) in moved.into_iter().enumerate() {
                cloud.states[j * dim..(j + 1) * dim].copy_from_slice(&s);
                cloud.noise[j * nl..(j + 1) * nl].copy_from_slice(&n);
                cloud.log_lambda[j] = l;
                accepted += a;
            }
            sched.accepted.push(accepted);
            sched.psi.push(next);
            psi = next;
            stage += 1;
        }
        Ok((sched, log_z))
    }

    /// Weight update without tempering, resampling when the ESS falls below the threshold.
    fn reweight(&self, cloud: &mut ParticleCloud) -> Result<f64> {
        let prev = normalize(&cloud.log_weights)?;
        let mut log_z_terms = Vec::with_capacity(cloud.len());
        for (j, p) in prev.iter().enumerate() {
            log_z_terms.push(p.ln() + cloud.log_lambda[j]);
            cloud.log_weights[j] += cloud.log_lambda[j];
        }
        let log_z = log_mean_exp(&log_z_terms)? + (cloud.len() as f64).ln();
        Ok(log_z)
    }

    fn maybe_resample(&self, cloud: &mut ParticleCloud, k: usize) -> Result<()> {
        let j = cloud.len() as f64;
        if ess(&cloud.log_weights)? < self.config.resample_threshold * j {
            let w = normalize(&cloud.log_weights)?;
            let parents = systematic_resample(&w, &mut stream(self.config.seed, &[purpose::RESAMPLE, k as u64, u64::MAX]))?;
            cloud.resample(&parents);
        }
        Ok(())
    }

    /// Runs all observation intervals from the fixed initial state `x0`.
    pub fn run(&self, x0: &[f64], truth: Option<&[DVector<f64>]>) -> Result<FilterResult> {
        check_len(self.problem.dim(), x0.len(), "initial state")?;
        let n = self.problem.num_observations();
        let mut cloud = ParticleCloud::from_state(x0, self.config.particles);
        let mut res = FilterResult {
            flavor: String::new(),
            times: self.problem.grid.times().to_vec(),
            means: Vec::with_capacity(n),
            variances: Vec::with_capacity(n),
            ess: Vec::with_capacity(n),
            schedules: Vec::with_capacity(n),
            log_evidence_increments: Vec::with_capacity(n),
            log_evidence: 0.0,
            relative_errors: None,
        };
        for k in 0..n {
            if !self.config.tempering && k > 0 {
                self.maybe_resample(&mut cloud, k)?;
            }
            self.propagate(&mut cloud, k);
            let full: Vec<f64> = if self.config.tempering {
                cloud.log_lambda.clone()
            } else {
                cloud.log_weights.iter().zip(&cloud.log_lambda).map(|(a, b)| a + b).collect()
            };
            res.ess.push(ess(&full).map_err(|e| Error::Numerical(format!("observation {k}: {e}")))?);
            let log_z = if self.config.tempering {
                let (sched, lz) = self.temper_and_move(&mut cloud, k)?;
                res.schedules.push(sched);
                lz
            } else {
                self.reweight(&mut cloud)?
            };
            res.log_evidence_increments.push(log_z);
            res.log_evidence += log_z;
            let (mean, var) = cloud.moments()?;
            res.means.push(mean);
            res.variances.push(var);
        }
        if let Some(t) = truth {
            check_len(n, t.len(), "true states")?;
            let errs = res
                .means
                .iter()
                .zip(t)
                .map(|(m, x)| relative_error(m, x.as_slice()))
                .collect::<Result<Vec<_>>>()?;
            res.relative_errors = Some(errs);
        }
        Ok(res)
    }
}

/// Builds the flavour's guide and runs the filter.
pub fn run_filter(
    problem: &Problem,
    config: &FilterConfig,
    x0: &[f64],
    truth: Option<&[DVector<f64>]>,
) -> Result<FilterResult> {
    let times = problem.grid.times();
    let guide: Option<Box<dyn Guide>> = match config.flavor {
        Flavor::Gpf1 => Some(Box::new(build_onestep_guide(&problem.scheme, &problem.model.dynamics, times, &problem.y)?)),
        Flavor::Gpf2 => Some(Box::new(build_gpf2_guide(&problem.scheme, &problem.model.dynamics, times, &problem.y)?)),
        Flavor::Bootstrap => None,
    };
    let pf = ParticleFilter::new(problem, config.clone(), guide.as_deref())?;
    let mut res = pf.run(x0, truth)?;
    res.flavor = config.flavor.name().to_string();
    Ok(res)
}
