//! Path-space MCMC for the smoothing distribution and parameter posterior.
//!
//! A path is represented through the solution map `X = Gamma(x0, W)`, the
//! guided simulation driven by the noise record `W`. Metropolis-within-Gibbs
//! sweeps update `W` by pCN proposals, the initial state (when unknown) by
//! pCN on its Gaussian reference measure, and each drift parameter by an
//! adaptively scaled random walk.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amari::{Drift, DriftFamily};
use crate::dataset::Problem;
use crate::error::{check_len, Error, Result};
use crate::guiding::Guide;
use crate::integrator::{SimWorkspace, Simulator};
use crate::rng::{fill_standard_normal, purpose, standard_normals, stream, StreamRng};

/// Target acceptance rate of the adaptive parameter updates.
pub const TARGET_ACCEPTANCE: f64 = 0.234;

/// Treatment of the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum InitialMode {
    /// The initial state is fixed at the given value.
    Known,
    /// Sampled with reference measure `N(0, diag(variances))`; defaults to
    /// the stationary law `q / (2a)` of the linear part.
    Unknown {
        #[serde(default)]
        variances: Option<Vec<f64>>,
    },
}

/// Treatment of the drift parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum ThetaMode {
    /// Drift fixed at the model's own.
    Fixed,
    /// Sampled under independent uniform priors `[lo, hi]`.
    Sample { init: Vec<f64>, prior: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// pCN step for the noise record.
    pub beta: f64,
    /// pCN step for the initial state.
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    pub initial: InitialMode,
    pub theta: ThetaMode,
    /// Keep every `thinning`-th path.
    pub thinning: usize,
    pub seed: u64,
    /// Initial log step size of the parameter random walks (`0` is a unit step).
    #[serde(default = "default_s0")]
    pub s0: f64,
    /// Number of final iterations averaged into the posterior mean path.
    #[serde(default = "default_window")]
    pub mean_window: usize,
}

fn default_beta0() -> f64 {
    0.1
}

fn default_s0() -> f64 {
    0.0
}

fn default_window() -> usize {
    1000
}

/// Uniform prior boxes of the Amari parameters `(eta, zeta, amp, delta)`.
pub const AMARI_PRIOR: [[f64; 2]; 4] = [[0.0, 15.0], [0.0, 3.0], [0.0, 8.0], [0.0, 1.0]];

impl SmootherConfig {
    /// `beta = 0.1`, known initial state, fixed drift.
    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            beta: 0.1,
            beta0: 0.1,
            initial: InitialMode::Known,
            theta: ThetaMode::Fixed,
            thinning: 100,
            seed,
            s0: 0.0,
            mean_window: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta", self.beta), ("beta0", self.beta0)] {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {b}")));
            }
        }
        if self.burn_in >= self.iterations && self.iterations > 0 {
            return Err(Error::InvalidParameter("burn-in must be shorter than the chain".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidParameter("thinning must be positive".into()));
        }
        if let ThetaMode::Sample { init, prior } = &self.theta {
            check_len(prior.len(), init.len(), "initial parameter vector")?;
            for (v, [lo, hi]) in init.iter().zip(prior) {
                if !(lo <= hi) || v < lo || v > hi {
                    return Err(Error::InvalidParameter(format!(
                        "initial value {v} outside prior box [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Entrywise `sqrt(1 - beta^2) W + beta Z`.
pub fn pcn_propose<R: Rng + ?Sized>(w: &[f64], beta: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0, 1], got {beta}")));
    }
    let mut out = vec![0.0; w.len()];
    pcn_into(w, beta, rng, &mut out);
    Ok(out)
}

fn pcn_into<R: Rng + ?Sized>(w: &[f64], beta: f64, rng: &mut R, out: &mut [f64]) {
    fill_standard_normal(rng, out);
    let rho = (1.0 - beta * beta).sqrt();
    for (o, v) in out.iter_mut().zip(w) {
        *o = rho * v + beta * *o;
    }
}

/// Current chain values with cached derived quantities.
#[derive(Debug, Clone)]
pub struct ChainState {
    /// Noise record, `total_steps x M`.
    pub w: Vec<f64>,
    pub x0: DVector<f64>,
    pub theta: Vec<f64>,
    pub drift: Drift,
    /// Path at every grid node, `(total_steps + 1) x M`.
    pub path: Vec<f64>,
    pub log_psi: f64,
    pub log_g0: f64,
    /// Log step sizes of the parameter random walks.
    pub log_steps: Vec<f64>,
}

/// Per-iteration acceptance flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub path: bool,
    pub x0: Option<bool>,
    pub theta: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherSummary {
    pub iterations: usize,
    pub burn_in: usize,
    pub path_acceptance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_acceptance: Option<f64>,
    pub parameters: Vec<ParameterSummary>,
}

/// Output of [`Smoother::run`].
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub names: Vec<String>,
    /// Parameter values after each iteration.
    pub theta_trace: Vec<Vec<f64>>,
    pub log_psi_trace: Vec<f64>,
    pub records: Vec<SweepRecord>,
    /// `(iteration, path)` for every kept sample.
    pub thinned_paths: Vec<(usize, Vec<f64>)>,
    /// Mean path over the final `mean_window` iterations.
    pub mean_path: Vec<f64>,
    pub x0_trace: Vec<Vec<f64>>,
    pub summary: SmootherSummary,
    pub final_state: ChainState,
}

impl SmootherOutput {
    /// Trace as CSV with a header: `iter, <params>, log_psi, accept flags`.
    pub fn trace_csv(&self) -> String {
        let mut header = vec!["iter".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("log_psi".into());
        header.push("accept_path".into());
        let has_x0 = self.records.first().is_some_and(|r| r.x0.is_some());
        if has_x0 {
            header.push("accept_x0".into());
        }
        header.extend(self.names.iter().map(|n| format!("accept_{n}")));
        let mut out = header.join(",");
        out.push('\n');
        for (i, rec) in self.records.iter().enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(self.theta_trace[i].iter().map(|v| format!("{v:?}")));
            row.push(format!("{:?}", self.log_psi_trace[i]));
            row.push(u8::from(rec.path).to_string());
            if let Some(a) = rec.x0 {
                row.push(u8::from(a).to_string());
            }
            row.extend(rec.theta.iter().map(|a| u8::from(*a).to_string()));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Metropolis-within-Gibbs sampler over `(W, x0, theta)`.
pub struct Smoother<'a> {
    problem: &'a Problem,
    guide: &'a dyn Guide,
    family: Option<&'a dyn DriftFamily>,
    config: SmootherConfig,
    nu0_sd: DVector<f64>,
}

impl<'a> Smoother<'a> {
    pub fn new(
        problem: &'a Problem,
        guide: &'a dyn Guide,
        family: Option<&'a dyn DriftFamily>,
        config: SmootherConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_len(problem.dim(), guide.dim(), "guide dimension")?;
        check_len(problem.num_observations(), guide.num_intervals(), "guide intervals")?;
        let nu0_var = match &config.initial {
            InitialMode::Unknown { variances: Some(v) } => {
                check_len(problem.dim(), v.len(), "reference variances")?;
                DVector::from_column_slice(v)
            }
            _ => problem.model.dynamics.stationary_variance(),
        };
        if let ThetaMode::Sample { init, .. } = &config.theta {
            let fam = family.ok_or_else(|| {
                Error::InvalidParameter("parameter sampling requires a drift family".into())
            })?;
            check_len(fam.names().len(), init.len(), "parameter vector")?;
        }
        Ok(Self {
            problem,
            guide,
            family,
            config,
            nu0_sd: nu0_var.map(f64::sqrt),
        })
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    fn noise_len(&self) -> usize {
        self.problem.grid.total_steps() * self.problem.dim()
    }

    /// `Gamma(x0, W)` under `drift`: path at all nodes and `log Psi`.
    pub fn solution_map(&self, x0: &[f64], w: &[f64], drift: &Drift) -> Result<(Vec<f64>, f64)> {
        check_len(self.problem.dim(), x0.len(), "initial state")?;
        check_len(self.noise_len(), w.len(), "noise record")?;
        let mut path = vec![0.0; (self.problem.grid.total_steps() + 1) * self.problem.dim()];
        let lp = self.map_into(x0, w, drift, &mut path);
        Ok((path, lp))
    }

    fn map_into(&self, x0: &[f64], w: &[f64], drift: &Drift, path: &mut [f64]) -> f64 {
        let sim = Simulator::with_drift(&self.problem.model, drift, &self.problem.grid);
        let mut ws = SimWorkspace::new(self.problem.dim());
        sim.simulate_path_into(x0, w, Some(self.guide), &mut ws, path)
    }

    fn log_g0(&self, x0: &[f64]) -> f64 {
        self.guide.log_g(0, 0.0, x0)
    }

    /// Chain state from an explicit noise record.
    pub fn state_from(&self, x0: DVector<f64>, w: Vec<f64>, theta: Vec<f64>) -> Result<ChainState> {
        let drift = match (&self.config.theta, self.family) {
            (ThetaMode::Sample { .. }, Some(f)) => f.build(&theta)?,
            _ => self.problem.model.drift.clone(),
        };
        let (path, log_psi) = self.solution_map(x0.as_slice(), &w, &drift)?;
        Ok(ChainState {
            log_g0: self.log_g0(x0.as_slice()),
            w,
            x0,
            log_steps: vec![self.config.s0; theta.len()],
            theta,
            drift,
            path,
            log_psi,
        })
    }

    /// Initial chain state with a fresh noise record.
    pub fn initial_state(&self, x0: &[f64]) -> Result<ChainState> {
        let mut rng = stream(self.config.seed, &[purpose::INIT]);
        let w = standard_normals(&mut rng, self.noise_len());
        let theta = match &self.config.theta {
            ThetaMode::Sample { init, .. } => init.clone(),
            ThetaMode::Fixed => Vec::new(),
        };
        self.state_from(DVector::from_column_slice(x0), w, theta)
    }

    /// Recomputes all caches from `(W, x0, theta)` and compares bit-exactly.
    pub fn caches_consistent(&self, state: &ChainState) -> bool {
        let Ok(fresh) = self.state_from(state.x0.clone(), state.w.clone(), state.theta.clone()) else {
            return false;
        };
        fresh.path == state.path
            && fresh.log_psi.to_bits() == state.log_psi.to_bits()
            && fresh.log_g0.to_bits() == state.log_g0.to_bits()
    }

    /// pCN update of the noise record, accepted with `min(1, Psi'/Psi)`.
    pub fn path_update(&self, state: &mut ChainState, rng: &mut StreamRng) -> bool {
        let mut w_new = vec![0.0; state.w.len()];
        pcn_into(&state.w, self.config.beta, rng, &mut w_new);
        let mut path = vec![0.0; state.path.len()];
        let lp = self.map_into(state.x0.as_slice(), &w_new, &state.drift, &mut path);
        let log_u = rng.random::<f64>().ln();
        if log_u < lp - state.log_psi {
            state.w = w_new;
            state.path = path;
            state.log_psi = lp;
            true
        } else {
            false
        }
    }

    /// pCN update of the initial state on its Gaussian reference measure.
    pub fn x0_update(&self, state: &mut ChainState, rng: &mut StreamRng) -> bool {
        let m = self.problem.dim();
        let beta = self.config.beta0;
        let rho = (1.0 - beta * beta).sqrt();
        let z = standard_normals(rng, m);
        let x_new = DVector::from_fn(m, |l, _| rho * state.x0[l] + beta * self.nu0_sd[l] * z[l]);
        let mut path = vec![0.0; state.path.len()];
        let lp = self.map_into(x_new.as_slice(), &state.w, &state.drift, &mut path);
        let lg = self.log_g0(x_new.as_slice());
        let log_u = rng.random::<f64>().ln();
        if log_u < (lg + lp) - (state.log_g0 + state.log_psi) {
            state.x0 = x_new;
            state.path = path;
            state.log_psi = lp;
            state.log_g0 = lg;
            true
        } else {
            false
        }
    }

    /// Random-walk update of parameter `c`; adapts its step with rate `iter^{-2/3}`.
    pub fn theta_update(&self, state: &mut ChainState, c: usize, iter: usize, rng: &mut StreamRng) -> Result<bool> {
        let (prior, family) = match (&self.config.theta, self.family) {
            (ThetaMode::Sample { prior, .. }, Some(f)) => (prior, f),
            _ => return Ok(false),
        };
        let z: f64 = standard_normals(rng, 1)[0];
        let mut theta_new = state.theta.clone();
        theta_new[c] += state.log_steps[c].exp() * z;
        let [lo, hi] = prior[c];
        let log_u = rng.random::<f64>().ln();
        let mut accept_prob = 0.0;
        let mut accepted = false;
        if theta_new[c] >= lo && theta_new[c] <= hi {
            let drift = family.build(&theta_new)?;
            let mut path = vec![0.0; state.path.len()];
            let lp = self.map_into(state.x0.as_slice(), &state.w, &drift, &mut path);
            let log_ratio = lp - state.log_psi;
            accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
            if log_u < log_ratio {
                state.theta = theta_new;
                state.drift = drift;
                state.path = path;
                state.log_psi = lp;
                accepted = true;
            }
        }
        state.log_steps[c] += adapt_rate(iter) * (accept_prob - TARGET_ACCEPTANCE);
        Ok(accepted)
    }

    /// Runs the sampler from the given initial state value.
    pub fn run(&self, x0: &[f64]) -> Result<SmootherOutput> {
        let mut state = self.initial_state(x0)?;
        self.run_from(&mut state)
    }

    pub fn run_from(&self, state: &mut ChainState) -> Result<SmootherOutput> {
        let cfg = &self.config;
        let names = match (&cfg.theta, self.family) {
            (ThetaMode::Sample { .. }, Some(f)) => f.names(),
            _ => Vec::new(),
        };
        let p = names.len();
        let sample_x0 = matches!(cfg.initial, InitialMode::Unknown { .. });
        let mut rng = stream(cfg.seed, &[purpose::CHAIN]);
        let mut out = SmootherOutput {
            names,
            theta_trace: Vec::with_capacity(cfg.iterations),
            log_psi_trace: Vec::with_capacity(cfg.iterations),
            records: Vec::with_capacity(cfg.iterations),
            thinned_paths: Vec::new(),
            mean_path: vec![0.0; state.path.len()],
            x0_trace: Vec::new(),
            summary: SmootherSummary {
                iterations: cfg.iterations,
                burn_in: cfg.burn_in,
                path_acceptance: 0.0,
                x0_acceptance: None,
                parameters: Vec::new(),
            },
            final_state: state.clone(),
        };
        let window_start = cfg.iterations.saturating_sub(cfg.mean_window);
        let mut path_acc = 0usize;
        let mut x0_acc = 0usize;
        let mut theta_acc = vec![0usize; p];
        for it in 1..=cfg.iterations {
            let mut rec = SweepRecord {
                path: self.path_update(state, &mut rng),
                ..Default::default()
            };
            path_acc += usize::from(rec.path);
            if sample_x0 {
                let a = self.x0_update(state, &mut rng);
                x0_acc += usize::from(a);
                rec.x0 = Some(a);
                out.x0_trace.push(state.x0.as_slice().to_vec());
            }
            for c in 0..p {
                let a = self.theta_update(state, c, it, &mut rng)?;
                theta_acc[c] += usize::from(a);
                rec.theta.push(a);
            }
            if !state.log_psi.is_finite() {
                return Err(Error::Numerical(format!("log Psi is not finite at iteration {it}")));
            }
            out.theta_trace.push(state.theta.clone());
            out.log_psi_trace.push(state.log_psi);
            out.records.push(rec);
            if it % cfg.thinning == 0 {
                out.thinned_paths.push((it, state.path.clone()));
            }
            if it > window_start {
                for (m, v) in out.mean_path.iter_mut().zip(&state.path) {
                    *m += v;
                }
            }
        }
        let window = (cfg.iterations - window_start).max(1) as f64;
        for m in &mut out.mean_path {
            *m /= window;
        }
        let n = cfg.iterations.max(1) as f64;
        out.summary.path_acceptance = path_acc as f64 / n;
        if sample_x0 {
            out.summary.x0_acceptance = Some(x0_acc as f64 / n);
        }
        let kept = &out.theta_trace[cfg.burn_in.min(out.theta_trace.len())..];
        for c in 0..p {
            let vals: Vec<f64> = kept.iter().map(|t| t[c]).collect();
            let (mean, std) = mean_std(&vals);
            out.summary.parameters.push(ParameterSummary {
                name: out.names[c].clone(),
                mean,
                std,
                acceptance: theta_acc[c] as f64 / n,
            });
        }
        out.final_state = state.clone();
        Ok(out)
    }
}

/// Robbins-Monro rate `j^{-2/3}`.
pub fn adapt_rate(iter: usize) -> f64 {
    (iter.max(1) as f64).powf(-2.0 / 3.0)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
