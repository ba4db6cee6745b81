//! Exponential-Euler integration of the forward and guided SPDEs.
//!
//! Noise is consumed as raw standard normals, one row of `M` values per step,
//! so a recorded noise array can be replayed or perturbed exactly.

use nalgebra::DVector;

use crate::amari::{Drift, DriftWorkspace};
use crate::error::{check_len, Error, Result};
use crate::guiding::Guide;
use crate::model::Model;
use crate::spectral::{LinearDynamics, StepCoefficients};

/// Observation times `t_1 < ... < t_n` with a uniform step inside each interval.
///
/// Interval `k` runs from `t_k` (with `t_0 = 0`) to `t_{k+1}` in zero-based
/// observation indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    substeps: Vec<usize>,
    offsets: Vec<usize>,
}

impl TimeGrid {
    /// Explicit number of substeps for every interval.
    pub fn new(times: Vec<f64>, substeps: Vec<usize>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidParameter("no observation times".into()));
        }
        check_len(times.len(), substeps.len(), "substeps per interval")?;
        let mut prev = 0.0;
        for &t in &times {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "observation times must be positive and strictly increasing (got {t} after {prev})"
                )));
            }
            prev = t;
        }
        if substeps.contains(&0) {
            return Err(Error::InvalidParameter("zero substeps in an interval".into()));
        }
        let mut offsets = Vec::with_capacity(times.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &substeps {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self {
            times,
            substeps,
            offsets,
        })
    }

    /// Substep counts chosen so each interval's step is as close to `dt` as possible.
    pub fn with_step(times: Vec<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {dt}")));
        }
        let mut prev = 0.0;
        let substeps = times
            .iter()
            .map(|&t| {
                let s = ((t - prev) / dt).round().max(1.0) as usize;
                prev = t;
                s
            })
            .collect();
        Self::new(times, substeps)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn num_intervals(&self) -> usize {
        self.times.len()
    }

    pub fn start(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.times[k - 1]
        }
    }

    pub fn end(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn substeps(&self, k: usize) -> usize {
        self.substeps[k]
    }

    pub fn step(&self, k: usize) -> f64 {
        (self.end(k) - self.start(k)) / self.substeps[k] as f64
    }

    /// Time of node `j` (0..=substeps) in interval `k`.
    pub fn node_time(&self, k: usize, j: usize) -> f64 {
        if j == self.substeps[k] {
            self.end(k)
        } else {
            self.start(k) + j as f64 * self.step(k)
        }
    }

    /// Global index of the first step of interval `k`.
    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn total_steps(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Interval containing `t`, using the `(t_k, t_{k+1}]` convention with `0` in the first.
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0) || t > *self.times.last().unwrap() {
            return None;
        }
        Some(self.times.partition_point(|&s| s < t))
    }

    /// Times of all grid nodes, starting at `0`.
    pub fn all_node_times(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        for k in 0..self.num_intervals() {
            for j in 1..=self.substeps[k] {
                out.push(self.node_time(k, j));
            }
        }
        out
    }
}

/// One exponential-Euler step
/// `x' = e^{-a dt} x + phi(dt) (F + q G) + sqrt(v(dt)) z`.
pub fn exp_euler_step(
    dynamics: &LinearDynamics,
    state: &[f64],
    dt: f64,
    drift_value: &[f64],
    guide_value: Option<&[f64]>,
    noise: &[f64],
) -> Result<DVector<f64>> {
    let m = dynamics.dim();
    check_len(m, state.len(), "state")?;
    check_len(m, drift_value.len(), "drift value")?;
    check_len(m, noise.len(), "noise")?;
    if let Some(g) = guide_value {
        check_len(m, g.len(), "guide value")?;
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {dt}")));
    }
    let c = dynamics.step_coefficients(dt);
    let mut out = DVector::zeros(m);
    step_into(&c, state, drift_value, guide_value, noise, out.as_mut_slice());
    Ok(out)
}

#[inline]
fn step_into(
    c: &StepCoefficients,
    x: &[f64],
    f: &[f64],
    g: Option<&[f64]>,
    z: &[f64],
    out: &mut [f64],
) {
    match g {
        Some(g) => {
            for l in 0..x.len() {
                out[l] = c.decay[l] * x[l] + c.phi[l] * (f[l] + c.q[l] * g[l]) + c.noise_scale[l] * z[l];
            }
        }
        None => {
            for l in 0..x.len() {
                out[l] = c.decay[l] * x[l] + c.phi[l] * f[l] + c.noise_scale[l] * z[l];
            }
        }
    }
}

/// Scratch space reused across steps of a simulation.
#[derive(Debug, Clone)]
pub struct SimWorkspace {
    drift_ws: DriftWorkspace,
    x: Vec<f64>,
    next: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl SimWorkspace {
    pub fn new(m: usize) -> Self {
        Self {
            drift_ws: DriftWorkspace::new(m),
            x: vec![0.0; m],
            next: vec![0.0; m],
            f: vec![0.0; m],
            g: vec![0.0; m],
        }
    }
}

/// Simulator bound to a model and a time grid, with cached step coefficients.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    model: &'a Model,
    drift: &'a Drift,
    grid: &'a TimeGrid,
    coeffs: Vec<StepCoefficients>,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a Model, grid: &'a TimeGrid) -> Self {
        Self::with_drift(model, &model.drift, grid)
    }

    /// Uses `drift` in place of the model's own drift.
    pub fn with_drift(model: &'a Model, drift: &'a Drift, grid: &'a TimeGrid) -> Self {
        let coeffs = (0..grid.num_intervals())
            .map(|k| model.dynamics.step_coefficients(grid.step(k)))
            .collect();
        Self {
            model,
            drift,
            grid,
            coeffs,
        }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn time_grid(&self) -> &TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Number of noise values consumed by interval `k`.
    pub fn interval_noise_len(&self, k: usize) -> usize {
        self.grid.substeps(k) * self.dim()
    }

    /// Propagates `x_start` over interval `k`.
    ///
    /// Writes the end state into `x_end`, optionally every node state (rows
    /// `1..=substeps`) into `path`, and returns `log Psi` accumulated with
    /// the left-endpoint rule.
    pub fn simulate_interval(
        &self,
        k: usize,
        x_start: &[f64],
        noise: &[f64],
        guide: Option<&dyn Guide>,
        ws: &mut SimWorkspace,
        x_end: &mut [f64],
        mut path: Option<&mut [f64]>,
    ) -> f64 {
        let m = self.dim();
        let c = &self.coeffs[k];
        let n = self.grid.substeps(k);
        debug_assert_eq!(noise.len(), n * m);
        let brownian = guide.is_some_and(|g| g.brownian_auxiliary());
        let a = self.model.dynamics.decay_rates();
        ws.x.copy_from_slice(x_start);
        let mut log_psi = 0.0;
        for j in 0..n {
            let t = self.grid.node_time(k, j);
            self.drift.eval_modes(&ws.x, &mut ws.drift_ws, &mut ws.f);
            let z = &noise[j * m..(j + 1) * m];
            match guide {
                Some(gd) => {
                    gd.score_into(k, t, &ws.x, &mut ws.g);
                    let mut acc = 0.0;
                    if !self.drift.is_zero() || brownian {
                        for l in 0..m {
                            let mut fl = ws.f[l];
                            if brownian {
                                fl -= a[l] * ws.x[l];
                            }
                            acc += fl * ws.g[l];
                        }
                    }
                    log_psi += c.dt * acc;
                    step_into(c, &ws.x, &ws.f, Some(&ws.g), z, &mut ws.next);
                }
                None => step_into(c, &ws.x, &ws.f, None, z, &mut ws.next),
            }
            std::mem::swap(&mut ws.x, &mut ws.next);
            if let Some(p) = path.as_deref_mut() {
                p[j * m..(j + 1) * m].copy_from_slice(&ws.x);
            }
        }
        x_end.copy_from_slice(&ws.x);
        log_psi
    }

    /// Propagates over the whole time grid. `noise` holds `total_steps x M` normals.
    pub fn simulate_path(
        &self,
        x0: &[f64],
        noise: &[f64],
        guide: Option<&dyn Guide>,
    ) -> Result<SimulatedPath> {
        let m = self.dim();
        check_len(m, x0.len(), "initial state")?;
        check_len(self.grid.total_steps() * m, noise.len(), "noise record")?;
        let mut ws = SimWorkspace::new(m);
        let mut path = SimulatedPath::new(self.grid, m);
        path.states[..m].copy_from_slice(x0);
        let log_psi = self.simulate_path_into(x0, noise, guide, &mut ws, &mut path.states);
        path.log_psi = log_psi;
        Ok(path)
    }

    /// Unchecked full-path simulation into a flat `(total_steps + 1) x M` buffer.
    pub(crate) fn simulate_path_into(
        &self,
        x0: &[f64],
        noise: &[f64],
        guide: Option<&dyn Guide>,
        ws: &mut SimWorkspace,
        states: &mut [f64],
    ) -> f64 {
        let m = self.dim();
        states[..m].copy_from_slice(x0);
        let mut log_psi = 0.0;
        let mut end = vec![0.0; m];
        for k in 0..self.grid.num_intervals() {
            let o = self.grid.offset(k);
            let n = self.grid.substeps(k);
            let (head, tail) = states.split_at_mut((o + 1) * m);
            let start = &head[o * m..];
            log_psi += self.simulate_interval(
                k,
                start,
                &noise[o * m..(o + n) * m],
                guide,
                ws,
                &mut end,
                Some(&mut tail[..n * m]),
            );
        }
        log_psi
    }
}

/// States at every node of a time grid plus the accumulated `log Psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    m: usize,
    offsets: Vec<usize>,
    /// Row-major `(total_steps + 1) x M`.
    pub states: Vec<f64>,
    pub log_psi: f64,
}

impl SimulatedPath {
    pub fn new(grid: &TimeGrid, m: usize) -> Self {
        let offsets = (0..=grid.num_intervals()).map(|k| grid.offset(k)).collect();
        Self {
            m,
            offsets,
            states: vec![0.0; (grid.total_steps() + 1) * m],
            log_psi: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn num_nodes(&self) -> usize {
        self.states.len() / self.m
    }

    pub fn node(&self, index: usize) -> &[f64] {
        &self.states[index * self.m..(index + 1) * self.m]
    }

    /// State at observation time `k` (zero-based).
    pub fn at_observation(&self, k: usize) -> &[f64] {
        self.node(self.offsets[k + 1])
    }

    pub fn initial(&self) -> &[f64] {
        self.node(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normals, stream};
    use approx::assert_relative_eq;

    fn ou_model(m: usize) -> Model {
        let q = DVector::from_fn(m, |i, _| 1.0 / (1.0 + i as f64));
        let dynamics = LinearDynamics::uniform_decay(1.0, q).unwrap();
        Model::new(dynamics, Drift::Zero)
    }

    #[test]
    fn time_grid_layout() {
        let g = TimeGrid::with_step(vec![1.0, 2.0, 2.5], 0.1).unwrap();
        assert_eq!(g.substeps(0), 10);
        assert_eq!(g.substeps(2), 5);
        assert_eq!(g.total_steps(), 25);
        assert_eq!(g.offset(2), 20);
        assert_eq!(g.node_time(1, 10), 2.0);
        assert_eq!(g.interval_of(0.0), Some(0));
        assert_eq!(g.interval_of(1.0), Some(0));
        assert_eq!(g.interval_of(1.05), Some(1));
        assert_eq!(g.interval_of(2.6), None);
        assert!(TimeGrid::new(vec![1.0, 1.0], vec![1, 1]).is_err());
        assert!(TimeGrid::new(vec![1.0], vec![0]).is_err());
        assert_eq!(g.all_node_times().len(), 26);
    }

    #[test]
    fn deterministic_step_decays() {
        let model = ou_model(4);
        let x = [1.0, -2.0, 0.5, 3.0];
        let zero = [0.0; 4];
        let out = exp_euler_step(&model.dynamics, &x, 0.02, &zero, None, &zero).unwrap();
        for l in 0..4 {
            assert_relative_eq!(out[l], 0.980_198_673_306_755_3 * x[l], epsilon = 1e-15);
        }
        let out = exp_euler_step(&model.dynamics, &x, 1e-12, &zero, Some(&zero), &zero).unwrap();
        for l in 0..4 {
            assert!((out[l] - x[l]).abs() < 1e-10);
        }
        assert!(exp_euler_step(&model.dynamics, &x, 0.0, &zero, None, &zero).is_err());
        assert!(exp_euler_step(&model.dynamics, &x[..3], 0.1, &zero, None, &zero).is_err());
    }

    #[test]
    fn ou_step_moments() {
        let model = ou_model(4);
        let dt = 0.3;
        let v = model.dynamics.ou_step_variance(dt).unwrap();
        let mut rng = stream(11, &[1]);
        let n = 100_000;
        let zero = [0.0; 4];
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..n {
            let z = standard_normals(&mut rng, 4);
            let out = exp_euler_step(&model.dynamics, &zero, dt, &zero, None, &z).unwrap();
            for l in 0..4 {
                sum[l] += out[l];
                sq[l] += out[l] * out[l];
            }
        }
        for l in 0..4 {
            let var = sq[l] / n as f64;
            // standard error of a sample variance of a Gaussian
            let se = v[l] * (2.0 / n as f64).sqrt();
            assert!((var - v[l]).abs() < 3.0 * se, "mode {l}: {var} vs {}", v[l]);
            assert!((sum[l] / n as f64).abs() < 4.0 * (v[l] / n as f64).sqrt());
        }
    }

    struct ConstGuide(Vec<f64>);

    impl Guide for ConstGuide {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn num_intervals(&self) -> usize {
            1
        }
        fn interval_bounds(&self, _k: usize) -> (f64, f64) {
            (0.0, 1.0)
        }
        fn score_into(&self, _k: usize, _t: f64, _x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&self.0);
        }
        fn log_g(&self, _k: usize, _t: f64, _x: &[f64]) -> f64 {
            0.0
        }
    }

    #[test]
    fn log_psi_single_step() {
        let base = ou_model(2);
        let fvals = vec![0.7, -0.2];
        let fc = fvals.clone();
        let model = base.with_drift(Drift::custom(move |_x, out| out.copy_from_slice(&fc)));
        let grid = TimeGrid::new(vec![0.25], vec![1]).unwrap();
        let sim = Simulator::new(&model, &grid);
        let guide = ConstGuide(vec![2.0, 3.0]);
        let path = sim.simulate_path(&[0.1, 0.2], &[0.0, 0.0], Some(&guide)).unwrap();
        assert_relative_eq!(path.log_psi, 0.25 * (0.7 * 2.0 - 0.2 * 3.0), epsilon = 1e-15);
        let plain = sim.simulate_path(&[0.1, 0.2], &[0.0, 0.0], None).unwrap();
        assert_eq!(plain.log_psi, 0.0);
        let zero_drift = Simulator::new(&base, &grid);
        let p = zero_drift.simulate_path(&[0.1, 0.2], &[0.3, 0.1], Some(&guide)).unwrap();
        assert_eq!(p.log_psi, 0.0);
    }

    #[test]
    fn zero_drift_path_marginals() {
        let model = ou_model(3);
        let grid = TimeGrid::new(vec![0.5, 1.0], vec![5, 5]).unwrap();
        let sim = Simulator::new(&model, &grid);
        let x0 = [1.0, -1.0, 2.0];
        let n = 100_000;
        let var = model.dynamics.ou_step_variance(1.0).unwrap();
        let mut rng = stream(5, &[2]);
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let mut ws = SimWorkspace::new(3);
        let mut states = vec![0.0; 11 * 3];
        for _ in 0..n {
            let z = standard_normals(&mut rng, 30);
            sim.simulate_path_into(&x0, &z, None, &mut ws, &mut states);
            for l in 0..3 {
                let v = states[30 + l];
                sum[l] += v;
                sq[l] += v * v;
            }
        }
        for l in 0..3 {
            let mean = sum[l] / n as f64;
            let expect = (-1.0f64).exp() * x0[l];
            assert!((mean - expect).abs() < 4.0 * (var[l] / n as f64).sqrt());
            let v = sq[l] / n as f64 - mean * mean;
            assert!((v - var[l]).abs() < 4.0 * var[l] * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn noise_perturbation_is_causal() {
        let spec = crate::model::AmariModelSpec::reference(16, crate::amari::AmariParams::travelling_waves());
        let model = spec.build().unwrap();
        let grid = TimeGrid::new(vec![0.2, 0.4], vec![5, 5]).unwrap();
        let sim = Simulator::new(&model, &grid);
        let mut rng = stream(1, &[]);
        let z = standard_normals(&mut rng, 10 * 16);
        let a = sim.simulate_path(&[0.0; 16], &z, None).unwrap();
        let mut z2 = z.clone();
        z2[6 * 16 + 3] += 1.0;
        let b = sim.simulate_path(&[0.0; 16], &z2, None).unwrap();
        for node in 0..=6 {
            assert_eq!(a.node(node), b.node(node));
        }
        assert_ne!(a.node(7), b.node(7));
        let again = sim.simulate_path(&[0.0; 16], &z, None).unwrap();
        assert_eq!(a, again);
    }
}
