//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use guided_spde::amari::Drift;
use guided_spde::dataset::Problem;
use guided_spde::integrator::{Simulator, TimeGrid};
use guided_spde::model::Model;
use guided_spde::observation::ObservationScheme;
use guided_spde::rng::{standard_normals, stream};
use guided_spde::spectral::{LinearDynamics, SpectralGrid};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Gauss {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Exact OU transition over `dt` for diagonal decay `a` and noise `q`.
pub fn kalman_predict(g: &Gauss, a: &[f64], q: &[f64], dt: f64) -> Gauss {
    let m = a.len();
    let e = DVector::from_fn(m, |i, _| (-a[i] * dt).exp());
    let mean = g.mean.component_mul(&e);
    let mut cov = DMatrix::from_fn(m, m, |i, j| e[i] * g.cov[(i, j)] * e[j]);
    for i in 0..m {
        cov[(i, i)] += q[i] * (1.0 - (-2.0 * a[i] * dt).exp()) / (2.0 * a[i]);
    }
    Gauss { mean, cov }
}

/// Standard-form Kalman update; returns the posterior and `log p(y | past)`.
pub fn kalman_update(g: &Gauss, l: &DMatrix<f64>, sigma: &DMatrix<f64>, y: &DVector<f64>) -> (Gauss, f64) {
    let s = l * &g.cov * l.transpose() + sigma;
    let s_inv = s.clone().try_inverse().expect("innovation covariance");
    let k = &g.cov * l.transpose() * &s_inv;
    let r = y - l * &g.mean;
    let mean = &g.mean + &k * &r;
    let cov = &g.cov - &k * l * &g.cov;
    let cov = (&cov + cov.transpose()) * 0.5;
    let n = y.len() as f64;
    let ll = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + s.determinant().ln() + r.dot(&(&s_inv * &r)));
    (Gauss { mean, cov }, ll)
}

/// Filtering distributions at each observation time and the total log-likelihood.
pub fn kalman_filter(
    a: &[f64],
    q: &[f64],
    l: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    times: &[f64],
    y: &[DVector<f64>],
    prior: Gauss,
) -> (Vec<Gauss>, f64) {
    let mut g = prior;
    let mut t = 0.0;
    let mut total = 0.0;
    let mut out = Vec::new();
    for (tk, yk) in times.iter().zip(y) {
        g = kalman_predict(&g, a, q, tk - t);
        let (post, ll) = kalman_update(&g, l, sigma, yk);
        total += ll;
        g = post;
        out.push(g.clone());
        t = *tk;
    }
    (out, total)
}

pub fn point_mass(x: &[f64]) -> Gauss {
    Gauss {
        mean: DVector::from_column_slice(x),
        cov: DMatrix::zeros(x.len(), x.len()),
    }
}

/// Linear model on an 8-mode grid, two observation cells, distinct decay rates.
pub struct LinearSetup {
    pub problem: Problem,
    pub truth: Vec<DVector<f64>>,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn linear_setup(m: usize, times: Vec<f64>, dt: f64, common_decay: bool, seed: u64) -> LinearSetup {
    let grid = SpectralGrid::new(8.0, m).unwrap();
    let a: Vec<f64> = (0..m)
        .map(|i| if common_decay { 1.0 } else { 0.5 + 0.25 * i as f64 })
        .collect();
    let q: Vec<f64> = (0..m).map(|i| 0.6 / (1.0 + i as f64)).collect();
    let dynamics = LinearDynamics::new(DVector::from_column_slice(&a), DVector::from_column_slice(&q)).unwrap();
    let scheme = ObservationScheme::local_average(&grid, &[-2.0, 1.5], 1.0, 0.1).unwrap();
    let model = Model::on_grid(grid, dynamics, Drift::Zero).unwrap();
    let tg = TimeGrid::with_step(times, dt).unwrap();
    let sim = Simulator::new(&model, &tg);
    let noise = standard_normals(&mut stream(seed, &[11]), tg.total_steps() * m);
    let path = sim.simulate_path(&vec![0.3; m], &noise, None).unwrap();
    let mut rng = stream(seed, &[12]);
    let mut y = Vec::new();
    let mut truth = Vec::new();
    for k in 0..tg.num_intervals() {
        let x = path.at_observation(k);
        truth.push(DVector::from_column_slice(x));
        y.push(scheme.observe(x, &mut rng).unwrap());
    }
    let problem = Problem::new(model, scheme, tg, y).unwrap();
    LinearSetup { problem, truth, a, q }
}

/// Dense grid filter for a scalar SDE `dX = b(X) dt + s dW` discretised with
/// the exponential-Euler transition `x' = e x + phi f(x) + s_dt Z`, with one
/// Gaussian observation `y ~ N(X_T, sigma2)`. Returns `E[X_{t_mid} | y]`
/// where `t_mid` is after `mid_steps` steps out of `steps`.
pub struct ScalarGridFilter {
    pub xs: Vec<f64>,
    pub h: f64,
}

impl ScalarGridFilter {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        Self {
            xs: (0..n).map(|i| lo + i as f64 * h).collect(),
            h,
        }
    }

    /// Transition matrix rows are banded Gaussians.
    fn step(&self, mean: &[f64], sd: f64, p: &[f64], forward: bool) -> Vec<f64> {
        let n = self.xs.len();
        let mut out = vec![0.0; n];
        let width = (8.0 * sd / self.h).ceil() as isize;
        let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        for i in 0..n {
            let c = ((mean[i] - self.xs[0]) / self.h).round() as isize;
            for jj in (c - width).max(0)..=(c + width).min(n as isize - 1) {
                let j = jj as usize;
                let z = (self.xs[j] - mean[i]) / sd;
                let k = norm * (-0.5 * z * z).exp() * self.h;
                if forward {
                    out[j] += p[i] * k;
                } else {
                    out[i] += k * p[j];
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn smoothed_mean(
        &self,
        x0: f64,
        decay: f64,
        phi: f64,
        sd: f64,
        f: impl Fn(f64) -> f64,
        steps: usize,
        mid_steps: usize,
        y: f64,
        sigma2: f64,
    ) -> f64 {
        let mean: Vec<f64> = self.xs.iter().map(|&x| decay * x + phi * f(x)).collect();
        // first step from the point mass
        let m0 = decay * x0 + phi * f(x0);
        let mut p: Vec<f64> = self
            .xs
            .iter()
            .map(|&x| (-0.5 * ((x - m0) / sd).powi(2)).exp())
            .collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        for _ in 1..mid_steps {
            p = self.step(&mean, sd, &p, true);
        }
        let mut hfun: Vec<f64> = self
            .xs
            .iter()
            .map(|&x| (-0.5 * (y - x) * (y - x) / sigma2).exp())
            .collect();
        for _ in mid_steps..steps {
            hfun = self.step(&mean, sd, &hfun, false);
        }
        let num: f64 = self.xs.iter().zip(&p).zip(&hfun).map(|((x, a), b)| x * a * b).sum();
        let den: f64 = p.iter().zip(&hfun).map(|(a, b)| a * b).sum();
        num / den
    }
}
