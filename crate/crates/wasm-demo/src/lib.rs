//! Browser bindings: simulate and draw an Amari field, inspect the Matérn
//! noise spectrum, and compare the two guided filters on a small problem.

use guided_spde::amari::AmariParams;
use guided_spde::dataset::{generate_dataset, GenerateConfig, Problem};
use guided_spde::filter::{run_filter, FilterConfig, Flavor};
use guided_spde::heatmap::render_rgba;
use guided_spde::spectral::{matern_spectrum, MaternParams, SpectralGrid};
use nalgebra::DVector;
use wasm_bindgen::prelude::*;

fn js(e: guided_spde::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// RGBA image, one row per time node and one column per grid point.
#[wasm_bindgen]
pub struct Heatmap {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Heatmap {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

fn config(m: usize, t_end: u32, amp: f64, eta: f64, zeta: f64, delta: f64, seed: u64) -> GenerateConfig {
    let mut c = GenerateConfig::reference(m, 0.04, AmariParams::new(amp, 1.5, eta, zeta, delta), seed);
    c.times = (1..=t_end.max(1)).map(f64::from).collect();
    c
}

/// Simulates the Amari field on `[0, t_end]` and renders the path.
#[wasm_bindgen]
pub fn simulate_field(
    m: usize,
    t_end: u32,
    amp: f64,
    eta: f64,
    zeta: f64,
    delta: f64,
    seed: u64,
    upscale: usize,
) -> Result<Heatmap, JsError> {
    let cfg = config(m, t_end, amp, eta, zeta, delta, seed);
    let gen = generate_dataset(&cfg).map_err(js)?;
    let grid = SpectralGrid::new(cfg.model.domain_length, m).map_err(js)?;
    let mut values = Vec::with_capacity(gen.path.num_nodes() * m);
    for i in 0..gen.path.num_nodes() {
        values.extend(grid.to_field(gen.path.node(i)).map_err(js)?);
    }
    let (width, height, rgba) = render_rgba(&values, gen.path.num_nodes(), m, upscale.max(1));
    Ok(Heatmap { width, height, rgba })
}

/// Noise variances `q_l` of the Matérn operator, in mode order.
#[wasm_bindgen]
pub fn noise_spectrum(m: usize, domain_length: f64, sigma0: f64, rho0: f64, eta0: f64) -> Result<Vec<f64>, JsError> {
    let grid = SpectralGrid::new(domain_length, m).map_err(js)?;
    let q = matern_spectrum(&MaternParams::new(sigma0, rho0, eta0), &grid).map_err(js)?;
    Ok(q.as_slice().to_vec())
}

/// Relative L2 errors per observation time of GPF-I followed by those of GPF-II.
#[wasm_bindgen]
pub fn compare_filters(m: usize, t_end: u32, particles: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let p = AmariParams::travelling_waves();
    let cfg = config(m, t_end, p.amp, p.eta, p.zeta, p.delta, seed);
    let gen = generate_dataset(&cfg).map_err(js)?;
    let problem = Problem::from_dataset(&gen.dataset, None).map_err(js)?;
    let truth: Vec<DVector<f64>> = (0..cfg.times.len())
        .map(|k| DVector::from_column_slice(gen.path.at_observation(k)))
        .collect();
    let x0 = vec![0.0; m];
    let mut out = Vec::new();
    for flavor in [Flavor::Gpf1, Flavor::Gpf2] {
        let mut fc = FilterConfig::reference(flavor, seed + 1);
        fc.particles = particles;
        fc.n_move = 5;
        let res = run_filter(&problem, &fc, &x0, Some(&truth)).map_err(js)?;
        out.extend(res.relative_errors.unwrap_or_default());
    }
    Ok(out)
}
