//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use guided_spde::amari::AmariFamily;
use guided_spde::dataset::{generate_dataset, Dataset, GenerateConfig, Problem};
use guided_spde::dump::{read_dump, write_dump, DumpMeta};
use guided_spde::filter::{run_filter, FilterResult};
use guided_spde::guiding::build_direct_guide;
use guided_spde::smoother::{Smoother, SmootherOutput};
use guided_spde::spectral::SpectralGrid;
use guided_spde::ukf::run_ukf;
use guided_spde::{Error, Result};
use nalgebra::DVector;

use crate::config::{Method, RunConfig};
use crate::output::{csv, write_heatmap};

/// Arguments shared by every subcommand.
pub struct Context {
    pub config: RunConfig,
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dataset(&self) -> Result<Dataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("--data is required for this command".into()))?;
        let ds = Dataset::load(path)?;
        match self.config.method.downsample {
            Some(k) => ds.downsample(k),
            None => Ok(ds),
        }
    }

    fn problem(&self, ds: &Dataset) -> Result<Problem> {
        Problem::from_dataset(ds, self.config.method.dt)
    }

    /// True states at the dataset's observation times, if a truth dump is available.
    fn truth(&self, ds: &Dataset) -> Result<Option<Vec<DVector<f64>>>> {
        let path = match (&self.truth, &self.data) {
            (Some(p), _) => p.clone(),
            (None, Some(d)) => {
                let p = d.with_file_name("truth.bin");
                if !p.exists() {
                    return Ok(None);
                }
                p
            }
            (None, None) => return Ok(None),
        };
        let (data, meta) = read_dump(&path)?;
        let m = ds.m;
        if meta.shape.len() != 2 || meta.shape[1] != m || meta.row_times.len() != meta.shape[0] {
            return Err(Error::Format(format!("{} does not hold an M = {m} path", path.display())));
        }
        let mut out = Vec::with_capacity(ds.times.len());
        for &t in &ds.times {
            let row = meta
                .row_times
                .iter()
                .position(|&r| (r - t).abs() <= 1e-9 * t.abs().max(1.0))
                .ok_or_else(|| Error::Format(format!("truth dump has no row at t = {t}")))?;
            out.push(DVector::from_column_slice(&data[row * m..(row + 1) * m]));
        }
        Ok(Some(out))
    }

    fn heatmap(&self, name: &str, grid: &SpectralGrid, states: &[Vec<f64>]) -> Result<()> {
        if !self.config.output.heatmaps || states.is_empty() {
            return Ok(());
        }
        let mut values = Vec::with_capacity(states.len() * grid.len());
        for s in states {
            values.extend(grid.to_field(s)?);
        }
        write_heatmap(&self.out(name), &values, states.len(), grid.len(), self.config.output.upscale)
    }
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let c = &ctx.config;
    let gen = GenerateConfig {
        model: c.model.clone(),
        times: c.observation.times.clone(),
        dt: c.observation.dt,
        cells: c.observation.cells,
        cell_width: c.observation.cell_width,
        sigma_scale: c.observation.sigma_scale,
        seed: c.seed,
    };
    if !matches!(c.x0, guided_spde::model::InitialState::Zero) {
        return Err(Error::InvalidParameter("simulate starts from the zero field; set x0 to zero".into()));
    }
    let g = generate_dataset(&gen)?;
    g.dataset.save(ctx.out("dataset.json"))?;
    fs::write(ctx.out("observations.csv"), g.dataset.y_csv(true))?;
    let m = g.path.dim();
    let mut meta = DumpMeta::new(vec![g.path.num_nodes(), m], "one row per time node, mode coefficients");
    meta.row_times = g.grid.all_node_times();
    write_dump(ctx.out("truth.bin"), &g.path.states, &meta)?;
    let grid = c.model.build()?.spatial_grid()?.clone();
    let rows: Vec<Vec<f64>> = (0..g.path.num_nodes()).map(|i| g.path.node(i).to_vec()).collect();
    ctx.heatmap("truth.png", &grid, &rows)
}

fn run_method(ctx: &Context, problem: &Problem, method: Method, truth: Option<&[DVector<f64>]>) -> Result<FilterResult> {
    let x0 = ctx.config.x0.resolve(problem.dim())?;
    match method.particle_flavor() {
        Some(f) => run_filter(problem, &ctx.config.filter_config(f), x0.as_slice(), truth),
        None => run_ukf(problem, x0.as_slice(), ctx.config.method.ukf, truth),
    }
}

fn write_filter(ctx: &Context, problem: &Problem, res: &FilterResult) -> Result<()> {
    let name = &res.flavor;
    fs::write(ctx.out(&format!("filter_{name}.json")), res.to_json()?)?;
    fs::write(ctx.out(&format!("means_{name}.csv")), res.means_csv())?;
    if let Some(e) = res.errors_csv() {
        fs::write(ctx.out(&format!("errors_{name}.csv")), e)?;
    }
    ctx.heatmap(&format!("reconstruction_{name}.png"), problem.model.spatial_grid()?, &res.means)
}

pub fn filter(ctx: &Context, method: Method) -> Result<()> {
    let ds = ctx.dataset()?;
    let problem = ctx.problem(&ds)?;
    let truth = ctx.truth(&ds)?;
    let res = run_method(ctx, &problem, method, truth.as_deref())?;
    write_filter(ctx, &problem, &res)
}

pub fn compare(ctx: &Context) -> Result<()> {
    let ds = ctx.dataset()?;
    let problem = ctx.problem(&ds)?;
    let truth = ctx
        .truth(&ds)?
        .ok_or_else(|| Error::InvalidParameter("compare needs a truth dump (--truth or truth.bin next to the data)".into()))?;
    let mut header = vec!["t".to_string()];
    let mut columns = Vec::new();
    for &m in &ctx.config.method.compare {
        let res = run_method(ctx, &problem, m, Some(&truth))?;
        write_filter(ctx, &problem, &res)?;
        header.push(m.name().to_string());
        columns.push(res.relative_errors.unwrap_or_default());
    }
    let rows = ds.times.iter().enumerate().map(|(k, t)| {
        let mut r = vec![*t];
        r.extend(columns.iter().map(|c| c[k]));
        r
    });
    fs::write(ctx.out("compare.csv"), csv(&header, rows))?;
    Ok(())
}

pub fn smooth(ctx: &Context, sample_theta: bool) -> Result<()> {
    let ds = ctx.dataset()?;
    let problem = ctx.problem(&ds)?;
    let cfg = ctx.config.smoother_config(sample_theta)?;
    let guide = build_direct_guide(&problem.scheme, &problem.model.dynamics, problem.grid.times(), &problem.y)?;
    let family = AmariFamily {
        b: ds.theta_true.amari.b,
        grid: problem.model.spatial_grid()?.clone(),
    };
    let sm = Smoother::new(&problem, &guide, sample_theta.then_some(&family as _), cfg)?;
    let x0 = ctx.config.x0.resolve(problem.dim())?;
    let out = sm.run(x0.as_slice())?;
    let prefix = if sample_theta { "infer" } else { "smooth" };
    write_chain(ctx, &problem, &out, prefix)
}

fn write_chain(ctx: &Context, problem: &Problem, out: &SmootherOutput, prefix: &str) -> Result<()> {
    fs::write(ctx.out(&format!("{prefix}_trace.csv")), out.trace_csv())?;
    fs::write(
        ctx.out(&format!("{prefix}_summary.json")),
        serde_json::to_string_pretty(&out.summary)?,
    )?;
    let m = problem.dim();
    let l = problem.scheme.operator();
    let times = problem.grid.all_node_times();
    let mut header = vec!["iteration".to_string(), "t".to_string()];
    header.extend((1..=l.nrows()).map(|j| format!("cell{j}")));
    let mut rows = Vec::new();
    for (it, path) in &out.thinned_paths {
        for (i, t) in times.iter().enumerate() {
            let x = DVector::from_column_slice(&path[i * m..(i + 1) * m]);
            let mut r = vec![*it as f64, *t];
            r.extend((l * x).iter());
            rows.push(r);
        }
    }
    fs::write(ctx.out(&format!("{prefix}_localized_paths.csv")), csv(&header, rows))?;
    let mean_rows: Vec<Vec<f64>> = out.mean_path.chunks_exact(m).map(|c| c.to_vec()).collect();
    ctx.heatmap(&format!("{prefix}_mean_path.png"), problem.model.spatial_grid()?, &mean_rows)
}

pub fn ensure_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}
