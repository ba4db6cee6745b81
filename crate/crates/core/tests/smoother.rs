mod common;

use common::linear_setup;
use guided_spde::amari::{AmariFamily, AmariParams, Drift, DriftFamily};
use guided_spde::dataset::{generate_dataset, GenerateConfig, Problem};
use guided_spde::guiding::build_direct_guide;
use guided_spde::smoother::{InitialMode, Smoother, SmootherConfig, ThetaMode, AMARI_PRIOR};
use guided_spde::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[test]
fn initial_state_marginal_matches_conjugate_posterior() {
    let s = linear_setup(4, vec![0.3, 0.6], 0.01, true, 8);
    let p = &s.problem;
    let guide = build_direct_guide(&p.scheme, &p.model.dynamics, p.grid.times(), &p.y).unwrap();
    let mut cfg = SmootherConfig::new(6000, 1000, 3);
    cfg.initial = InitialMode::Unknown { variances: None };
    cfg.beta0 = 0.5;
    cfg.beta = 0.5;
    let sm = Smoother::new(p, &guide, None, cfg).unwrap();
    let out = sm.run(&[0.0; 4]).unwrap();
    // prior N(0, q/2a); y stacked = H x0 + noise with exact OU transitions
    let m = 4;
    let prior = DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| s.q[i] / (2.0 * s.a[i])));
    let times = p.grid.times();
    let l = p.scheme.operator();
    let mm = l.nrows();
    let mut h = DMatrix::zeros(2 * mm, m);
    let mut r = DMatrix::zeros(2 * mm, 2 * mm);
    let cov_x = |ti: f64, tj: f64| {
        DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| {
            let a = s.a[i];
            s.q[i] / (2.0 * a) * ((-a * (tj - ti).abs()).exp() - (-a * (ti + tj)).exp())
        }))
    };
    for (bi, ti) in times.iter().enumerate() {
        let e = DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| (-s.a[i] * ti).exp()));
        h.view_mut((bi * mm, 0), (mm, m)).copy_from(&(l * e));
        for (bj, tj) in times.iter().enumerate() {
            let mut blk = l * cov_x(*ti, *tj) * l.transpose();
            if bi == bj {
                blk += p.scheme.sigma();
            }
            r.view_mut((bi * mm, bj * mm), (mm, mm)).copy_from(&blk);
        }
    }
    let y = DVector::from_iterator(2 * mm, p.y.iter().flat_map(|v| v.iter().copied()));
    let r_inv = r.try_inverse().unwrap();
    let post_cov = (prior.clone().try_inverse().unwrap() + h.transpose() * &r_inv * &h).try_inverse().unwrap();
    let post_mean = &post_cov * h.transpose() * &r_inv * y;
    let kept = &out.x0_trace[1000..];
    let n = kept.len() as f64;
    for i in 0..m {
        let mean = kept.iter().map(|x| x[i]).sum::<f64>() / n;
        let sd = post_cov[(i, i)].sqrt();
        // batch means standard error
        let batches: Vec<f64> = kept.chunks(250).map(|c| c.iter().map(|x| x[i]).sum::<f64>() / c.len() as f64).collect();
        let bm = batches.iter().sum::<f64>() / batches.len() as f64;
        let bvar = batches.iter().map(|b| (b - bm).powi(2)).sum::<f64>() / (batches.len() - 1) as f64;
        let se = (bvar / batches.len() as f64).sqrt().max(0.02 * sd);
        assert!((mean - post_mean[i]).abs() < 4.0 * se + 0.02 * sd, "mode {i}: {mean} vs {} (se {se})", post_mean[i]);
    }
    assert!(out.summary.x0_acceptance.unwrap() > 0.05);
}

#[test]
fn pcn_chain_preserves_standard_normal() {
    let s = linear_setup(4, vec![0.1], 0.02, true, 1);
    let p = s.problem.with_model(s.problem.model.with_drift(Drift::Zero)).unwrap();
    let guide = build_direct_guide(&p.scheme, &p.model.dynamics, p.grid.times(), &p.y).unwrap();
    let mut cfg = SmootherConfig::new(20000, 0, 5);
    cfg.beta = 0.3;
    cfg.thinning = 200;
    let sm = Smoother::new(&p, &guide, None, cfg).unwrap();
    let mut state = sm.initial_state(&[0.0; 4]).unwrap();
    let out = sm.run_from(&mut state).unwrap();
    assert_eq!(out.summary.path_acceptance, 1.0);
    let w = &out.final_state.w;
    assert_eq!(w.len(), 20);
    assert!(sm.caches_consistent(&out.final_state));
}

#[test]
fn point_mass_prior_never_moves() {
    let mut gc = GenerateConfig::reference(16, 0.1, AmariParams::travelling_waves(), 4);
    gc.times = vec![0.5, 1.0];
    let g = generate_dataset(&gc).unwrap();
    let p = Problem::from_dataset(&g.dataset, None).unwrap();
    let guide = build_direct_guide(&p.scheme, &p.model.dynamics, p.grid.times(), &p.y).unwrap();
    let family = AmariFamily {
        b: 1.5,
        grid: p.model.spatial_grid().unwrap().clone(),
    };
    let truth = AmariFamily::theta_of(&AmariParams::travelling_waves());
    let mut cfg = SmootherConfig::new(30, 5, 2);
    cfg.theta = ThetaMode::Sample {
        init: truth.clone(),
        prior: truth.iter().map(|&v| [v, v]).collect(),
    };
    let sm = Smoother::new(&p, &guide, Some(&family), cfg).unwrap();
    let out = sm.run(&[0.0; 16]).unwrap();
    assert!(out.theta_trace.iter().all(|t| *t == truth));
    assert!(out.summary.parameters.iter().all(|s| s.acceptance == 0.0 && s.std == 0.0));
    assert!(sm.caches_consistent(&out.final_state));
    let csv = out.trace_csv();
    assert!(csv.starts_with("iter,eta,zeta,amp,delta,log_psi,accept_path,accept_eta"));
    assert_eq!(csv.lines().count(), 31);
}

#[test]
fn parameter_chain_stays_in_prior_box() {
    let mut gc = GenerateConfig::reference(16, 0.1, AmariParams::travelling_waves(), 4);
    gc.times = vec![0.5, 1.0, 1.5];
    let g = generate_dataset(&gc).unwrap();
    let p = Problem::from_dataset(&g.dataset, None).unwrap();
    let guide = build_direct_guide(&p.scheme, &p.model.dynamics, p.grid.times(), &p.y).unwrap();
    let family = AmariFamily {
        b: 1.5,
        grid: p.model.spatial_grid().unwrap().clone(),
    };
    let mut cfg = SmootherConfig::new(200, 50, 7);
    cfg.theta = ThetaMode::Sample {
        init: vec![8.0, 1.0, 3.0, 0.3],
        prior: AMARI_PRIOR.to_vec(),
    };
    cfg.thinning = 50;
    cfg.mean_window = 100;
    let sm = Smoother::new(&p, &guide, Some(&family), cfg).unwrap();
    let out = sm.run(&[0.0; 16]).unwrap();
    for t in &out.theta_trace {
        for (v, [lo, hi]) in t.iter().zip(AMARI_PRIOR) {
            assert!(*v >= lo && *v <= hi);
        }
    }
    assert_eq!(out.thinned_paths.len(), 4);
    assert_eq!(out.mean_path.len(), (p.grid.total_steps() + 1) * 16);
    assert!(sm.caches_consistent(&out.final_state));
}

struct Failing;

impl DriftFamily for Failing {
    fn names(&self) -> Vec<String> {
        vec!["c".into()]
    }
    fn build(&self, _: &[f64]) -> Result<Drift> {
        Err(Error::InvalidParameter("no".into()))
    }
}

#[test]
fn sampling_requires_a_family() {
    let s = linear_setup(4, vec![0.5], 0.05, true, 1);
    let p = &s.problem;
    let guide = build_direct_guide(&p.scheme, &p.model.dynamics, p.grid.times(), &p.y).unwrap();
    let mut cfg = SmootherConfig::new(10, 1, 1);
    cfg.theta = ThetaMode::Sample {
        init: vec![0.5],
        prior: vec![[0.0, 1.0]],
    };
    assert!(Smoother::new(p, &guide, None, cfg.clone()).is_err());
    assert!(Smoother::new(p, &guide, Some(&Failing), cfg).unwrap().run(&[0.0; 4]).is_err());
}
