mod common;

use common::{kalman_filter, linear_setup, point_mass};
use guided_spde::filter::{run_filter, FilterConfig, Flavor, ParticleCloud, ParticleFilter};
use guided_spde::guiding::build_onestep_guide;

#[test]
fn linear_guided_weights_are_constant_from_common_start() {
    let s = linear_setup(8, vec![0.5, 1.0, 1.5], 0.01, true, 1);
    let p = &s.problem;
    let guide = build_onestep_guide(&p.scheme, &p.model.dynamics, p.grid.times(), &p.y).unwrap();
    let pf = ParticleFilter::new(p, FilterConfig::reference(Flavor::Gpf1, 4), Some(&guide)).unwrap();
    for k in 0..3 {
        let mut cloud = ParticleCloud::from_state(&[0.3; 8], 200);
        pf.propagate(&mut cloud, k);
        let mean = cloud.log_lambda.iter().sum::<f64>() / 200.0;
        let var = cloud.log_lambda.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
        assert!(var <= 1e-20, "interval {k}: variance {var}");
    }
}

#[test]
fn guided_filter_tracks_kalman_mean() {
    let s = linear_setup(8, vec![0.5, 1.0, 1.5], 2e-3, true, 1);
    let p = &s.problem;
    let x0 = [0.3; 8];
    let (kf, _) = kalman_filter(&s.a, &s.q, p.scheme.operator(), p.scheme.sigma(), p.grid.times(), &p.y, point_mass(&x0));
    let mut cfg = FilterConfig::reference(Flavor::Gpf1, 21);
    cfg.particles = 1000;
    cfg.n_move = 5;
    let res = run_filter(p, &cfg, &x0, None).unwrap();
    for (k, g) in kf.iter().enumerate() {
        for i in 0..8 {
            let sd = g.cov[(i, i)].sqrt();
            let err = (res.means[k][i] - g.mean[i]).abs();
            assert!(err < 5.0 * sd / (cfg.particles as f64).sqrt() + 1e-3, "k={k} i={i}: {err} vs sd {sd}");
        }
    }
}

#[test]
fn tempering_schedule_invariants() {
    let s = linear_setup(8, vec![0.5, 1.0], 0.05, false, 3);
    let p = &s.problem;
    for flavor in [Flavor::Gpf1, Flavor::Gpf2, Flavor::Bootstrap] {
        let mut cfg = FilterConfig::reference(flavor, 2);
        cfg.particles = 50;
        cfg.n_move = 3;
        let res = run_filter(p, &cfg, &[0.0; 8], Some(&s.truth)).unwrap();
        assert_eq!(res.flavor, flavor.name());
        for sched in &res.schedules {
            assert_eq!(sched.psi[0], 0.0);
            assert_eq!(*sched.psi.last().unwrap(), 1.0);
            assert!(sched.psi.windows(2).all(|w| w[1] > w[0]));
            assert!(sched.post_resample_ess.iter().all(|&e| (e - 50.0).abs() < 1e-9));
        }
        assert_eq!(res.relative_errors.as_ref().unwrap().len(), 2);
        assert!(res.log_evidence.is_finite());
    }
}

#[test]
fn runs_are_reproducible() {
    let s = linear_setup(8, vec![0.5, 1.0], 0.05, true, 3);
    let mut cfg = FilterConfig::reference(Flavor::Gpf2, 9);
    cfg.particles = 40;
    cfg.n_move = 2;
    let a = run_filter(&s.problem, &cfg, &[0.0; 8], None).unwrap();
    let b = run_filter(&s.problem, &cfg, &[0.0; 8], None).unwrap();
    assert_eq!(a, b);
    cfg.seed = 10;
    let c = run_filter(&s.problem, &cfg, &[0.0; 8], None).unwrap();
    assert_ne!(a.means, c.means);
}

#[test]
fn evidence_matches_kalman_without_tempering() {
    let s = linear_setup(8, vec![0.5, 1.0, 1.5], 2e-3, true, 6);
    let p = &s.problem;
    let x0 = [0.3; 8];
    let (_, ll) = kalman_filter(&s.a, &s.q, p.scheme.operator(), p.scheme.sigma(), p.grid.times(), &p.y, point_mass(&x0));
    let mut cfg = FilterConfig::reference(Flavor::Bootstrap, 5);
    cfg.particles = 4000;
    cfg.tempering = false;
    let res = run_filter(p, &cfg, &x0, None).unwrap();
    assert!((res.log_evidence - ll).abs() < 0.15, "{} vs {ll}", res.log_evidence);
    assert!(res.schedules.is_empty());
}

#[test]
fn config_errors_surface() {
    let s = linear_setup(8, vec![0.5], 0.05, true, 3);
    let mut cfg = FilterConfig::reference(Flavor::Gpf1, 1);
    cfg.alpha = 0.0;
    assert!(run_filter(&s.problem, &cfg, &[0.0; 8], None).is_err());
    cfg.alpha = 0.5;
    assert!(run_filter(&s.problem, &cfg, &[0.0; 7], None).is_err());
}
