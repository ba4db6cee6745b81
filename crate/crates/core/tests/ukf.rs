mod common;

use common::{kalman_filter, linear_setup, point_mass};
use guided_spde::amari::{AmariParams, Drift};
use guided_spde::dataset::{generate_dataset, GenerateConfig, Problem};
use guided_spde::ukf::{run_ukf, run_ukf_states, ukf_predict, UkfParams, UkfState};
use nalgebra::{DMatrix, DVector};

#[test]
fn linear_ukf_equals_kalman() {
    let times: Vec<f64> = (1..=10).map(|i| 0.3 * i as f64).collect();
    for common_decay in [true, false] {
        let s = linear_setup(8, times.clone(), 0.05, common_decay, 4);
        let p = &s.problem;
        let x0 = [0.3; 8];
        let (kf, ll) = kalman_filter(&s.a, &s.q, p.scheme.operator(), p.scheme.sigma(), p.grid.times(), &p.y, point_mass(&x0));
        let run = run_ukf_states(p, &x0, UkfParams::default(), None).unwrap();
        for (u, k) in run.states.iter().zip(&kf) {
            assert!((&u.mean - &k.mean).amax() < 1e-8);
            assert!((&u.covariance - &k.cov).amax() < 1e-8);
            assert_eq!(u.covariance, u.covariance.transpose());
        }
        assert!((run.result.log_evidence - ll).abs() < 1e-6);
    }
}

#[test]
fn zero_drift_mean_decays() {
    let dynamics = guided_spde::spectral::LinearDynamics::uniform_decay(0.7, DVector::from_element(3, 0.2)).unwrap();
    let s = UkfState::new(DVector::from_vec(vec![1.0, -1.0, 2.0]), DMatrix::identity(3, 3) * 0.1, UkfParams::default()).unwrap();
    let p = ukf_predict(&s, &dynamics, &Drift::Zero, 0.01, 50).unwrap();
    let e = (-0.7f64 * 0.5).exp();
    assert!((p.mean[2] - 2.0 * e).abs() < 1e-8);
}

#[test]
fn amari_run_produces_finite_output() {
    let mut cfg = GenerateConfig::reference(32, 0.1, AmariParams::travelling_waves(), 3);
    cfg.times = vec![1.0, 2.0, 3.0];
    let g = generate_dataset(&cfg).unwrap();
    let problem = Problem::from_dataset(&g.dataset, None).unwrap();
    let truth: Vec<DVector<f64>> = (0..3).map(|k| DVector::from_column_slice(g.path.at_observation(k))).collect();
    let res = run_ukf(&problem, &vec![0.0; 32], UkfParams::default(), Some(&truth)).unwrap();
    assert_eq!(res.flavor, "ukf");
    assert!(res.means.iter().flatten().all(|v| v.is_finite()));
    assert_eq!(res.relative_errors.unwrap().len(), 3);
}
