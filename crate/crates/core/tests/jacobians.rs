//! Analytic observation Jacobians against central finite differences.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use smcmc::manifold::{ObservationMap, Pullback};
use smcmc::models::{FhnModel, FhnParams, KsConfig, KsModel, LinearGaussianModel, MaternConfig, StateSpaceModel};
use smcmc::rng::stream;
use smcmc::{Matrix, Vector};

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-6;

fn finite_difference(h: &dyn ObservationMap, x: &Vector) -> Matrix {
    let mut jac = Matrix::zeros(h.dim_y(), h.dim_x());
    for j in 0..h.dim_x() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += STEP;
        minus[j] -= STEP;
        jac.set_column(j, &((h.eval(&plus) - h.eval(&minus)) / (2.0 * STEP)));
    }
    jac
}

fn check(h: &dyn ObservationMap, label: &str, points: usize, seed: u64) {
    let mut rng = stream(seed, 0, 0);
    for _ in 0..points {
        let x = Vector::from_fn(h.dim_x(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let analytic = h.jacobian(&x);
        let numeric = finite_difference(h, &x);
        let err = (&analytic - &numeric).amax() / analytic.amax().max(1.0);
        assert!(err < TOL, "{label}: relative Jacobian error {err:e}");
    }
}

#[test]
fn lgm_observation() {
    let m = LinearGaussianModel::lgm_spec(20, 0.1).unwrap();
    check(m.observation_map(1).as_ref(), "lgm", 10, 1);
}

#[test]
fn sphere_observation() {
    let m = LinearGaussianModel::sphere_spec(30, 0.5).unwrap();
    check(m.observation_map(1).as_ref(), "sphere", 10, 2);
}

#[test]
fn fhn_observation() {
    let m = FhnModel::new(FhnParams::default()).unwrap();
    check(m.observation_map(1).as_ref(), "fhn", 10, 3);
}

#[test]
fn ks_observation_and_its_pullback() {
    let m = KsModel::new(KsConfig {
        dim_x: 16,
        obs_stride: 4,
        domain: 16.0 * std::f64::consts::PI / 10.0,
        matern: MaternConfig::default(),
        ..KsConfig::default()
    })
    .unwrap();
    let h = m.observation_map(1);
    check(h.as_ref(), "ks", 5, 4);
    let p = m.preconditioner().expect("KS is preconditioned").clone();
    let pulled = Pullback::new(Arc::clone(&h), p).unwrap();
    check(&pulled, "ks pullback", 5, 5);
}
