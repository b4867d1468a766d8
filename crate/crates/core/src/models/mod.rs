//! Reference state-space models.
//!
//! A model supplies the transition log-density `log f_k(x_{k-1}, x_k)`, a
//! simulator drawing from the same law, and the observation map `h_k` with
//! its analytic Jacobian. Densities are evaluated through a prepared
//! predecessor/successor pair so the engine can hoist per-particle work out
//! of its inner loop.

use std::sync::Arc;

use rand::Rng;

use crate::manifold::ObservationMap;
use crate::{Matrix, Result, Vector};

mod fhn;
mod ks;
mod linear_gaussian;

pub use fhn::{FhnModel, FhnParams};
pub use ks::{circulant, matern_covariance, KsConfig, KsModel, MaternConfig};
pub use linear_gaussian::LinearGaussianModel;

pub trait StateSpaceModel: Send + Sync {
    /// Per-particle data derived from `x_{k-1}`.
    type Predecessor: Send + Sync;
    /// Data derived from a candidate `x_k`.
    type Successor: Clone + Send + Sync;

    fn name(&self) -> &str;
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn initial_state(&self) -> Vector;
    fn observation_map(&self, time: usize) -> Arc<dyn ObservationMap>;

    fn prepare_predecessor(&self, time: usize, x_prev: &Vector) -> Result<Self::Predecessor>;
    fn prepare_successor(&self, time: usize, x: &Vector) -> Self::Successor;
    fn transition_log_density(&self, pred: &Self::Predecessor, succ: &Self::Successor) -> f64;

    /// `log f_k(x_prev, x)`.
    fn transition_logpdf(&self, time: usize, x_prev: &Vector, x: &Vector) -> Result<f64> {
        let pred = self.prepare_predecessor(time, x_prev)?;
        Ok(self.transition_log_density(&pred, &self.prepare_successor(time, x)))
    }

    fn simulate_step<R: Rng + ?Sized>(&self, time: usize, x_prev: &Vector, rng: &mut R) -> Result<Vector>;

    /// Lower-triangular `P` of a change of variables `x = P v` under which
    /// the sampler runs.
    fn preconditioner(&self) -> Option<&Matrix> {
        None
    }

    fn observe(&self, time: usize, x: &Vector) -> Vector {
        self.observation_map(time).eval(x)
    }
}

/// A simulated hidden path `x_0..x_n` with observations `y_1..y_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub observations: Vec<Vector>,
}

/// Simulate `n` transitions from the model's initial state.
pub fn simulate<M: StateSpaceModel>(model: &M, n: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = crate::rng::stream(seed, 0, crate::rng::SIMULATE_CHAIN);
    let mut states = vec![model.initial_state()];
    let mut observations = Vec::with_capacity(n);
    for k in 1..=n {
        let x = model.simulate_step(k, &states[k - 1], &mut rng)?;
        observations.push(model.observe(k, &x));
        states.push(x);
    }
    Ok(Trajectory { states, observations })
}

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
