use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{StateSpaceModel, LOG_2PI};
use crate::error::check_len;
use crate::manifold::{LinearMap, ObservationMap};
use crate::{Error, Matrix, Result, Vector};

/// FitzHugh–Nagumo parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FhnParams {
    /// Noise intensity on the recovery variable.
    pub sigma: f64,
    /// Time-scale separation.
    pub epsilon: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Step size δ.
    pub delta: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            epsilon: 0.2,
            gamma: 1.5,
            beta: 0.5,
            delta: 0.05,
        }
    }
}

const MAX_CONDITION: f64 = 1e14;

/// Hypoelliptic FitzHugh–Nagumo diffusion discretized by the strong order
/// 1.5 Taylor scheme, observing the membrane potential `x_1` exactly.
///
/// With scalar noise entering through `B = (0, σ)^T` the one-step law is
/// Gaussian with mean
/// `x + δa + ½δ²∂a·a + ¼δ⁴ (tr(∂²a_i B B^T))_i` and covariance `G G^T`,
/// `G = [δ^{1/2}B + ½δ^{3/2}∂a B,  ½δ^{3/2}∂a B/√3]`.
#[derive(Clone)]
pub struct FhnModel {
    params: FhnParams,
    observation: Arc<dyn ObservationMap>,
}

impl std::fmt::Debug for FhnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FhnModel").field("params", &self.params).finish()
    }
}

/// Prepared Gaussian transition from one predecessor.
#[derive(Debug, Clone)]
pub struct FhnTransition {
    mean: Vector2<f64>,
    /// Inverse of the lower Cholesky factor of `G G^T`.
    whiten: Matrix2<f64>,
    log_norm: f64,
}

impl FhnModel {
    pub fn new(params: FhnParams) -> Result<Self> {
        let p = params;
        if !(p.sigma > 0.0 && p.epsilon > 0.0 && p.delta > 0.0) {
            return Err(Error::InvalidConfig("fhn needs sigma, epsilon, delta > 0".into()));
        }
        if ![p.sigma, p.epsilon, p.gamma, p.beta, p.delta].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("fhn parameters must be finite".into()));
        }
        Ok(Self {
            params,
            observation: Arc::new(LinearMap::new(Matrix::from_row_slice(1, 2, &[1.0, 0.0]))),
        })
    }

    pub fn params(&self) -> &FhnParams {
        &self.params
    }

    pub fn drift(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let p = &self.params;
        Vector2::new((x[0] - x[0].powi(3) - x[1]) / p.epsilon, p.gamma * x[0] - x[1] + p.beta)
    }

    pub fn drift_jacobian(&self, x: &Vector2<f64>) -> Matrix2<f64> {
        let p = &self.params;
        Matrix2::new((1.0 - 3.0 * x[0] * x[0]) / p.epsilon, -1.0 / p.epsilon, p.gamma, -1.0)
    }

    /// Hessians of the two drift components.
    pub fn drift_hessians(&self, x: &Vector2<f64>) -> [Matrix2<f64>; 2] {
        [
            Matrix2::new(-6.0 * x[0] / self.params.epsilon, 0.0, 0.0, 0.0),
            Matrix2::zeros(),
        ]
    }

    fn diffusion(&self) -> Vector2<f64> {
        Vector2::new(0.0, self.params.sigma)
    }

    /// `(tr(∂²a_i B B^T))_i`; identically zero for this drift.
    pub fn hessian_trace_term(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let b = self.diffusion();
        let bbt = b * b.transpose();
        let [h1, h2] = self.drift_hessians(x);
        Vector2::new((h1 * bbt).trace(), (h2 * bbt).trace())
    }

    /// Noise-free part of the update.
    pub fn deterministic_step(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let d = self.params.delta;
        let a = self.drift(x);
        let ja = self.drift_jacobian(x);
        x + a * d + (ja * a) * (0.5 * d * d) + self.hessian_trace_term(x) * (0.25 * d.powi(4))
    }

    /// Columns of `G`, multiplying `W_1` and `W_2`.
    pub fn noise_columns(&self, x: &Vector2<f64>) -> (Vector2<f64>, Vector2<f64>) {
        let d = self.params.delta;
        let b = self.diffusion();
        let jb = self.drift_jacobian(x) * b;
        let g1 = b * d.sqrt() + jb * (0.5 * d.powf(1.5));
        let g2 = jb * (0.5 * d.powf(1.5) / 3f64.sqrt());
        (g1, g2)
    }

    pub fn transition_covariance(&self, x: &Vector2<f64>) -> Matrix2<f64> {
        let (g1, g2) = self.noise_columns(x);
        g1 * g1.transpose() + g2 * g2.transpose()
    }

    fn transition(&self, x: &Vector2<f64>) -> Result<FhnTransition> {
        let cov = self.transition_covariance(x);
        let eig = cov.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        let degenerate = || Error::DegenerateTransition {
            state: vec![x[0], x[1]],
            condition,
        };
        if !(condition <= MAX_CONDITION) {
            return Err(degenerate());
        }
        let chol = cov.cholesky().ok_or_else(degenerate)?;
        let l = chol.l();
        let whiten = l.try_inverse().ok_or_else(degenerate)?;
        let log_norm = -LOG_2PI - (l[(0, 0)].ln() + l[(1, 1)].ln());
        Ok(FhnTransition {
            mean: self.deterministic_step(x),
            whiten,
            log_norm,
        })
    }
}

fn as_v2(x: &Vector) -> Vector2<f64> {
    Vector2::new(x[0], x[1])
}

impl StateSpaceModel for FhnModel {
    type Predecessor = FhnTransition;
    type Successor = Vector;

    fn name(&self) -> &str {
        "fhn"
    }
    fn dim_x(&self) -> usize {
        2
    }
    fn dim_y(&self) -> usize {
        1
    }
    fn initial_state(&self) -> Vector {
        Vector::zeros(2)
    }
    fn observation_map(&self, _time: usize) -> Arc<dyn ObservationMap> {
        self.observation.clone()
    }

    fn prepare_predecessor(&self, _time: usize, x_prev: &Vector) -> Result<FhnTransition> {
        check_len("state", 2, x_prev.len())?;
        self.transition(&as_v2(x_prev))
    }

    fn prepare_successor(&self, _time: usize, x: &Vector) -> Vector {
        x.clone()
    }

    fn transition_log_density(&self, pred: &FhnTransition, succ: &Vector) -> f64 {
        let r = pred.whiten * (as_v2(succ) - pred.mean);
        pred.log_norm - 0.5 * r.norm_squared()
    }

    fn simulate_step<R: Rng + ?Sized>(&self, _time: usize, x_prev: &Vector, rng: &mut R) -> Result<Vector> {
        check_len("state", 2, x_prev.len())?;
        let x = as_v2(x_prev);
        let (g1, g2) = self.noise_columns(&x);
        let w1: f64 = rng.sample(StandardNormal);
        let w2: f64 = rng.sample(StandardNormal);
        let next = self.deterministic_step(&x) + g1 * w1 + g2 * w2;
        Ok(Vector::from_vec(vec![next[0], next[1]]))
    }
}
