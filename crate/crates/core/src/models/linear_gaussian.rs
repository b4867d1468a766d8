use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{StateSpaceModel, LOG_2PI};
use crate::error::check_len;
use crate::manifold::{LinearMap, ObservationMap, SquaredNorm};
use crate::{Error, Matrix, Result, Vector};

/// `X_k = B X_{k-1} + σ ν_k`, `ν_k ~ N(0, I)`, observed through `h`.
#[derive(Clone)]
pub struct LinearGaussianModel {
    name: &'static str,
    transition: Matrix,
    noise_std: f64,
    initial: Vector,
    observation: Arc<dyn ObservationMap>,
    observation_matrix: Option<Matrix>,
}

impl std::fmt::Debug for LinearGaussianModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearGaussianModel")
            .field("name", &self.name)
            .field("dim_x", &self.transition.nrows())
            .field("noise_std", &self.noise_std)
            .finish()
    }
}

impl LinearGaussianModel {
    /// Linear Gaussian model observing the first coordinate, with the
    /// state-averaging transition `B = 1 1^T / d_x`, `C = σ I` and `x_0 = 0`.
    pub fn lgm_spec(dim_x: usize, sigma: f64) -> Result<Self> {
        if dim_x < 2 {
            return Err(Error::InvalidConfig("lgm needs dim_x >= 2".into()));
        }
        check_sigma(sigma)?;
        let mut a = Matrix::zeros(1, dim_x);
        a[(0, 0)] = 1.0;
        Ok(Self {
            name: "lgm",
            transition: Matrix::from_element(dim_x, dim_x, 1.0 / dim_x as f64),
            noise_std: sigma,
            initial: Vector::zeros(dim_x),
            observation: Arc::new(LinearMap::new(a.clone())),
            observation_matrix: Some(a),
        })
    }

    /// Gaussian dynamics `B = I/2`, `C = σ I`, observed through `h(x) = ‖x‖²`.
    pub fn sphere_spec(dim_x: usize, sigma: f64) -> Result<Self> {
        if dim_x < 2 {
            return Err(Error::InvalidConfig("sphere needs dim_x >= 2".into()));
        }
        check_sigma(sigma)?;
        Ok(Self {
            name: "sphere",
            transition: Matrix::identity(dim_x, dim_x) * 0.5,
            noise_std: sigma,
            initial: Vector::zeros(dim_x),
            observation: Arc::new(SquaredNorm { dim: dim_x }),
            observation_matrix: None,
        })
    }

    /// General linear observation `h(x) = A x`.
    pub fn with_linear_observation(transition: Matrix, noise_std: f64, initial: Vector, a: Matrix) -> Result<Self> {
        check_sigma(noise_std)?;
        check_len("transition", initial.len(), transition.nrows())?;
        check_len("observation matrix", initial.len(), a.ncols())?;
        Ok(Self {
            name: "linear_gaussian",
            transition,
            noise_std,
            initial,
            observation: Arc::new(LinearMap::new(a.clone())),
            observation_matrix: Some(a),
        })
    }

    pub fn transition_matrix(&self) -> &Matrix {
        &self.transition
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// `C C^T = σ² I`.
    pub fn noise_covariance(&self) -> Matrix {
        Matrix::identity(self.dim_x(), self.dim_x()) * (self.noise_std * self.noise_std)
    }

    /// `A` when the observation is linear.
    pub fn observation_matrix(&self) -> Option<&Matrix> {
        self.observation_matrix.as_ref()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise scale must be positive, got {sigma}")));
    }
    Ok(())
}

impl StateSpaceModel for LinearGaussianModel {
    /// `B x_prev / σ`
    type Predecessor = Vector;
    /// `x / σ`
    type Successor = Vector;

    fn name(&self) -> &str {
        self.name
    }
    fn dim_x(&self) -> usize {
        self.transition.nrows()
    }
    fn dim_y(&self) -> usize {
        self.observation.dim_y()
    }
    fn initial_state(&self) -> Vector {
        self.initial.clone()
    }
    fn observation_map(&self, _time: usize) -> Arc<dyn ObservationMap> {
        self.observation.clone()
    }

    fn prepare_predecessor(&self, _time: usize, x_prev: &Vector) -> Result<Vector> {
        check_len("state", self.dim_x(), x_prev.len())?;
        Ok(&self.transition * x_prev / self.noise_std)
    }

    fn prepare_successor(&self, _time: usize, x: &Vector) -> Vector {
        x / self.noise_std
    }

    fn transition_log_density(&self, pred: &Vector, succ: &Vector) -> f64 {
        let d = self.dim_x() as f64;
        let sq: f64 = pred.iter().zip(succ.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
        -0.5 * sq - 0.5 * d * LOG_2PI - d * self.noise_std.ln()
    }

    fn simulate_step<R: Rng + ?Sized>(&self, _time: usize, x_prev: &Vector, rng: &mut R) -> Result<Vector> {
        check_len("state", self.dim_x(), x_prev.len())?;
        let noise = Vector::from_fn(self.dim_x(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(&self.transition * x_prev + noise * self.noise_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn mode_value() {
        let m = LinearGaussianModel::lgm_spec(20, 0.1).unwrap();
        let xp = Vector::from_fn(20, |i, _| i as f64 * 0.01);
        let mode = m.transition_matrix() * &xp;
        let lp = m.transition_logpdf(1, &xp, &mode).unwrap();
        let expected = -10.0 * (2.0 * std::f64::consts::PI * 0.01).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn averaging_transition() {
        let m = LinearGaussianModel::lgm_spec(4, 0.1).unwrap();
        let b = m.transition_matrix() * Vector::from_vec(vec![1.0, 2.0, 3.0, 6.0]);
        assert!(b.iter().all(|v| (v - 3.0).abs() < 1e-15));
    }

    #[test]
    fn simulated_mean_matches_transition_mean() {
        let m = LinearGaussianModel::lgm_spec(3, 0.1).unwrap();
        let xp = Vector::from_vec(vec![0.3, -0.6, 0.9]);
        let mut rng = stream(11, 0, 0);
        let n = 100_000;
        let mut sum = Vector::zeros(3);
        for _ in 0..n {
            sum += m.simulate_step(1, &xp, &mut rng).unwrap();
        }
        let mean = sum / n as f64;
        let target = m.transition_matrix() * &xp;
        let tol = 4.0 * 0.1 / (n as f64).sqrt();
        assert!((mean - target).amax() < tol);
    }

    #[test]
    fn configuration_errors() {
        assert!(LinearGaussianModel::lgm_spec(1, 0.1).is_err());
        assert!(LinearGaussianModel::lgm_spec(3, 0.0).is_err());
        assert!(LinearGaussianModel::sphere_spec(3, -1.0).is_err());
    }
}
