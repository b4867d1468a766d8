use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{StateSpaceModel, LOG_2PI};
use crate::error::check_len;
use crate::linalg;
use crate::manifold::{LinearMap, ObservationMap};
use crate::{Error, Matrix, Result, Vector};

/// Matérn covariance on the periodic spatial grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternConfig {
    /// α; one of 1/2, 3/2, 5/2.
    pub smoothness: f64,
    pub range: f64,
    /// Marginal variance σ².
    pub variance: f64,
}

impl Default for MaternConfig {
    fn default() -> Self {
        Self {
            smoothness: 0.5,
            range: 10.0,
            variance: 4.0,
        }
    }
}

impl MaternConfig {
    fn correlation(&self, d: f64) -> Result<f64> {
        let r = d / self.range;
        let v = if self.smoothness == 0.5 {
            (-r).exp()
        } else if self.smoothness == 1.5 {
            let s = 3f64.sqrt() * r;
            (1.0 + s) * (-s).exp()
        } else if self.smoothness == 2.5 {
            let s = 5f64.sqrt() * r;
            (1.0 + s + s * s / 3.0) * (-s).exp()
        } else {
            return Err(Error::InvalidConfig(format!(
                "Matérn smoothness {} is not supported (use 0.5, 1.5 or 2.5)",
                self.smoothness
            )));
        };
        Ok(v)
    }
}

/// Covariance of `n` equispaced points on a circle of circumference
/// `period`, with wrapped distance `min(|s_i - s_j|, period - |s_i - s_j|)`.
pub fn matern_covariance(cfg: &MaternConfig, n: usize, period: f64) -> Result<Matrix> {
    if !(cfg.range > 0.0 && cfg.variance > 0.0) {
        return Err(Error::InvalidConfig("Matérn range and variance must be positive".into()));
    }
    let spacing = period / n as f64;
    let row: Vec<f64> = (0..n)
        .map(|lag| {
            let d = (lag as f64 * spacing).min(period - lag as f64 * spacing);
            cfg.correlation(d).map(|c| cfg.variance * c)
        })
        .collect::<Result<_>>()?;
    Ok(Matrix::from_fn(n, n, |i, j| row[(i + n - j) % n]))
}

/// Circulant matrix with `(M x)_i = Σ_(offset, w) w · x_{i+offset}` and
/// periodic wrap.
pub fn circulant(n: usize, stencil: &[(isize, f64)]) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for &(offset, w) in stencil {
            let j = (i as isize + offset).rem_euclid(n as isize) as usize;
            m[(i, j)] += w;
        }
    }
    m
}

/// Parameters of the discretized stochastic Kuramoto–Sivashinsky model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsConfig {
    pub dim_x: usize,
    /// Observe every `obs_stride`-th grid value.
    pub obs_stride: usize,
    /// Domain length S.
    pub domain: f64,
    /// Damping γ.
    pub damping: f64,
    pub matern: MaternConfig,
    /// σ_y of the auxiliary noisy observation model used only to build the
    /// preconditioner.
    pub precond_obs_std: f64,
}

impl Default for KsConfig {
    fn default() -> Self {
        Self {
            dim_x: 100,
            obs_stride: 10,
            domain: 10.0 * PI,
            damping: 0.01,
            matern: MaternConfig::default(),
            precond_obs_std: 0.1,
        }
    }
}

/// IMEX Euler discretization
/// `X_k = A^{-1}(X_{k-1} - X_{k-1} ⊙ B X_{k-1}) + A^{-1} C ν_k`,
/// `ν_k ~ N(0, I)`, with `A = (1+γ)I + δt/δs² D₂ + δt/δs⁴ D₄`,
/// `B = δt/(2δs) D₁` and `C = δt^{1/2} L`, `L L^T` the Matérn covariance.
#[derive(Clone)]
pub struct KsModel {
    cfg: KsConfig,
    dt: f64,
    ds: f64,
    implicit: Matrix,
    implicit_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    advection: Matrix,
    /// Lower-triangular `C`.
    noise_factor: Matrix,
    observation_matrix: Matrix,
    observation: Arc<dyn ObservationMap>,
    preconditioner: Matrix,
    initial: Vector,
    log_norm: f64,
}

impl std::fmt::Debug for KsModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KsModel").field("cfg", &self.cfg).field("dt", &self.dt).finish()
    }
}

impl KsModel {
    pub fn new(cfg: KsConfig) -> Result<Self> {
        let n = cfg.dim_x;
        if n < 5 || cfg.obs_stride < 2 || n % cfg.obs_stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "ks needs dim_x >= 5 divisible by obs_stride >= 2 (got {} and {})",
                n, cfg.obs_stride
            )));
        }
        if !(cfg.domain > 0.0 && cfg.damping > 0.0 && cfg.precond_obs_std > 0.0) {
            return Err(Error::InvalidConfig("ks domain, damping and sigma_y must be positive".into()));
        }
        let ds = cfg.domain / n as f64;
        let dt = ds * ds / 2.0;
        let implicit = Matrix::identity(n, n) * (1.0 + cfg.damping) + Self::d2(n) * (dt / (ds * ds))
            + Self::d4(n) * (dt / ds.powi(4));
        let implicit_chol = linalg::cholesky(&implicit, "implicit operator A")?;
        let advection = Self::d1(n) * (dt / (2.0 * ds));
        let cov = matern_covariance(&cfg.matern, n, cfg.domain)?;
        let cov_chol = linalg::cholesky(&cov, "Matérn covariance")?;
        let noise_factor = cov_chol.l() * dt.sqrt();

        let dy = n / cfg.obs_stride;
        let observation_matrix = Matrix::from_fn(dy, n, |r, c| if c == r * cfg.obs_stride { 1.0 } else { 0.0 });

        // Q^{-1} = A^T (C C^T)^{-1} A for the transition covariance Q.
        let c_inv_a = noise_factor
            .solve_lower_triangular(&implicit)
            .ok_or_else(|| Error::NotPositiveDefinite("noise factor".into()))?;
        let precision = c_inv_a.transpose() * &c_inv_a
            + observation_matrix.transpose() * &observation_matrix / (cfg.precond_obs_std * cfg.precond_obs_std);
        let precision = linalg::symmetrize(&precision);
        let conditional_cov = linalg::cholesky(&precision, "preconditioner precision")?.inverse();
        let preconditioner = linalg::cholesky(&linalg::symmetrize(&conditional_cov), "preconditioner")?.l();

        // log|det(A^{-1} C)|
        let log_det_c: f64 = noise_factor.diagonal().iter().map(|d| d.ln()).sum();
        let log_det_a = linalg::log_det_spd(&implicit_chol);
        let log_norm = -0.5 * n as f64 * LOG_2PI - (log_det_c - log_det_a);

        let initial = Vector::from_fn(n, |i, _| 1.5 * (i as f64 * ds / 5.0).cos());
        Ok(Self {
            cfg,
            dt,
            ds,
            implicit_lu: implicit.clone().lu(),
            implicit,
            advection,
            noise_factor,
            observation: Arc::new(LinearMap::new(observation_matrix.clone())),
            observation_matrix,
            preconditioner,
            initial,
            log_norm,
        })
    }

    /// `x_{i+1} - x_{i-1}`
    pub fn d1(n: usize) -> Matrix {
        circulant(n, &[(1, 1.0), (-1, -1.0)])
    }
    /// `x_{i+1} - 2x_i + x_{i-1}`
    pub fn d2(n: usize) -> Matrix {
        circulant(n, &[(-1, 1.0), (0, -2.0), (1, 1.0)])
    }
    /// `x_{i+2} - 4x_{i+1} + 6x_i - 4x_{i-1} + x_{i-2}`
    pub fn d4(n: usize) -> Matrix {
        circulant(n, &[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)])
    }

    pub fn config(&self) -> &KsConfig {
        &self.cfg
    }
    pub fn time_step(&self) -> f64 {
        self.dt
    }
    pub fn grid_spacing(&self) -> f64 {
        self.ds
    }
    /// `A`.
    pub fn implicit_operator(&self) -> &Matrix {
        &self.implicit
    }
    /// `B`.
    pub fn advection_operator(&self) -> &Matrix {
        &self.advection
    }
    /// `C`.
    pub fn noise_factor(&self) -> &Matrix {
        &self.noise_factor
    }
    pub fn observation_matrix(&self) -> &Matrix {
        &self.observation_matrix
    }

    /// `x - x ⊙ B x`.
    pub fn explicit_part(&self, x: &Vector) -> Vector {
        let bx = &self.advection * x;
        x - x.component_mul(&bx)
    }

    /// `A^{-1}(x - x ⊙ B x)`.
    pub fn transition_mean(&self, x_prev: &Vector) -> Vector {
        self.implicit_lu.solve(&self.explicit_part(x_prev)).expect("A is SPD")
    }

    /// `A^{-1} C C^T A^{-T}`.
    pub fn transition_covariance(&self) -> Matrix {
        let m = self.implicit_lu.solve(&self.noise_factor).expect("A is SPD");
        linalg::symmetrize(&(&m * m.transpose()))
    }

    fn whiten(&self, v: &Vector) -> Vector {
        self.noise_factor.solve_lower_triangular(v).expect("C has a positive diagonal")
    }
}

impl StateSpaceModel for KsModel {
    /// `C^{-1}(x - x ⊙ B x)`
    type Predecessor = Vector;
    /// `C^{-1} A x`
    type Successor = Vector;

    fn name(&self) -> &str {
        "ks"
    }
    fn dim_x(&self) -> usize {
        self.cfg.dim_x
    }
    fn dim_y(&self) -> usize {
        self.cfg.dim_x / self.cfg.obs_stride
    }
    fn initial_state(&self) -> Vector {
        self.initial.clone()
    }
    fn observation_map(&self, _time: usize) -> Arc<dyn ObservationMap> {
        self.observation.clone()
    }

    fn prepare_predecessor(&self, _time: usize, x_prev: &Vector) -> Result<Vector> {
        check_len("state", self.dim_x(), x_prev.len())?;
        Ok(self.whiten(&self.explicit_part(x_prev)))
    }

    fn prepare_successor(&self, _time: usize, x: &Vector) -> Vector {
        self.whiten(&(&self.implicit * x))
    }

    fn transition_log_density(&self, pred: &Vector, succ: &Vector) -> f64 {
        let sq: f64 = pred.iter().zip(succ.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
        self.log_norm - 0.5 * sq
    }

    fn simulate_step<R: Rng + ?Sized>(&self, _time: usize, x_prev: &Vector, rng: &mut R) -> Result<Vector> {
        check_len("state", self.dim_x(), x_prev.len())?;
        let nu = Vector::from_fn(self.dim_x(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let rhs = self.explicit_part(x_prev) + &self.noise_factor * nu;
        Ok(self.implicit_lu.solve(&rhs).expect("A is SPD"))
    }

    fn preconditioner(&self) -> Option<&Matrix> {
        Some(&self.preconditioner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_difference_symbol() {
        let n = 24;
        let d2 = KsModel::d2(n);
        for m in 0..n {
            let w = 2.0 * PI * m as f64 / n as f64;
            let cosv = Vector::from_fn(n, |i, _| (w * i as f64).cos());
            let sinv = Vector::from_fn(n, |i, _| (w * i as f64).sin());
            let lambda = 2.0 * w.cos() - 2.0;
            assert!((&d2 * &cosv - &cosv * lambda).amax() < 1e-10);
            assert!((&d2 * &sinv - &sinv * lambda).amax() < 1e-10);
        }
    }

    #[test]
    fn fourth_difference_is_square_of_second() {
        let d2 = KsModel::d2(16);
        assert!((&d2 * &d2 - KsModel::d4(16)).amax() < 1e-12);
    }

    #[test]
    fn matern_rows_are_rotations() {
        let c = matern_covariance(&MaternConfig::default(), 20, 10.0 * PI).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(c[(i, j)], c[(0, (j + 20 - i) % 20)]);
            }
        }
        assert_eq!(c[(0, 0)], 4.0);
        assert!(linalg::cholesky(&c, "matern").is_ok());
    }

    #[test]
    fn unsupported_smoothness() {
        let cfg = MaternConfig {
            smoothness: 0.7,
            ..MaternConfig::default()
        };
        assert!(matern_covariance(&cfg, 8, 1.0).is_err());
    }

    #[test]
    fn builds_at_default_parameters() {
        let m = KsModel::new(KsConfig::default()).unwrap();
        assert_eq!(m.dim_y(), 10);
        let h = m.observation_matrix();
        assert_eq!(h[(1, 10)], 1.0);
        assert_eq!(h.row(1).sum(), 1.0);
        assert!((m.time_step() - m.grid_spacing().powi(2) / 2.0).abs() < 1e-15);
        assert!((m.initial_state()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn logpdf_matches_dense_gaussian() {
        let cfg = KsConfig {
            dim_x: 12,
            obs_stride: 4,
            ..KsConfig::default()
        };
        let m = KsModel::new(cfg).unwrap();
        let xp = Vector::from_fn(12, |i, _| (i as f64 * 0.4).sin());
        let x = Vector::from_fn(12, |i, _| (i as f64 * 0.3).cos() * 0.5);
        let cov = m.transition_covariance();
        let chol = cov.clone().cholesky().unwrap();
        let r = &x - m.transition_mean(&xp);
        let dense = -0.5 * (r.transpose() * chol.inverse() * &r)[0] - 0.5 * linalg::log_det_spd(&chol)
            - 6.0 * LOG_2PI;
        let ours = m.transition_logpdf(1, &xp, &x).unwrap();
        assert!((dense - ours).abs() < 1e-8 * dense.abs().max(1.0), "{dense} {ours}");
    }

    #[test]
    fn rejects_indivisible_stride() {
        let cfg = KsConfig {
            dim_x: 30,
            obs_stride: 4,
            ..KsConfig::default()
        };
        assert!(KsModel::new(cfg).is_err());
    }
}
