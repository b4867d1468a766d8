//! Observation-constraint manifolds `M_k = {x : c_k(x) = 0}` with
//! `c_k(x) = y_k - h_k(x)`.
//!
//! [`ConstraintSystem`] bundles the observation map, the observed value and
//! an optional metric. It evaluates the constraint and its Jacobian, the
//! Gram weight `g_k(x) = det(∂c M^{-1} ∂c^T)^{-1/2}` that converts ambient
//! densities into densities with respect to the Riemannian measure, tangent
//! frames from a full QR factorization of `∂c(x)^T`, and the Newton
//! projection used by the constrained random-walk kernel.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, Dyn};

use crate::error::check_len;
use crate::linalg::{self, inf_norm};
use crate::{Error, Matrix, Result, Vector};

/// A smooth map `h: R^{d_x} -> R^{d_y}` with an analytic Jacobian.
pub trait ObservationMap: Send + Sync {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;
    /// `∂h(x)`, a `d_y × d_x` matrix.
    fn jacobian(&self, x: &Vector) -> Matrix;
}

/// `h(x) = A x`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    matrix: Matrix,
}

impl LinearMap {
    pub fn new(matrix: Matrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

impl ObservationMap for LinearMap {
    fn dim_x(&self) -> usize {
        self.matrix.ncols()
    }
    fn dim_y(&self) -> usize {
        self.matrix.nrows()
    }
    fn eval(&self, x: &Vector) -> Vector {
        &self.matrix * x
    }
    fn jacobian(&self, _x: &Vector) -> Matrix {
        self.matrix.clone()
    }
}

/// `h(x) = ‖x‖²`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredNorm {
    pub dim: usize,
}

impl ObservationMap for SquaredNorm {
    fn dim_x(&self) -> usize {
        self.dim
    }
    fn dim_y(&self) -> usize {
        1
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_element(1, x.norm_squared())
    }
    fn jacobian(&self, x: &Vector) -> Matrix {
        Matrix::from_fn(1, self.dim, |_, j| 2.0 * x[j])
    }
}

/// `v ↦ h(P v)`: an observation map pulled back through a linear change of
/// variables `x = P v`.
pub struct Pullback {
    inner: Arc<dyn ObservationMap>,
    transform: Matrix,
}

impl Pullback {
    pub fn new(inner: Arc<dyn ObservationMap>, transform: Matrix) -> Result<Self> {
        check_len("pullback transform", inner.dim_x(), transform.nrows())?;
        check_len("pullback transform", inner.dim_x(), transform.ncols())?;
        Ok(Self { inner, transform })
    }
}

impl ObservationMap for Pullback {
    fn dim_x(&self) -> usize {
        self.transform.ncols()
    }
    fn dim_y(&self) -> usize {
        self.inner.dim_y()
    }
    fn eval(&self, v: &Vector) -> Vector {
        self.inner.eval(&(&self.transform * v))
    }
    fn jacobian(&self, v: &Vector) -> Matrix {
        self.inner.jacobian(&(&self.transform * v)) * &self.transform
    }
}

/// Parameters of the Newton projection onto the manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Success when `‖c(x)‖_∞` falls to this level.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Give up once `‖c‖_∞` has grown this many iterations in a row.
    pub divergence_window: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
            divergence_window: 5,
        }
    }
}

/// The constraint `c(x) = y - h(x)` at one observation time together with
/// the metric `M` of the ambient space.
#[derive(Clone)]
pub struct ConstraintSystem {
    h: Arc<dyn ObservationMap>,
    observation: Vector,
    metric: Option<Cholesky<f64, Dyn>>,
}

impl fmt::Debug for ConstraintSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSystem")
            .field("dim_x", &self.dim_x())
            .field("dim_y", &self.dim_y())
            .field("observation", &self.observation.as_slice())
            .field("metric", &self.metric.is_some())
            .finish()
    }
}

impl ConstraintSystem {
    pub fn new(h: Arc<dyn ObservationMap>, observation: Vector) -> Result<Self> {
        check_len("observation", h.dim_y(), observation.len())?;
        if h.dim_y() == 0 || h.dim_y() >= h.dim_x() {
            return Err(Error::InvalidConfig(format!(
                "constraint manifolds need 0 < d_y < d_x, got d_x={} d_y={}",
                h.dim_x(),
                h.dim_y()
            )));
        }
        Ok(Self {
            h,
            observation,
            metric: None,
        })
    }

    /// Use a non-identity metric `M` (symmetric positive definite).
    pub fn with_metric(mut self, metric: &Matrix) -> Result<Self> {
        check_len("metric", self.dim_x(), metric.nrows())?;
        self.metric = Some(linalg::cholesky(metric, "metric")?);
        Ok(self)
    }

    pub fn dim_x(&self) -> usize {
        self.h.dim_x()
    }

    pub fn dim_y(&self) -> usize {
        self.h.dim_y()
    }

    pub fn observation(&self) -> &Vector {
        &self.observation
    }

    pub fn observation_map(&self) -> &Arc<dyn ObservationMap> {
        &self.h
    }

    /// `c(x) = y - h(x)`.
    pub fn evaluate_constraint(&self, x: &Vector) -> Result<Vector> {
        check_len("state", self.dim_x(), x.len())?;
        Ok(&self.observation - self.h.eval(x))
    }

    /// `∂c(x) = -∂h(x)`.
    pub fn constraint_jacobian(&self, x: &Vector) -> Result<Matrix> {
        check_len("state", self.dim_x(), x.len())?;
        Ok(-self.h.jacobian(x))
    }

    pub fn residual_norm(&self, x: &Vector) -> Result<f64> {
        Ok(inf_norm(&self.evaluate_constraint(x)?))
    }

    /// `log g(x) = -½ log det(∂c M^{-1} ∂c^T)`.
    pub fn log_gram_weight(&self, x: &Vector) -> Result<f64> {
        let jac = self.constraint_jacobian(x)?;
        self.log_gram_weight_from_jacobian(&jac, x)
    }

    pub(crate) fn log_gram_weight_from_jacobian(&self, jac: &Matrix, x: &Vector) -> Result<f64> {
        let gram = match &self.metric {
            None => jac * jac.transpose(),
            Some(chol) => {
                // J M^{-1} J^T = (L^{-1} J^T)^T (L^{-1} J^T)
                let w = chol
                    .l_dirty()
                    .solve_lower_triangular(&jac.transpose())
                    .ok_or_else(|| Error::NotPositiveDefinite("metric".into()))?;
                w.transpose() * w
            }
        };
        let chol = Cholesky::new(gram).ok_or_else(|| Error::SingularJacobian {
            point: x.as_slice().to_vec(),
        })?;
        Ok(-0.5 * linalg::log_det_spd(&chol))
    }

    pub fn gram_weight(&self, x: &Vector) -> Result<f64> {
        Ok(self.log_gram_weight(x)?.exp())
    }

    /// Orthonormal tangent and normal bases at `x` from the full QR
    /// factorization of `∂c(x)^T`.
    pub fn tangent_frame(&self, x: &Vector) -> Result<TangentFrame> {
        let jac = self.constraint_jacobian(x)?;
        TangentFrame::from_jacobian(x.clone(), jac)
    }

    /// Solve `c(base + shift + ∂c(base)^T a) = 0` for `a` by Newton's method.
    ///
    /// Returns `Ok(None)` when Newton fails to converge; only malformed
    /// inputs are errors.
    pub fn project_to_manifold(
        &self,
        base: &Vector,
        shift: &Vector,
        cfg: &NewtonConfig,
    ) -> Result<Option<Vector>> {
        check_len("shift", self.dim_x(), shift.len())?;
        let jac = self.constraint_jacobian(base)?;
        Ok(self.project_along(base, shift, &jac, cfg))
    }

    /// Newton projection with the normal directions given by the rows of
    /// `normal` (normally `∂c(base)`).
    pub(crate) fn project_along(
        &self,
        base: &Vector,
        shift: &Vector,
        normal: &Matrix,
        cfg: &NewtonConfig,
    ) -> Option<Vector> {
        let anchor = base + shift;
        let normal_t = normal.transpose();
        let mut coeffs = Vector::zeros(self.dim_y());
        let mut x = anchor.clone();
        let mut c = &self.observation - self.h.eval(&x);
        let mut norm = inf_norm(&c);
        let mut growth = 0;
        for iter in 0..=cfg.max_iterations {
            if !norm.is_finite() {
                return None;
            }
            if norm <= cfg.tolerance {
                return Some(x);
            }
            if iter == cfg.max_iterations {
                break;
            }
            // d/da c(anchor + N^T a) = ∂c(x) N^T = -∂h(x) N^T
            let step_jac = -self.h.jacobian(&x) * &normal_t;
            let delta = step_jac.lu().solve(&(-&c))?;
            coeffs += delta;
            x = &anchor + &normal_t * &coeffs;
            c = &self.observation - self.h.eval(&x);
            let next = inf_norm(&c);
            if next > norm {
                growth += 1;
                if growth >= cfg.divergence_window {
                    return None;
                }
            } else {
                growth = 0;
            }
            norm = next;
        }
        None
    }
}

/// Tangent and normal bases of the manifold at a point.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    pub base_point: Vector,
    /// `(d_x - d_y) × d_x`, orthonormal rows spanning the tangent space.
    pub tangent_basis: Matrix,
    /// `d_y × d_x`, the rows of `∂c(base_point)`.
    pub normal_basis: Matrix,
}

impl TangentFrame {
    pub fn from_jacobian(base_point: Vector, jacobian: Matrix) -> Result<Self> {
        let (dy, dx) = jacobian.shape();
        check_len("state", dx, base_point.len())?;
        let qt = linalg::full_q_transpose(&jacobian.transpose()).ok_or_else(|| {
            Error::SingularJacobian {
                point: base_point.as_slice().to_vec(),
            }
        })?;
        Ok(Self {
            base_point,
            tangent_basis: qt.rows(dy, dx - dy).into_owned(),
            normal_basis: jacobian,
        })
    }

    pub fn dim_x(&self) -> usize {
        self.base_point.len()
    }

    pub fn tangent_dim(&self) -> usize {
        self.tangent_basis.nrows()
    }

    /// Tangent coordinates `U w`.
    pub fn tangent_coordinates(&self, w: &Vector) -> Vector {
        &self.tangent_basis * w
    }

    /// Embed tangent coordinates: `U^T z`.
    pub fn embed(&self, coords: &Vector) -> Vector {
        self.tangent_basis.tr_mul(coords)
    }

    /// Split `w` into its tangent part `U^T U w` and the normal remainder.
    pub fn split_tangent_normal(&self, w: &Vector) -> Result<(Vector, Vector)> {
        check_len("vector", self.dim_x(), w.len())?;
        let tangent = self.embed(&self.tangent_coordinates(w));
        let normal = w - &tangent;
        Ok((tangent, normal))
    }
}
