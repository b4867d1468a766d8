//! Ground-truth filters used to validate the sampler: exact Kalman
//! recursions with degenerate or noisy linear observations, the uniform
//! law on a sphere, and a brute-force quadrature filter on low-dimensional
//! linear manifolds.

use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::check_len;
use crate::linalg::{log_sum_exp, null_space_basis, symmetrize};
use crate::models::{LinearGaussianModel, StateSpaceModel};
use crate::{Error, Matrix, Result, Vector};

/// Gaussian law whose covariance may be singular.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub covariance: Matrix,
}

impl GaussianBelief {
    pub fn point(mean: Vector) -> Self {
        let d = mean.len();
        Self {
            mean,
            covariance: Matrix::zeros(d, d),
        }
    }

    pub fn std(&self) -> Vector {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// One Kalman step for `X_k = B X_{k-1} + C ν_k`, `Y_k = A X_k + η_k`,
/// `η_k ~ N(0, R)`. `R = None` is the exact-observation case.
pub fn kalman_step(
    belief: &GaussianBelief,
    b: &Matrix,
    c: &Matrix,
    a: &Matrix,
    y: &Vector,
    r: Option<&Matrix>,
) -> Result<GaussianBelief> {
    let d = belief.mean.len();
    check_len("transition", d, b.ncols())?;
    check_len("observation matrix", d, a.ncols())?;
    check_len("observation", a.nrows(), y.len())?;
    let m = b * &belief.mean;
    let p = symmetrize(&(b * &belief.covariance * b.transpose() + c * c.transpose()));
    let mut s = a * &p * a.transpose();
    if let Some(r) = r {
        s += r;
    }
    let s_lu = s.lu();
    // K = P A^T S^{-1}
    let gain = s_lu
        .solve(&(a * &p))
        .ok_or_else(|| Error::NotPositiveDefinite("innovation covariance".into()))?
        .transpose();
    let mean = &m + &gain * (y - a * &m);
    let covariance = symmetrize(&((Matrix::identity(d, d) - &gain * a) * &p));
    Ok(GaussianBelief { mean, covariance })
}

/// Kalman step with zero observation noise: the posterior mean satisfies
/// `A m = y` and the covariance vanishes along the rows of `A`.
pub fn kalman_degenerate_step(belief: &GaussianBelief, b: &Matrix, c: &Matrix, a: &Matrix, y: &Vector) -> Result<GaussianBelief> {
    kalman_step(belief, b, c, a, y, None)
}

/// Kalman filter of a linear Gaussian model with a linear observation,
/// started from the point mass at `x_0`. Returns the beliefs at `1..=n`.
pub fn kalman_filter(
    model: &LinearGaussianModel,
    observations: &[Vector],
    observation_noise: Option<&Matrix>,
) -> Result<Vec<GaussianBelief>> {
    let a = model
        .observation_matrix()
        .ok_or_else(|| Error::InvalidConfig(format!("{} has a nonlinear observation", model.name())))?;
    let b = model.transition_matrix();
    let d = model.dim_x();
    let c = Matrix::identity(d, d) * model.noise_std();
    let mut belief = GaussianBelief::point(model.initial_state());
    observations
        .iter()
        .map(|y| {
            belief = kalman_step(&belief, b, &c, a, y, observation_noise)?;
            Ok(belief.clone())
        })
        .collect()
}

fn check_sphere(d: usize, radius: f64) -> Result<()> {
    if d < 3 || !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("sphere marginal needs d >= 3 and R > 0, got d={d} R={radius}")));
    }
    Ok(())
}

/// Density of one coordinate of the uniform law on the sphere of radius
/// `R` in `R^d`: `(1 - t²/R²)^{(d-3)/2} / (R B(1/2, (d-1)/2))`.
pub fn sphere_coordinate_marginal_pdf(d: usize, radius: f64, t: f64) -> Result<f64> {
    check_sphere(d, radius)?;
    if t.abs() > radius {
        return Ok(0.0);
    }
    let u = 1.0 - (t / radius).powi(2);
    let half = 0.5 * (d as f64 - 3.0);
    let log_norm = radius.ln() + ln_beta(0.5, 0.5 * (d as f64 - 1.0));
    if half == 0.0 {
        return Ok((-log_norm).exp());
    }
    Ok((half * u.ln() - log_norm).exp())
}

/// CDF of [`sphere_coordinate_marginal_pdf`]: `(1 + t/R)/2` is
/// `Beta((d-1)/2, (d-1)/2)` distributed.
pub fn sphere_coordinate_marginal_cdf(d: usize, radius: f64, t: f64) -> Result<f64> {
    check_sphere(d, radius)?;
    if t <= -radius {
        return Ok(0.0);
    }
    if t >= radius {
        return Ok(1.0);
    }
    let a = 0.5 * (d as f64 - 1.0);
    Ok(beta_reg(a, a, 0.5 * (1.0 + t / radius)))
}

/// Tensor grid in the tangent coordinates `z` of a linear manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Half-width of the grid along each tangent coordinate.
    pub half_width: f64,
    /// Points per coordinate (odd, at least 3).
    pub points: usize,
}

/// Boundary mass above which a grid is flagged as too narrow.
pub const GRID_LEAKAGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GridMarginal {
    /// Grid nodes in state space.
    pub nodes: Vec<Vector>,
    /// Probability mass per node (sums to one).
    pub masses: Vec<f64>,
    pub mean: Vector,
    pub std: Vector,
    /// Mass on the outermost grid layer.
    pub leakage: f64,
}

impl GridMarginal {
    pub fn leaks(&self) -> bool {
        self.leakage > GRID_LEAKAGE_TOL
    }
}

/// Quadrature filter for models with a linear observation `A x = y_k` and
/// at most two tangent dimensions.
///
/// Each step parametrizes `M_k` as `z* + V z` (minimum-norm `z*`,
/// orthonormal `V`), centres a tensor trapezoid grid at the tangent
/// coordinates of the previous mean, and evaluates
/// `π_k(x) ∝ Σ_b m_b f_k(x_b, x)` against the previous step's masses. The
/// Gram weight is constant on affine manifolds and drops out.
pub fn grid_filter<M: StateSpaceModel>(
    model: &M,
    a: &Matrix,
    observations: &[Vector],
    grid: &GridSpec,
) -> Result<Vec<GridMarginal>> {
    let d = model.dim_x();
    check_len("observation matrix", d, a.ncols())?;
    let r = d - a.nrows();
    if r == 0 || r > 2 {
        return Err(Error::InvalidConfig(format!("grid filter needs 1 or 2 tangent dimensions, got {r}")));
    }
    if grid.points < 3 || grid.points % 2 == 0 || !(grid.half_width > 0.0) {
        return Err(Error::InvalidConfig("grid needs an odd point count >= 3 and positive width".into()));
    }
    let v = null_space_basis(a).ok_or_else(|| Error::SingularJacobian { point: vec![] })?;
    let pinv = a.clone().pseudo_inverse(1e-14).map_err(|e| Error::Contract(e.to_string()))?;

    let p = grid.points;
    let h = 2.0 * grid.half_width / (p - 1) as f64;
    let axis: Vec<f64> = (0..p).map(|i| -grid.half_width + i as f64 * h).collect();
    let trap = |i: usize| if i == 0 || i == p - 1 { 0.5 } else { 1.0 };
    let cells: Vec<(Vec<usize>, f64)> = if r == 1 {
        (0..p).map(|i| (vec![i], trap(i) * h)).collect()
    } else {
        (0..p)
            .flat_map(|i| (0..p).map(move |j| (vec![i, j], trap(i) * trap(j) * h * h)))
            .collect()
    };

    let mut prev_nodes = vec![model.initial_state()];
    let mut prev_masses = vec![1.0];
    let mut prev_mean = model.initial_state();
    let mut out = Vec::with_capacity(observations.len());
    for (i, y) in observations.iter().enumerate() {
        let k = i + 1;
        let z_star = &pinv * y;
        let center = v.transpose() * (&prev_mean - &z_star);
        let nodes: Vec<Vector> = cells
            .iter()
            .map(|(ix, _)| {
                let z = Vector::from_fn(r, |c, _| center[c] + axis[ix[c]]);
                &z_star + &v * z
            })
            .collect();
        let preds = prev_nodes
            .iter()
            .map(|x| model.prepare_predecessor(k, x))
            .collect::<Result<Vec<_>>>()?;
        let log_prev: Vec<f64> = prev_masses.iter().map(|m: &f64| m.ln()).collect();
        let log_density: Vec<f64> = nodes
            .iter()
            .map(|x| {
                let succ = model.prepare_successor(k, x);
                let terms: Vec<f64> = preds
                    .iter()
                    .zip(&log_prev)
                    .map(|(pr, lm)| lm + model.transition_log_density(pr, &succ))
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
        let log_w: Vec<f64> = log_density
            .iter()
            .zip(&cells)
            .map(|(ld, (_, w))| ld + w.ln())
            .collect();
        let log_z = log_sum_exp(&log_w);
        if !log_z.is_finite() {
            return Err(Error::Contract(format!("grid filter lost all mass at step {k}")));
        }
        let masses: Vec<f64> = log_w.iter().map(|lw| (lw - log_z).exp()).collect();
        let mut mean = Vector::zeros(d);
        for (x, m) in nodes.iter().zip(&masses) {
            mean += x * *m;
        }
        let mut var = Vector::zeros(d);
        for (x, m) in nodes.iter().zip(&masses) {
            var += (x - &mean).map(|e| e * e) * *m;
        }
        let leakage = cells
            .iter()
            .zip(&masses)
            .filter(|((ix, _), _)| ix.iter().any(|&c| c == 0 || c == p - 1))
            .map(|(_, m)| m)
            .sum();
        out.push(GridMarginal {
            nodes: nodes.clone(),
            masses: masses.clone(),
            std: var.map(f64::sqrt),
            mean: mean.clone(),
            leakage,
        });
        prev_nodes = nodes;
        prev_masses = masses;
        prev_mean = mean;
    }
    Ok(out)
}
