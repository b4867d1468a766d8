//! Random-walk kernels for linear observations `Y_k = A X_k + Δ^{1/2} ε_k`.
//!
//! For `Δ > 0` the pair `(x, ε)` lives on the affine set
//! `{A^Δ (x, ε) = y}`, `A^Δ = [A, Δ^{1/2} I]`, parametrized as
//! `u^Δ(z̃) = z̃^Δ + V^Δ z̃` with `z̃ ∈ R^{d_x}`. For `Δ = 0` the state lives on
//! `{A x = y}`, parametrized as `u^⋆(z) = z^⋆ + V^⋆ z`, `z ∈ R^{d_x - d_y}`.
//! The kernels are plain Gaussian random walks in these coordinates.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::check_len;
use crate::linalg::{log_sum_exp, null_space_basis, procrustes_rotation};
use crate::models::StateSpaceModel;
use crate::{Error, Matrix, Result, Vector};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservation {
    pub a: Matrix,
    pub y: Vector,
    /// Noise scale `Δ >= 0`.
    pub delta: f64,
}

impl LinearObservation {
    pub fn new(a: Matrix, y: Vector, delta: f64) -> Result<Self> {
        check_len("observation", a.nrows(), y.len())?;
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise scale must be >= 0, got {delta}")));
        }
        if a.nrows() == 0 || a.nrows() >= a.ncols() {
            return Err(Error::InvalidConfig("linear observation needs 0 < d_y < d_x".into()));
        }
        Ok(Self { a, y, delta })
    }

    pub fn dim_x(&self) -> usize {
        self.a.ncols()
    }

    pub fn dim_y(&self) -> usize {
        self.a.nrows()
    }

    /// `[A, Δ^{1/2} I]`.
    pub fn augmented(&self) -> Matrix {
        let (dy, dx) = self.a.shape();
        let mut m = Matrix::zeros(dy, dx + dy);
        m.view_mut((0, 0), (dy, dx)).copy_from(&self.a);
        m.view_mut((0, dx), (dy, dy)).fill_diagonal(self.delta.sqrt());
        m
    }
}

/// Affine parametrization `u(z) = particular + basis z`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParametrization {
    pub particular_solution: Vector,
    /// Orthonormal columns spanning the null space.
    pub basis: Matrix,
    dim_x: usize,
}

impl KernelParametrization {
    pub fn eval(&self, z: &Vector) -> Vector {
        &self.particular_solution + &self.basis * z
    }

    /// State part of `u(z)`.
    pub fn state(&self, z: &Vector) -> Vector {
        self.eval(z).rows(0, self.dim_x).into_owned()
    }

    /// Noise part `ε` of `u^Δ(z̃)`; empty in the degenerate case.
    pub fn noise(&self, z: &Vector) -> Vector {
        let u = self.eval(z);
        u.rows(self.dim_x, u.len() - self.dim_x).into_owned()
    }

    /// Number of free coordinates.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// `z^⋆ = A^+ y` and an orthonormal basis of `ker A`.
pub fn degenerate_parametrization(obs: &LinearObservation) -> Result<KernelParametrization> {
    let basis = null_space_basis(&obs.a).ok_or_else(|| Error::SingularJacobian { point: vec![] })?;
    let pinv = obs.a.clone().pseudo_inverse(1e-14).map_err(|e| Error::Contract(e.to_string()))?;
    Ok(KernelParametrization {
        particular_solution: pinv * &obs.y,
        basis,
        dim_x: obs.dim_x(),
    })
}

/// `blockdiag(V^⋆, I_{d_y})`, the `Δ → 0` limit of an aligned `V^Δ`.
pub fn limit_basis(degenerate: &KernelParametrization, dim_y: usize) -> Matrix {
    let (dx, r) = degenerate.basis.shape();
    let mut m = Matrix::zeros(dx + dim_y, r + dim_y);
    m.view_mut((0, 0), (dx, r)).copy_from(&degenerate.basis);
    m.view_mut((dx, r), (dim_y, dim_y)).fill_diagonal(1.0);
    m
}

/// Parametrization of the observation: `u^⋆` for `Δ = 0`; otherwise `u^Δ`
/// with `z̃^Δ = (z^⋆, 0)` and `V^Δ` rotated onto `blockdiag(V^⋆, I)` by
/// orthogonal Procrustes.
pub fn build_parametrization(obs: &LinearObservation) -> Result<KernelParametrization> {
    let star = degenerate_parametrization(obs)?;
    if obs.delta == 0.0 {
        return Ok(star);
    }
    let (dx, dy) = (obs.dim_x(), obs.dim_y());
    let raw = null_space_basis(&obs.augmented()).ok_or_else(|| Error::SingularJacobian { point: vec![] })?;
    let target = limit_basis(&star, dy);
    let basis = &raw * procrustes_rotation(&raw, &target);
    let mut particular_solution = Vector::zeros(dx + dy);
    particular_solution.rows_mut(0, dx).copy_from(&star.particular_solution);
    Ok(KernelParametrization {
        particular_solution,
        basis,
        dim_x: dx,
    })
}

/// `log p_N(ε)` for the standard Gaussian on `R^{d_y}`.
pub fn std_normal_log_density(e: &Vector) -> f64 {
    -0.5 * e.norm_squared() - 0.5 * e.len() as f64 * LOG_2PI
}

/// `log (1/N) Σ_i f_k(x_{k-1}^i, x)` over a prepared previous cloud.
pub struct PredictiveMixture<'a, M: StateSpaceModel> {
    model: &'a M,
    time: usize,
    preds: Vec<M::Predecessor>,
}

impl<'a, M: StateSpaceModel> PredictiveMixture<'a, M> {
    pub fn new(model: &'a M, time: usize, particles: &[Vector]) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Contract("predictive mixture over no particles".into()));
        }
        let preds = particles
            .iter()
            .map(|x| model.prepare_predecessor(time, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, time, preds })
    }

    pub fn log_density(&self, x: &Vector) -> f64 {
        let succ = self.model.prepare_successor(self.time, x);
        let terms: Vec<f64> = self.preds.iter().map(|p| self.model.transition_log_density(p, &succ)).collect();
        log_sum_exp(&terms) - (self.preds.len() as f64).ln()
    }
}

/// `log p_N(ε(z̃)) + log (1/N) Σ f(x_i, x(z̃))`.
pub fn low_noise_log_target<M: StateSpaceModel>(mix: &PredictiveMixture<M>, par: &KernelParametrization, z: &Vector) -> f64 {
    std_normal_log_density(&par.noise(z)) + mix.log_density(&par.state(z))
}

/// `log (1/N) Σ f(x_i, u^⋆(z))`.
pub fn degenerate_log_target<M: StateSpaceModel>(mix: &PredictiveMixture<M>, par: &KernelParametrization, z: &Vector) -> f64 {
    mix.log_density(&par.eval(z))
}

fn acceptance(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// `min{1, π(z̃')/π(z̃)}` for the `K^Δ` random walk.
pub fn low_noise_acceptance<M: StateSpaceModel>(
    mix: &PredictiveMixture<M>,
    par: &KernelParametrization,
    z: &Vector,
    z_new: &Vector,
) -> f64 {
    acceptance(low_noise_log_target(mix, par, z_new) - low_noise_log_target(mix, par, z))
}

/// `min{1, π^⋆(z')/π^⋆(z)}` for the `K^⋆` random walk.
pub fn degenerate_acceptance<M: StateSpaceModel>(
    mix: &PredictiveMixture<M>,
    par: &KernelParametrization,
    z: &Vector,
    z_new: &Vector,
) -> f64 {
    acceptance(degenerate_log_target(mix, par, z_new) - degenerate_log_target(mix, par, z))
}

/// The `Δ → 0` limit of [`low_noise_acceptance`] at `z̃ = (z, z̄)`:
/// `min{1, p_N(z̄') Σf(u^⋆(z')) / (p_N(z̄) Σf(u^⋆(z)))}`.
pub fn limit_acceptance<M: StateSpaceModel>(
    mix: &PredictiveMixture<M>,
    star: &KernelParametrization,
    z: &Vector,
    z_new: &Vector,
) -> f64 {
    acceptance(limit_log_ratio(mix, star, z, z_new))
}

fn limit_log_ratio<M: StateSpaceModel>(mix: &PredictiveMixture<M>, star: &KernelParametrization, z: &Vector, z_new: &Vector) -> f64 {
    let r = star.dim();
    let part = |v: &Vector| (v.rows(0, r).into_owned(), v.rows(r, v.len() - r).into_owned());
    let (a, abar) = part(z);
    let (b, bbar) = part(z_new);
    std_normal_log_density(&bbar) + degenerate_log_target(mix, star, &b)
        - std_normal_log_density(&abar)
        - degenerate_log_target(mix, star, &a)
}

/// Limit acceptance when the proposal is `q̃(z̃, z̃') = q(z, z') p_N(z̄')`:
/// the Hastings factor `p_N(z̄)/p_N(z̄')` cancels the noise terms.
pub fn factorized_limit_acceptance<M: StateSpaceModel>(
    mix: &PredictiveMixture<M>,
    star: &KernelParametrization,
    z: &Vector,
    z_new: &Vector,
) -> f64 {
    let r = star.dim();
    let zbar = z.rows(r, z.len() - r).into_owned();
    let zbar_new = z_new.rows(r, z_new.len() - r).into_owned();
    let hastings = std_normal_log_density(&zbar) - std_normal_log_density(&zbar_new);
    acceptance(limit_log_ratio(mix, star, z, z_new) + hastings)
}

fn rw_step<R: Rng + ?Sized, F: Fn(&Vector) -> f64>(z: &Vector, scale: f64, log_target: F, rng: &mut R) -> (Vector, bool) {
    let prop = z + Vector::from_fn(z.len(), |_, _| rng.sample::<f64, _>(StandardNormal)) * scale;
    let u: f64 = rng.random();
    let log_ratio = log_target(&prop) - log_target(z);
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        (prop, true)
    } else {
        (z.clone(), false)
    }
}

/// One `K^Δ` step from `z̃` with an isotropic Gaussian proposal.
pub fn low_noise_step<M: StateSpaceModel, R: Rng + ?Sized>(
    z: &Vector,
    mix: &PredictiveMixture<M>,
    par: &KernelParametrization,
    obs: &LinearObservation,
    proposal_scale: f64,
    rng: &mut R,
) -> Result<(Vector, bool)> {
    if obs.delta == 0.0 {
        return Err(Error::Contract("low-noise kernel needs Δ > 0; use the degenerate kernel".into()));
    }
    check_len("z", obs.dim_x(), z.len())?;
    Ok(rw_step(z, proposal_scale, |v| low_noise_log_target(mix, par, v), rng))
}

/// One `K^⋆` step from `z` with an isotropic Gaussian proposal.
pub fn degenerate_step<M: StateSpaceModel, R: Rng + ?Sized>(
    z: &Vector,
    mix: &PredictiveMixture<M>,
    par: &KernelParametrization,
    proposal_scale: f64,
    rng: &mut R,
) -> Result<(Vector, bool)> {
    check_len("z", par.dim(), z.len())?;
    Ok(rw_step(z, proposal_scale, |v| degenerate_log_target(mix, par, v), rng))
}

/// Tune the `K^⋆` proposal scale towards acceptance `target` with the same
/// windowed stochastic approximation as the manifold kernel.
pub fn tune_degenerate_scale<M: StateSpaceModel, R: Rng + ?Sized>(
    z0: &Vector,
    mix: &PredictiveMixture<M>,
    par: &KernelParametrization,
    initial_scale: f64,
    target: f64,
    pilot_steps: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut z = z0.clone();
    let mut log_scale = initial_scale.ln();
    let window = crate::kernel::ADAPT_WINDOW;
    for t in 1..=pilot_steps.div_ceil(window) {
        let mut acc = 0;
        for _ in 0..window {
            let (next, a) = degenerate_step(&z, mix, par, log_scale.exp(), rng)?;
            z = next;
            acc += a as usize;
        }
        log_scale += (t as f64).powf(-0.6) * (acc as f64 / window as f64 - target);
    }
    Ok(log_scale.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub delta: f64,
    pub acceptance_delta: f64,
    pub acceptance_limit: f64,
    pub gap: f64,
    /// `‖V^Δ - blockdiag(V^⋆, I)‖_F` after alignment.
    pub basis_distance: f64,
}

pub const DEFAULT_DELTA_GRID: [f64; 8] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// `K^Δ` acceptance probability at fixed `(z̃, z̃')` along `delta_grid`
/// against its `Δ → 0` limit.
pub fn convergence_probe<M: StateSpaceModel>(
    z: &Vector,
    z_new: &Vector,
    mix: &PredictiveMixture<M>,
    a: &Matrix,
    y: &Vector,
    delta_grid: &[f64],
) -> Result<Vec<ProbeRow>> {
    if delta_grid.is_empty() || delta_grid.iter().any(|d| !(*d > 0.0)) || delta_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig("delta grid must be positive and strictly decreasing".into()));
    }
    let star = degenerate_parametrization(&LinearObservation::new(a.clone(), y.clone(), 0.0)?)?;
    check_len("z", a.ncols(), z.len())?;
    check_len("z'", a.ncols(), z_new.len())?;
    let acceptance_limit = limit_acceptance(mix, &star, z, z_new);
    let target = limit_basis(&star, a.nrows());
    delta_grid
        .iter()
        .map(|&delta| {
            let par = build_parametrization(&LinearObservation::new(a.clone(), y.clone(), delta)?)?;
            let acceptance_delta = low_noise_acceptance(mix, &par, z, z_new);
            Ok(ProbeRow {
                delta,
                acceptance_delta,
                acceptance_limit,
                gap: (acceptance_delta - acceptance_limit).abs(),
                basis_distance: (&par.basis - &target).norm(),
            })
        })
        .collect()
}

/// Whether the gaps are non-increasing over the rows with `Δ < below`.
pub fn tail_is_monotone(rows: &[ProbeRow], below: f64) -> bool {
    let tail: Vec<f64> = rows.iter().filter(|r| r.delta < below).map(|r| r.gap).collect();
    tail.windows(2).all(|w| w[1] <= w[0])
}

/// CSV with header `delta,acceptance_delta,acceptance_limit,gap,basis_distance`.
pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut s = String::from("delta,acceptance_delta,acceptance_limit,gap,basis_distance\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.delta, r.acceptance_delta, r.acceptance_limit, r.gap, r.basis_distance
        );
    }
    s
}
