//! Reversible constrained random-walk Metropolis on a constraint manifold.
//!
//! One step from `x ∈ M`:
//!
//! 1. tangent frame `U_x` from the QR factorization of `∂c(x)^T`;
//! 2. tangent move `v = ρ U_x^T Z` with `Z ~ N(0, I)`;
//! 3. Newton projection `y = x + v + ∂c(x)^T a` back onto `M`;
//! 4. reverse split of `x - y` into `v' ∈ T_y` and `w' ∈ T_y^⊥`;
//! 5. reverse check: the same Newton solve from `(y, v')` must land on `x`;
//! 6. Metropolis–Hastings on `π(y) q(v'|y) / (π(x) q(v|x))`.
//!
//! Targets are log densities with respect to the Riemannian measure, so a
//! filtering target includes the log Gram weight.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::ParticleCloud;
use crate::manifold::{ConstraintSystem, NewtonConfig, TangentFrame};
use crate::{Error, Result, Vector};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    /// Proposal scale ρ.
    pub rho: f64,
    pub newton: NewtonConfig,
    pub target_acceptance: f64,
    /// `‖x_recovered - x‖_∞` allowed by the reverse check.
    pub reverse_tolerance: f64,
}

impl KernelConfig {
    pub fn new(rho: f64) -> Self {
        Self {
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_acceptance
            )));
        }
        if !(self.newton.tolerance > 0.0) || self.newton.max_iterations == 0 {
            return Err(Error::InvalidConfig("Newton tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            newton: NewtonConfig::default(),
            target_acceptance: 0.234,
            reverse_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectionReason {
    None,
    ProjectionFailed,
    ReverseCheckFailed,
    MhRejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelStepRecord {
    pub accepted: bool,
    pub rejection_reason: RejectionReason,
    /// Log acceptance ratio; `-inf` when the move never reached the MH test.
    pub log_ratio: f64,
}

impl KernelStepRecord {
    fn rejected(reason: RejectionReason, log_ratio: f64) -> Self {
        Self {
            accepted: false,
            rejection_reason: reason,
            log_ratio,
        }
    }
}

/// Per-outcome step counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepTally {
    pub accepted: usize,
    pub projection_failed: usize,
    pub reverse_check_failed: usize,
    pub mh_rejected: usize,
}

impl StepTally {
    pub fn record(&mut self, rec: &KernelStepRecord) {
        match rec.rejection_reason {
            RejectionReason::None => self.accepted += 1,
            RejectionReason::ProjectionFailed => self.projection_failed += 1,
            RejectionReason::ReverseCheckFailed => self.reverse_check_failed += 1,
            RejectionReason::MhRejected => self.mh_rejected += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.accepted + self.projection_failed + self.reverse_check_failed + self.mh_rejected
    }

    /// Fraction of accepted moves; projection and reverse-check failures
    /// count as rejections. Zero for an empty tally.
    pub fn acceptance_rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.accepted as f64 / n as f64,
        }
    }

    pub fn merge(&mut self, other: &StepTally) {
        self.accepted += other.accepted;
        self.projection_failed += other.projection_failed;
        self.reverse_check_failed += other.reverse_check_failed;
        self.mh_rejected += other.mh_rejected;
    }
}

/// Current chain position with its cached log target and tangent frame.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub x: Vector,
    pub log_target: f64,
    pub frame: TangentFrame,
}

impl ChainState {
    /// Checks that `x` is on the manifold to the Newton tolerance.
    pub fn new(sys: &ConstraintSystem, x: Vector, log_target: f64, cfg: &KernelConfig) -> Result<Self> {
        let residual = sys.residual_norm(&x)?;
        if !(residual <= cfg.newton.tolerance) {
            return Err(Error::OffManifold {
                residual,
                tolerance: cfg.newton.tolerance,
            });
        }
        let frame = sys.tangent_frame(&x)?;
        Ok(Self { x, log_target, frame })
    }
}

/// A projected, reverse-checked proposal.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub point: Vector,
    pub frame: TangentFrame,
    /// `Z` with `v = ρ U_x^T Z`.
    pub forward_coords: Vector,
    /// `Z' = U_y v' / ρ` for the reverse move.
    pub reverse_coords: Vector,
}

#[derive(Debug, Clone)]
pub enum ProposalOutcome {
    ProjectionFailed,
    ReverseCheckFailed,
    Proposed(Box<Proposal>),
}

/// Log density of the tangent move `v = ρ U^T Z`, evaluated as
/// `N(0, ρ² I)` on its tangent coordinates `ρ Z`.
pub fn tangent_proposal_log_density(coords: &Vector, rho: f64) -> f64 {
    let r = coords.len() as f64;
    -0.5 * coords.norm_squared() - 0.5 * r * (LOG_2PI + 2.0 * rho.ln())
}

/// Deterministic part of a step: move along `Z`, project, reverse-check.
pub fn propose(
    sys: &ConstraintSystem,
    frame: &TangentFrame,
    coords: &Vector,
    cfg: &KernelConfig,
) -> Result<ProposalOutcome> {
    let x = &frame.base_point;
    let v = frame.embed(coords) * cfg.rho;
    let Some(y) = sys.project_along(x, &v, &frame.normal_basis, &cfg.newton) else {
        return Ok(ProposalOutcome::ProjectionFailed);
    };
    let frame_y = match sys.tangent_frame(&y) {
        Ok(f) => f,
        Err(Error::SingularJacobian { .. }) => return Ok(ProposalOutcome::ProjectionFailed),
        Err(e) => return Err(e),
    };
    let (v_rev, _) = frame_y.split_tangent_normal(&(x - &y))?;
    let recovered = sys.project_along(&y, &v_rev, &frame_y.normal_basis, &cfg.newton);
    match recovered {
        Some(back) if (&back - x).amax() <= cfg.reverse_tolerance => {}
        _ => return Ok(ProposalOutcome::ReverseCheckFailed),
    }
    let reverse_coords = frame_y.tangent_coordinates(&v_rev) / cfg.rho;
    Ok(ProposalOutcome::Proposed(Box::new(Proposal {
        point: y,
        frame: frame_y,
        forward_coords: coords.clone(),
        reverse_coords,
    })))
}

/// Log MH ratio of an accepted-for-testing proposal.
pub fn proposal_log_ratio(current_log_target: f64, proposed_log_target: f64, p: &Proposal, rho: f64) -> f64 {
    proposed_log_target - current_log_target + tangent_proposal_log_density(&p.reverse_coords, rho)
        - tangent_proposal_log_density(&p.forward_coords, rho)
}

/// One kernel step from a cached chain state. `target` is called at most
/// once, on the proposed point.
pub fn step_state<R, F>(
    state: &mut ChainState,
    target: &mut F,
    sys: &ConstraintSystem,
    cfg: &KernelConfig,
    rng: &mut R,
) -> Result<KernelStepRecord>
where
    R: Rng + ?Sized,
    F: FnMut(&Vector) -> f64,
{
    let r = state.frame.tangent_dim();
    let coords = Vector::from_fn(r, |_, _| rng.sample(StandardNormal));
    let proposal = match propose(sys, &state.frame, &coords, cfg)? {
        ProposalOutcome::ProjectionFailed => {
            return Ok(KernelStepRecord::rejected(RejectionReason::ProjectionFailed, f64::NEG_INFINITY))
        }
        ProposalOutcome::ReverseCheckFailed => {
            return Ok(KernelStepRecord::rejected(RejectionReason::ReverseCheckFailed, f64::NEG_INFINITY))
        }
        ProposalOutcome::Proposed(p) => p,
    };
    let proposed_log_target = target(&proposal.point);
    let log_ratio = proposal_log_ratio(state.log_target, proposed_log_target, &proposal, cfg.rho);
    let u: f64 = rng.random();
    // NaN ratios fall through to rejection
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        let p = *proposal;
        state.x = p.point;
        state.frame = p.frame;
        state.log_target = proposed_log_target;
        Ok(KernelStepRecord {
            accepted: true,
            rejection_reason: RejectionReason::None,
            log_ratio,
        })
    } else {
        Ok(KernelStepRecord::rejected(RejectionReason::MhRejected, log_ratio))
    }
}

/// One kernel step from `x` targeting `target_log_density`.
pub fn kernel_step<R, F>(
    target_log_density: &mut F,
    sys: &ConstraintSystem,
    x: &Vector,
    cfg: &KernelConfig,
    rng: &mut R,
) -> Result<(Vector, KernelStepRecord)>
where
    R: Rng + ?Sized,
    F: FnMut(&Vector) -> f64,
{
    let lt = target_log_density(x);
    let mut state = ChainState::new(sys, x.clone(), lt, cfg)?;
    let rec = step_state(&mut state, target_log_density, sys, cfg, rng)?;
    Ok((state.x, rec))
}

/// Run the kernel for `n_steps` steps from `x0`, keeping every state.
pub fn run_chain<R, F>(
    target_log_density: &mut F,
    sys: &ConstraintSystem,
    x0: &Vector,
    n_steps: usize,
    cfg: &KernelConfig,
    rng: &mut R,
) -> Result<(ParticleCloud, f64)>
where
    R: Rng + ?Sized,
    F: FnMut(&Vector) -> f64,
{
    let start = std::time::Instant::now();
    let lt = target_log_density(x0);
    let mut state = ChainState::new(sys, x0.clone(), lt, cfg)?;
    let mut states = crate::Matrix::zeros(sys.dim_x(), n_steps);
    let mut tally = StepTally::default();
    for i in 0..n_steps {
        let rec = step_state(&mut state, target_log_density, sys, cfg, rng)?;
        tally.record(&rec);
        states.set_column(i, &state.x);
    }
    let rate = tally.acceptance_rate();
    let cloud = ParticleCloud::new(0, states, rate, start.elapsed().as_secs_f64());
    Ok((cloud, rate))
}

/// Result of a pilot adaptation.
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub rho: f64,
    /// Chain position at the end of the pilot.
    pub state: ChainState,
    /// Acceptance over each pilot window.
    pub window_acceptance: Vec<f64>,
}

pub const ADAPT_WINDOW: usize = 100;

/// Stochastic-approximation tuning of ρ over a pilot run:
/// `log ρ ← log ρ + t^{-0.6} (α̂_t - α*)` after each window of
/// [`ADAPT_WINDOW`] steps. The returned ρ is meant to be frozen for any
/// subsequent sampling.
pub fn adapt_rho<R, F>(
    cfg: &KernelConfig,
    pilot_target: &mut F,
    sys: &ConstraintSystem,
    start: ChainState,
    pilot_steps: usize,
    rng: &mut R,
) -> Result<AdaptOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&Vector) -> f64,
{
    cfg.validate()?;
    let mut state = start;
    let mut log_rho = cfg.rho.ln();
    let mut window_acceptance = Vec::new();
    let windows = pilot_steps.div_ceil(ADAPT_WINDOW);
    for t in 1..=windows {
        let step_cfg = KernelConfig {
            rho: log_rho.exp(),
            ..*cfg
        };
        let mut tally = StepTally::default();
        for _ in 0..ADAPT_WINDOW {
            let rec = step_state(&mut state, pilot_target, sys, &step_cfg, rng)?;
            tally.record(&rec);
        }
        let rate = tally.acceptance_rate();
        window_acceptance.push(rate);
        log_rho += (t as f64).powf(-0.6) * (rate - cfg.target_acceptance);
    }
    Ok(AdaptOutcome {
        rho: log_rho.exp(),
        state,
        window_acceptance,
    })
}
