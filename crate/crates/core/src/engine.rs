//! Sequential MCMC filter.
//!
//! At time `k` the sampler targets the auxiliary density
//! `π̂_k(x, i_{1:s}) ∝ g_k(x) Σ_{j ∈ i_{1:s}} f_k(x_{k-1}^j, x)` with a
//! Metropolis-within-Gibbs sweep: one constrained RWM move on `x` given the
//! index set, then `index_moves_per_sweep` single-site moves on the index
//! set given `x`. Time 1 is the special case of a single predecessor `x_0`.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diagnostics::{ess_summary, EssSummary};
use crate::kernel::{adapt_rho, step_state, ChainState, KernelConfig, StepTally};
use crate::linalg::log_sum_exp;
use crate::manifold::{ConstraintSystem, NewtonConfig, Pullback};
use crate::models::StateSpaceModel;
use crate::rng::{stream, ADAPT_CHAIN, INIT_CHAIN};
use crate::{Error, Matrix, Result, Vector};

/// States retained at one observation time, stored as `d_x × N` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub time_index: usize,
    states: Matrix,
    pub acceptance_rate: f64,
    /// Median per-coordinate ESS of the retained chain.
    pub ess: f64,
    pub ess_min: f64,
    pub wall_time: f64,
}

impl ParticleCloud {
    pub fn new(time_index: usize, states: Matrix, acceptance_rate: f64, wall_time: f64) -> Self {
        let EssSummary { median, min, .. } = ess_summary(&states);
        Self {
            time_index,
            states,
            acceptance_rate,
            ess: median,
            ess_min: min,
            wall_time,
        }
    }

    /// Number of particles.
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn particle(&self, i: usize) -> Vector {
        self.states.column(i).into_owned()
    }

    pub fn states(&self) -> &Matrix {
        &self.states
    }

    pub fn last(&self) -> Option<Vector> {
        (!self.is_empty()).then(|| self.particle(self.len() - 1))
    }

    pub fn mean(&self) -> Vector {
        self.states.column_mean()
    }

    /// Per-coordinate standard deviation with divisor `N - 1`.
    pub fn std(&self) -> Vector {
        let n = self.len();
        let mean = self.mean();
        let mut acc = Vector::zeros(self.dim());
        for col in self.states.column_iter() {
            acc += (col - &mean).map(|v| v * v);
        }
        acc.map(|v| (v / (n.max(2) - 1) as f64).sqrt())
    }
}

/// `(1/N) Σ φ(x^i)`.
pub fn estimate<F: Fn(&Vector) -> f64>(cloud: &ParticleCloud, phi: F) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::Contract("estimate over an empty cloud".into()));
    }
    let sum: f64 = (0..cloud.len()).map(|i| phi(&cloud.particle(i))).sum();
    Ok(sum / cloud.len() as f64)
}

/// Ordered set of `s` distinct particle indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() || indices.len() > n {
            return Err(Error::Contract(format!("index set of size {} over {n} particles", indices.len())));
        }
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("index {i} repeated or out of range {n}")));
            }
        }
        Ok(Self { indices })
    }

    /// `{0, .., s-1}`.
    pub fn first(s: usize) -> Self {
        Self {
            indices: (0..s).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }

    /// Uniform single-site replacement proposal: a uniformly chosen
    /// position gets a uniformly chosen index outside the set.
    /// `None` when the set is already full.
    pub fn propose_replacement<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<(usize, usize)> {
        let s = self.len();
        if s >= n {
            return None;
        }
        let pos = rng.random_range(0..s);
        let mut rank = rng.random_range(0..n - s);
        let mut sorted = self.indices.clone();
        sorted.sort_unstable();
        for &taken in &sorted {
            if taken <= rank {
                rank += 1;
            } else {
                break;
            }
        }
        Some((pos, rank))
    }

    fn replace(&mut self, pos: usize, idx: usize) {
        self.indices[pos] = idx;
    }
}

/// Pilot-run tuning of ρ before burn-in at every observation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationConfig {
    pub pilot_steps: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self { pilot_steps: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmcmcConfig {
    /// `N`: retained chain length per observation time.
    pub n_particles: usize,
    /// `s`: size of the index set.
    pub subset_size: usize,
    /// Discarded steps per observation time; `None` means `N / 10`.
    pub burn_in: Option<usize>,
    pub kernel: KernelConfig,
    pub index_moves_per_sweep: usize,
    pub adaptation: Option<AdaptationConfig>,
    /// Reuse `log f` values of the current index set across moves.
    pub cache_index_densities: bool,
}

impl SmcmcConfig {
    pub fn new(n_particles: usize, subset_size: usize, rho: f64) -> Self {
        Self {
            n_particles,
            subset_size,
            burn_in: None,
            kernel: KernelConfig::new(rho),
            index_moves_per_sweep: 1,
            adaptation: None,
            cache_index_densities: true,
        }
    }

    pub fn burn_in_steps(&self) -> usize {
        self.burn_in.unwrap_or(self.n_particles / 10)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.n_particles == 0 {
            return Err(Error::InvalidConfig("n_particles must be positive".into()));
        }
        if self.subset_size == 0 || self.subset_size > self.n_particles {
            return Err(Error::InvalidConfig(format!(
                "subset size s={} must lie in 1..=N={}",
                self.subset_size, self.n_particles
            )));
        }
        if self.index_moves_per_sweep == 0 {
            return Err(Error::InvalidConfig("index_moves_per_sweep must be at least 1".into()));
        }
        if let Some(a) = self.adaptation {
            if a.pilot_steps < 500 {
                return Err(Error::InvalidConfig(format!(
                    "adaptation needs at least 500 pilot steps, got {}",
                    a.pilot_steps
                )));
            }
        }
        Ok(())
    }
}

/// Per-time output of [`run_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub cloud: ParticleCloud,
    /// Outcomes over the retained steps.
    pub tally: StepTally,
    /// Proposal scale used for the retained steps.
    pub rho: f64,
    pub index_acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub steps: Vec<FilterStep>,
    pub wall_time: f64,
}

impl FilterRun {
    pub fn clouds(&self) -> impl Iterator<Item = &ParticleCloud> {
        self.steps.iter().map(|s| &s.cloud)
    }
}

/// Constraint at time `k` in sampler coordinates (`x = P v` when the model
/// is preconditioned).
pub fn sampler_constraint<M: StateSpaceModel>(model: &M, time: usize, y: &Vector) -> Result<ConstraintSystem> {
    let h = model.observation_map(time);
    match model.preconditioner() {
        None => ConstraintSystem::new(h, y.clone()),
        Some(p) => ConstraintSystem::new(std::sync::Arc::new(Pullback::new(h, p.clone())?), y.clone()),
    }
}

/// `log g_k(x) + log Σ_{j ∈ idx} f_k(x_{k-1}^j, x)`, evaluated directly.
pub fn aux_target_log_density<M: StateSpaceModel>(
    model: &M,
    time: usize,
    sys: &ConstraintSystem,
    prev: &ParticleCloud,
    idx: &IndexSet,
    x: &Vector,
) -> Result<f64> {
    let log_g = sys.log_gram_weight(x)?;
    let succ = model.prepare_successor(time, x);
    let terms = idx
        .indices()
        .iter()
        .map(|&j| Ok(model.transition_log_density(&model.prepare_predecessor(time, &prev.particle(j))?, &succ)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_g + log_sum_exp(&terms))
}

/// `moves` single-site MH moves on the index set with `x` held fixed,
/// evaluating every mixture sum from scratch. Returns the new set and the
/// number of accepted moves.
pub fn index_mh_step<M: StateSpaceModel, R: Rng + ?Sized>(
    model: &M,
    time: usize,
    prev: &ParticleCloud,
    x: &Vector,
    idx: &IndexSet,
    moves: usize,
    rng: &mut R,
) -> Result<(IndexSet, usize)> {
    let succ = model.prepare_successor(time, x);
    let lf = |j: usize| -> Result<f64> {
        Ok(model.transition_log_density(&model.prepare_predecessor(time, &prev.particle(j))?, &succ))
    };
    let mut current = idx.clone();
    let mut accepted = 0;
    for _ in 0..moves {
        let Some((pos, j)) = current.propose_replacement(prev.len(), rng) else {
            break;
        };
        let mut proposed = current.clone();
        proposed.replace(pos, j);
        let now = current.indices().iter().map(|&i| lf(i)).collect::<Result<Vec<_>>>()?;
        let then = proposed.indices().iter().map(|&i| lf(i)).collect::<Result<Vec<_>>>()?;
        if mh_accept(log_sum_exp(&then) - log_sum_exp(&now), rng) {
            current = proposed;
            accepted += 1;
        }
    }
    Ok((current, accepted))
}

fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    log_ratio >= 0.0 || u.ln() < log_ratio
}

/// Newton projection of `seed` onto the manifold along the normals at the
/// seed. On failure, retries from Gaussian perturbations of the seed at
/// scales `0.1, 1, 10` times `max(‖seed‖_∞, 1)`, ten attempts each.
pub fn init_state<R: Rng + ?Sized>(
    sys: &ConstraintSystem,
    seed_point: &Vector,
    newton: &NewtonConfig,
    time: usize,
    rng: &mut R,
) -> Result<Vector> {
    let zero = Vector::zeros(sys.dim_x());
    let attempt = |p: &Vector| -> Result<Option<Vector>> {
        let x = sys.project_to_manifold(p, &zero, newton)?;
        Ok(x.filter(|x| sys.tangent_frame(x).is_ok()))
    };
    if let Some(x) = attempt(seed_point)? {
        return Ok(x);
    }
    let scale = crate::linalg::inf_norm(seed_point).max(1.0);
    for factor in [0.1, 1.0, 10.0] {
        for _ in 0..10 {
            let noise = Vector::from_fn(sys.dim_x(), |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Some(x) = attempt(&(seed_point + noise * (factor * scale)))? {
                return Ok(x);
            }
        }
    }
    Err(Error::Initialization {
        time,
        reason: format!(
            "Newton projection failed from the seed and 30 perturbations (seed residual {:.3e})",
            sys.residual_norm(seed_point)?
        ),
    })
}

/// State of the composed chain at one observation time, in sampler
/// coordinates, with the cached mixture terms of the current index set.
struct AuxChain<'a, M: StateSpaceModel> {
    model: &'a M,
    time: usize,
    sys: &'a ConstraintSystem,
    transform: Option<&'a Matrix>,
    preds: &'a [M::Predecessor],
    idx: IndexSet,
    state: ChainState,
    succ: M::Successor,
    log_g: f64,
    log_f: Vec<f64>,
    cached: bool,
}

struct Evaluation<S> {
    succ: S,
    log_g: f64,
    log_f: Vec<f64>,
}

impl<S> Evaluation<S> {
    fn log_target(&self) -> f64 {
        self.log_g + log_sum_exp(&self.log_f)
    }
}

fn evaluate<M: StateSpaceModel>(
    model: &M,
    time: usize,
    sys: &ConstraintSystem,
    transform: Option<&Matrix>,
    preds: &[M::Predecessor],
    idx: &IndexSet,
    v: &Vector,
) -> Evaluation<M::Successor> {
    let succ = match transform {
        Some(p) => model.prepare_successor(time, &(p * v)),
        None => model.prepare_successor(time, v),
    };
    let log_g = sys.log_gram_weight(v).unwrap_or(f64::NEG_INFINITY);
    let log_f = idx.indices().iter().map(|&j| model.transition_log_density(&preds[j], &succ)).collect();
    Evaluation { succ, log_g, log_f }
}

impl<'a, M: StateSpaceModel> AuxChain<'a, M> {
    fn new(
        model: &'a M,
        time: usize,
        sys: &'a ConstraintSystem,
        preds: &'a [M::Predecessor],
        idx: IndexSet,
        v: Vector,
        cfg: &SmcmcConfig,
    ) -> Result<Self> {
        let transform = model.preconditioner();
        let e = evaluate(model, time, sys, transform, preds, &idx, &v);
        let state = ChainState::new(sys, v, e.log_target(), &cfg.kernel)?;
        Ok(Self {
            model,
            time,
            sys,
            transform,
            preds,
            idx,
            state,
            succ: e.succ,
            log_g: e.log_g,
            log_f: e.log_f,
            cached: cfg.cache_index_densities,
        })
    }

    fn eval(&self, v: &Vector) -> Evaluation<M::Successor> {
        evaluate(self.model, self.time, self.sys, self.transform, self.preds, &self.idx, v)
    }

    fn refresh(&mut self) {
        let e = self.eval(&self.state.x);
        self.state.log_target = e.log_target();
        self.succ = e.succ;
        self.log_g = e.log_g;
        self.log_f = e.log_f;
    }

    fn state_x(&self) -> Vector {
        match self.transform {
            Some(p) => p * &self.state.x,
            None => self.state.x.clone(),
        }
    }

    /// Manifold move on `x | idx`, then index moves on `idx | x`.
    fn sweep<R: Rng + ?Sized>(&mut self, kernel: &KernelConfig, moves: usize, rng: &mut R) -> Result<(crate::kernel::KernelStepRecord, usize)> {
        if !self.cached {
            self.refresh();
        }
        let (model, time, sys, transform, preds, idx) = (self.model, self.time, self.sys, self.transform, self.preds, &self.idx);
        let mut proposed: Option<Evaluation<M::Successor>> = None;
        let mut target = |v: &Vector| {
            let e = evaluate(model, time, sys, transform, preds, idx, v);
            let lt = e.log_target();
            proposed = Some(e);
            lt
        };
        let rec = step_state(&mut self.state, &mut target, sys, kernel, rng)?;
        if rec.accepted {
            let e = proposed.expect("accepted move evaluated its target");
            self.succ = e.succ;
            self.log_g = e.log_g;
            self.log_f = e.log_f;
        }
        let mut accepted = 0;
        let n = self.preds.len();
        for _ in 0..moves {
            let Some((pos, j)) = self.idx.propose_replacement(n, rng) else {
                break;
            };
            let mut log_f_new = if self.cached {
                self.log_f.clone()
            } else {
                self.idx.indices().iter().map(|&i| model.transition_log_density(&preds[i], &self.succ)).collect()
            };
            let log_f_now = if self.cached { self.log_f.clone() } else { log_f_new.clone() };
            log_f_new[pos] = model.transition_log_density(&preds[j], &self.succ);
            if mh_accept(log_sum_exp(&log_f_new) - log_sum_exp(&log_f_now), rng) {
                self.idx.replace(pos, j);
                self.log_f = log_f_new;
                self.state.log_target = self.log_g + log_sum_exp(&self.log_f);
                accepted += 1;
            }
        }
        Ok((rec, accepted))
    }
}

/// Run the filter over `observations` (`y_1..y_n`).
///
/// Time `k` draws its proposals from the stream `(seed, k, 0)`; the
/// initialization ladder and the ρ pilot use reserved chain ids.
pub fn run_filter<M: StateSpaceModel>(
    model: &M,
    observations: &[Vector],
    cfg: &SmcmcConfig,
    seed: u64,
) -> Result<FilterRun> {
    run_filter_with(model, observations, cfg, seed, |_| {})
}

/// [`run_filter`] with a callback invoked after each observation time.
pub fn run_filter_with<M: StateSpaceModel, C: FnMut(&FilterStep)>(
    model: &M,
    observations: &[Vector],
    cfg: &SmcmcConfig,
    seed: u64,
    mut on_step: C,
) -> Result<FilterRun> {
    cfg.validate()?;
    if observations.is_empty() {
        return Err(Error::InvalidConfig("no observations".into()));
    }
    let start = Instant::now();
    let n = cfg.n_particles;
    let burn_in = cfg.burn_in_steps();
    let mut kernel = cfg.kernel;
    let mut steps: Vec<FilterStep> = Vec::with_capacity(observations.len());
    let x0 = model.initial_state();
    for (i, y) in observations.iter().enumerate() {
        let k = i + 1;
        let step_start = Instant::now();
        crate::error::check_len("observation", model.dim_y(), y.len())?;
        let time = u32::try_from(k).map_err(|_| Error::InvalidConfig("too many observations".into()))?;
        let sys = sampler_constraint(model, k, y)?;

        let (preds, seed_x, s) = match steps.last() {
            None => (vec![model.prepare_predecessor(k, &x0)?], x0.clone(), 1),
            Some(prev) => {
                let cloud = &prev.cloud;
                let preds = (0..cloud.len())
                    .map(|j| model.prepare_predecessor(k, &cloud.particle(j)))
                    .collect::<Result<Vec<_>>>()?;
                let last = cloud.last().expect("clouds are nonempty");
                (preds, last, cfg.subset_size)
            }
        };
        let seed_v = match model.preconditioner() {
            None => seed_x,
            Some(p) => p
                .solve_lower_triangular(&seed_x)
                .ok_or_else(|| Error::NotPositiveDefinite("preconditioner".into()))?,
        };
        let mut init_rng = stream(seed, time, INIT_CHAIN);
        let v0 = init_state(&sys, &seed_v, &kernel.newton, k, &mut init_rng)?;
        let mut chain = AuxChain::new(model, k, &sys, &preds, IndexSet::first(s), v0, cfg)?;

        if let Some(a) = cfg.adaptation {
            let mut pilot_rng = stream(seed, time, ADAPT_CHAIN);
            let (model_ref, sys_ref, transform, preds_ref, idx) = (model, &sys, chain.transform, &preds[..], chain.idx.clone());
            let mut target = |v: &Vector| evaluate(model_ref, k, sys_ref, transform, preds_ref, &idx, v).log_target();
            let out = adapt_rho(&kernel, &mut target, &sys, chain.state.clone(), a.pilot_steps, &mut pilot_rng)?;
            kernel.rho = out.rho;
            chain.state = out.state;
            chain.refresh();
        }

        let mut rng = stream(seed, time, 0);
        let mut states = Matrix::zeros(model.dim_x(), n);
        let mut tally = StepTally::default();
        let mut index_accepted = 0;
        for t in 0..burn_in + n {
            let (rec, acc) = chain.sweep(&kernel, cfg.index_moves_per_sweep, &mut rng)?;
            if t >= burn_in {
                tally.record(&rec);
                index_accepted += acc;
                states.set_column(t - burn_in, &chain.state_x());
            }
        }
        let index_moves = if s < preds.len() { n * cfg.index_moves_per_sweep } else { 0 };
        let step = FilterStep {
            cloud: ParticleCloud::new(k, states, tally.acceptance_rate(), step_start.elapsed().as_secs_f64()),
            tally,
            rho: kernel.rho,
            index_acceptance_rate: if index_moves == 0 {
                0.0
            } else {
                index_accepted as f64 / index_moves as f64
            },
        };
        on_step(&step);
        steps.push(step);
    }
    Ok(FilterRun {
        steps,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
