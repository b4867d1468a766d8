//! The `simulate`, `filter`, `sweep-s` and `probe-delta` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use smcmc::diagnostics::{l2_error, median};
use smcmc::engine::{run_filter_with, FilterRun, FilterStep};
use smcmc::linear_noise::{
    convergence_probe, degenerate_acceptance, degenerate_parametrization, degenerate_step, factorized_limit_acceptance,
    limit_acceptance, probe_csv, tail_is_monotone, tune_degenerate_scale, LinearObservation, PredictiveMixture, ProbeRow,
};
use smcmc::models::{simulate as simulate_model, StateSpaceModel};
use smcmc::oracles::{kalman_filter, GaussianBelief};
use smcmc::rng::{replicate_seed, stream};
use smcmc::{Vector, Matrix};

use crate::config::{AnyModel, ConfigSource, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{self, num, opt, SCHEMA_VERSION};

macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            AnyModel::Linear($m) => $body,
            AnyModel::Fhn($m) => $body,
            AnyModel::Ks($m) => $body,
        }
    };
}

/// Gaps are required to be monotone below this Δ.
pub const PROBE_MONOTONE_BELOW: f64 = 1e-3;

/// A validated command invocation.
#[derive(Debug, Clone)]
pub struct Invocation {
    /// Configuration with `--smoke` overrides already applied.
    pub config: RunConfig,
    pub source: ConfigSource,
    pub seed: u64,
    pub out: PathBuf,
    pub smoke: bool,
    pub workers: usize,
}

impl Invocation {
    pub fn new(config_spec: &str, seed: u64, out: impl Into<PathBuf>, smoke: bool, workers: usize) -> Result<Self> {
        let (base, source) = crate::config::load(config_spec)?;
        Self::from_config(base, source, seed, out, smoke, workers)
    }

    pub fn from_config(
        base: RunConfig,
        source: ConfigSource,
        seed: u64,
        out: impl Into<PathBuf>,
        smoke: bool,
        workers: usize,
    ) -> Result<Self> {
        let config = if smoke { base.smoke_variant()? } else { base };
        config.validate()?;
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        Ok(Self {
            config,
            source,
            seed,
            out: out.into(),
            smoke,
            workers,
        })
    }

    fn manifest_base(&self, command: &str) -> serde_json::Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config_source": self.source.describe(),
            "smoke": self.smoke,
            "seed": self.seed,
            "config": self.config,
        })
    }

    /// Write the resolved config next to the outputs so the run can be
    /// repeated with `--config <out>/config.toml`.
    fn write_config(&self) -> Result<()> {
        output::write_text(&self.out.join("config.toml"), &self.config.to_toml()?)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub states: Vec<Vector>,
    pub observations: Vec<Vector>,
}

pub fn simulate(inv: &Invocation) -> Result<SimulateOutcome> {
    let model = inv.config.model.build()?;
    let n = inv.config.data.n_observations;
    let traj = with_model!(&model, m => simulate_model(m, n, inv.seed))?;
    output::create_dir(&inv.out)?;
    inv.write_config()?;
    output::write_series(&inv.out.join("trajectory.csv"), "x", 0, &traj.states)?;
    output::write_series(&inv.out.join("observations.csv"), "y", 1, &traj.observations)?;
    let mut manifest = inv.manifest_base("simulate");
    manifest["data_seed"] = json!(inv.seed);
    manifest["files"] = json!(["config.toml", "trajectory.csv", "observations.csv"]);
    output::write_json(&inv.out.join("manifest.json"), &manifest)?;
    Ok(SimulateOutcome {
        states: traj.states,
        observations: traj.observations,
    })
}

// ------------------------------------------------------------------ filter

/// One row of `diagnostics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub k: usize,
    pub acceptance_rate: f64,
    pub ess_median: f64,
    pub ess_min: f64,
    pub rho: f64,
    pub index_acceptance_rate: f64,
    pub l2_mean_error: Option<f64>,
    pub l2_std_error: Option<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub const DIAGNOSTICS_HEADER: [&str; 8] = [
    "k",
    "acceptance_rate",
    "ess_median",
    "ess_min",
    "rho",
    "index_acceptance_rate",
    "l2_mean_error",
    "l2_std_error",
];

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub run: FilterRun,
    pub observations: Vec<Vector>,
    /// Exact filtering distributions when the model admits a Kalman filter.
    pub reference: Option<Vec<GaussianBelief>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Kalman beliefs for linear Gaussian models with linear observations.
pub fn kalman_reference(model: &AnyModel, observations: &[Vector]) -> Result<Option<Vec<GaussianBelief>>> {
    match model {
        AnyModel::Linear(m) if m.observation_matrix().is_some() => Ok(Some(kalman_filter(m, observations, None)?)),
        _ => Ok(None),
    }
}

fn step_diagnostics(step: &FilterStep, reference: Option<&GaussianBelief>) -> Result<StepDiagnostics> {
    let c = &step.cloud;
    let (l2_mean_error, l2_std_error) = match reference {
        Some(b) => (Some(l2_error(&c.mean(), &b.mean)?), Some(l2_error(&c.std(), &b.std())?)),
        None => (None, None),
    };
    Ok(StepDiagnostics {
        k: c.time_index,
        acceptance_rate: c.acceptance_rate,
        ess_median: c.ess,
        ess_min: c.ess_min,
        rho: step.rho,
        index_acceptance_rate: step.index_acceptance_rate,
        l2_mean_error,
        l2_std_error,
        wall_time_s: c.wall_time,
    })
}

/// Run the filter on simulated data (or on `observations` when given) and
/// write samples, diagnostics and a manifest.
pub fn filter(inv: &Invocation, observations: Option<&Path>) -> Result<FilterOutcome> {
    let cfg = &inv.config;
    let model = cfg.model.build()?;
    let smcmc_cfg = cfg.smcmc_config()?;
    let (dim_y, dim_x) = with_model!(&model, m => (m.dim_y(), m.dim_x()));
    let (ys, data_source) = match observations {
        Some(path) => (output::read_observations(path, dim_y)?, path.display().to_string()),
        None => {
            let traj = with_model!(&model, m => simulate_model(m, cfg.data.n_observations, inv.seed))?;
            (traj.observations, "simulated".to_string())
        }
    };
    let reference = kalman_reference(&model, &ys)?;

    output::create_dir(&inv.out)?;
    inv.write_config()?;
    if observations.is_none() {
        output::write_series(&inv.out.join("observations.csv"), "y", 1, &ys)?;
    }
    let samples_dir = inv.out.join("samples");
    if cfg.output.write_samples {
        output::create_dir(&samples_dir)?;
    }

    let mut write_error: Option<CliError> = None;
    let mut last_mean: Option<Vector> = None;
    let mut completed = 0;
    let on_step = |step: &FilterStep| {
        completed = step.cloud.time_index;
        last_mean = Some(step.cloud.mean());
        if cfg.output.write_samples && write_error.is_none() {
            let path = samples_dir.join(format!("step_{:04}.csv", step.cloud.time_index));
            if let Err(e) = output::write_particles(&path, step.cloud.states()) {
                write_error = Some(e);
            }
        }
    };
    let result = with_model!(&model, m => run_filter_with(m, &ys, &smcmc_cfg, inv.seed, on_step));
    let run = match result {
        Ok(run) => run,
        Err(e) => {
            let failing = completed + 1;
            let dump = json!({
                "schema_version": SCHEMA_VERSION,
                "error": e.to_string(),
                "time_index": failing,
                "observation": ys.get(failing - 1).map(|y| y.as_slice().to_vec()),
                "previous_mean": last_mean.map(|m| m.as_slice().to_vec()),
                "seed": inv.seed,
            });
            output::write_json(&inv.out.join("failure.json"), &dump)?;
            return Err(e.into());
        }
    };
    if let Some(e) = write_error {
        return Err(e);
    }

    let diagnostics = run
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| step_diagnostics(s, reference.as_ref().map(|r| &r[i])))
        .collect::<Result<Vec<_>>>()?;
    write_diagnostics(&inv.out.join("diagnostics.csv"), &diagnostics)?;
    output::write_csv(
        &inv.out.join("timing.csv"),
        &["k".to_string(), "wall_time_s".to_string(), "cumulative_wall_time_s".to_string()],
        diagnostics.iter().scan(0.0, |total, d| {
            *total += d.wall_time_s;
            Some(vec![d.k.to_string(), num(d.wall_time_s), num(*total)])
        }),
    )?;

    let mut files = vec!["config.toml", "diagnostics.csv", "timing.csv"];
    if observations.is_none() {
        files.push("observations.csv");
    }
    if cfg.output.write_samples {
        files.push("samples/step_NNNN.csv");
    }
    let mut manifest = inv.manifest_base("filter");
    manifest["observations"] = json!(data_source);
    manifest["data_seed"] = if observations.is_none() { json!(inv.seed) } else { json!(null) };
    manifest["dim_x"] = json!(dim_x);
    manifest["dim_y"] = json!(dim_y);
    manifest["initial_index_set"] = json!("first_s");
    manifest["reference"] = json!(if reference.is_some() { "kalman" } else { "none" });
    manifest["steps"] = json!(diagnostics);
    manifest["files"] = json!(files);
    output::write_json(&inv.out.join("manifest.json"), &manifest)?;

    Ok(FilterOutcome {
        run,
        observations: ys,
        reference,
        diagnostics,
    })
}

fn write_diagnostics(path: &Path, rows: &[StepDiagnostics]) -> Result<()> {
    let header: Vec<String> = DIAGNOSTICS_HEADER.iter().map(|s| s.to_string()).collect();
    output::write_csv(
        path,
        &header,
        rows.iter().map(|d| {
            vec![
                d.k.to_string(),
                num(d.acceptance_rate),
                num(d.ess_median),
                num(d.ess_min),
                num(d.rho),
                num(d.index_acceptance_rate),
                opt(d.l2_mean_error),
                opt(d.l2_std_error),
            ]
        }),
    )
}

// ----------------------------------------------------------------- sweep-s

/// Summary of one filter run in the s-study.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub s: usize,
    pub replicate: usize,
    pub seed: u64,
    /// Median over time of the per-step median ESS.
    pub ess_median: f64,
    /// Time-averaged L2 error of the filter mean against the Kalman filter.
    pub l2_mean_error: Option<f64>,
    pub l2_std_error: Option<f64>,
    pub runtime_s: f64,
}

/// Medians over replicates at one `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub s: usize,
    pub ess_median: f64,
    pub l2_mean_error: Option<f64>,
    pub l2_std_error: Option<f64>,
    pub total_runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn median_of(xs: impl Iterator<Item = f64>) -> f64 {
    median(&mut xs.collect::<Vec<_>>())
}

fn median_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    xs.collect::<Option<Vec<f64>>>().map(|mut v| median(&mut v))
}

/// Run the filter for every `s` in the config's sweep list on
/// `replicates` datasets; replicate `r` uses the same data and chain seed
/// for every `s`.
pub fn sweep_s(inv: &Invocation) -> Result<SweepOutcome> {
    let cfg = &inv.config;
    let model = cfg.model.build()?;
    let base = cfg.smcmc_config()?;
    let s_values = cfg.sweep.s_values.clone();
    let seeds: Vec<u64> = (0..cfg.sweep.replicates as u64).map(|r| replicate_seed(inv.seed, r)).collect();
    let datasets = seeds
        .iter()
        .map(|&seed| {
            let ys = with_model!(&model, m => simulate_model(m, cfg.data.n_observations, seed))?.observations;
            let reference = kalman_reference(&model, &ys)?;
            Ok((ys, reference))
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|r| s_values.iter().map(move |&s| (r, s))).collect();

    let run_job = |&(r, s): &(usize, usize)| -> Result<SweepRun> {
        let (ys, reference) = &datasets[r];
        let smcmc_cfg = smcmc::engine::SmcmcConfig { subset_size: s, ..base };
        let start = Instant::now();
        let run = with_model!(&model, m => smcmc::engine::run_filter(m, ys, &smcmc_cfg, seeds[r]))?;
        let runtime_s = start.elapsed().as_secs_f64();
        let diags = run
            .steps
            .iter()
            .enumerate()
            .map(|(i, st)| step_diagnostics(st, reference.as_ref().map(|b| &b[i])))
            .collect::<Result<Vec<_>>>()?;
        let avg = |f: fn(&StepDiagnostics) -> Option<f64>| {
            diags.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| mean(v.into_iter()))
        };
        Ok(SweepRun {
            s,
            replicate: r,
            seed: seeds[r],
            ess_median: median_of(diags.iter().map(|d| d.ess_median)),
            l2_mean_error: avg(|d| d.l2_mean_error),
            l2_std_error: avg(|d| d.l2_std_error),
            runtime_s,
        })
    };
    let runs = inv.pool()?.install(|| jobs.par_iter().map(run_job).collect::<Result<Vec<_>>>())?;

    let rows: Vec<SweepRow> = s_values
        .iter()
        .map(|&s| {
            let at = || runs.iter().filter(move |r| r.s == s);
            SweepRow {
                s,
                ess_median: median_of(at().map(|r| r.ess_median)),
                l2_mean_error: median_opt(at().map(|r| r.l2_mean_error)),
                l2_std_error: median_opt(at().map(|r| r.l2_std_error)),
                total_runtime_s: median_of(at().map(|r| r.runtime_s)),
            }
        })
        .collect();

    output::create_dir(&inv.out)?;
    inv.write_config()?;
    let h = |cols: &[&str]| cols.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    output::write_csv(
        &inv.out.join("sweep.csv"),
        &h(&["s", "ess_median", "l2_mean_error", "l2_std_error"]),
        rows.iter()
            .map(|r| vec![r.s.to_string(), num(r.ess_median), opt(r.l2_mean_error), opt(r.l2_std_error)]),
    )?;
    output::write_csv(
        &inv.out.join("sweep_runs.csv"),
        &h(&["s", "replicate", "seed", "ess_median", "l2_mean_error", "l2_std_error"]),
        runs.iter().map(|r| {
            vec![
                r.s.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                num(r.ess_median),
                opt(r.l2_mean_error),
                opt(r.l2_std_error),
            ]
        }),
    )?;
    output::write_csv(
        &inv.out.join("sweep_timing.csv"),
        &h(&["s", "replicate", "total_runtime_s"]),
        runs.iter()
            .map(|r| vec![r.s.to_string(), r.replicate.to_string(), num(r.runtime_s)]),
    )?;
    let mut manifest = inv.manifest_base("sweep-s");
    manifest["replicate_seeds"] = json!(seeds);
    manifest["files"] = json!(["config.toml", "sweep.csv", "sweep_runs.csv", "sweep_timing.csv"]);
    output::write_json(&inv.out.join("manifest.json"), &manifest)?;
    Ok(SweepOutcome { runs, rows })
}

// ------------------------------------------------------------- probe-delta

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub rows: Vec<ProbeRow>,
    /// Proposal scale tuned on the degenerate kernel.
    pub proposal_scale: f64,
    /// Proposals drawn before one with a non-saturated limit acceptance.
    pub proposal_draws: usize,
    pub tail_monotone: bool,
    pub factorized_limit_acceptance: f64,
    pub degenerate_acceptance: f64,
}

impl ProbeOutcome {
    pub fn final_gap(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.gap)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "monotone tail (delta < {PROBE_MONOTONE_BELOW:e}): {}; final gap {:e}; factorized limit {} vs degenerate kernel {}",
            if self.tail_monotone { "yes" } else { "no" },
            self.final_gap(),
            self.factorized_limit_acceptance,
            self.degenerate_acceptance
        )
    }
}

/// Upper bound on proposal draws when searching for a non-saturated move.
const PROBE_MAX_DRAWS: usize = 1000;
/// Burn-in of the degenerate kernel before `z` is fixed.
const PROBE_BURN_IN: usize = 1000;

/// Draw `n` points from a (possibly singular) Gaussian.
fn sample_gaussian<R: Rng>(belief: &GaussianBelief, n: usize, rng: &mut R) -> Vec<Vector> {
    let eig = belief.covariance.clone().symmetric_eigen();
    let d = belief.mean.len();
    let root = &eig.eigenvectors * Matrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    (0..n)
        .map(|_| &belief.mean + &root * Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn std_normal<R: Rng>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Acceptance of the low-noise kernel against its degenerate limit at a
/// fixed pair `(z̃, z̃')` on a linear Gaussian model.
///
/// The previous cloud is drawn from the exact time-1 filter; `z` is a draw
/// of the tuned degenerate kernel at time 2, `z̄ ~ N(0, I)`, and
/// `z̃' = z̃ + scale ξ` is the first proposal whose limit acceptance lies
/// strictly inside `(0.05, 0.95)`.
pub fn probe_delta(inv: &Invocation) -> Result<ProbeOutcome> {
    let cfg = &inv.config;
    let model = match cfg.model.build()? {
        AnyModel::Linear(m) if m.observation_matrix().is_some() => m,
        _ => {
            return Err(CliError::Config(format!(
                "probe-delta needs a linear observation model, got {}",
                cfg.model.name()
            )))
        }
    };
    let a = model.observation_matrix().expect("checked above").clone();
    let dim_y = a.nrows();
    let traj = simulate_model(&model, 2, inv.seed)?;
    let beliefs = kalman_filter(&model, &traj.observations, None)?;
    let particles = sample_gaussian(&beliefs[0], cfg.probe.n_particles, &mut stream(inv.seed, 1, 0));
    let mix = PredictiveMixture::new(&model, 2, &particles)?;
    let y = traj.observations[1].clone();
    let star = degenerate_parametrization(&LinearObservation::new(a.clone(), y.clone(), 0.0)?)?;

    let mut rng = stream(inv.seed, 2, 0);
    let z0 = star.basis.transpose() * (&beliefs[1].mean - &star.particular_solution);
    let proposal_scale = tune_degenerate_scale(&z0, &mix, &star, 0.1, cfg.smcmc.target_acceptance, cfg.probe.pilot_steps, &mut rng)?;
    let mut z = z0;
    for _ in 0..PROBE_BURN_IN {
        z = degenerate_step(&z, &mix, &star, proposal_scale, &mut rng)?.0;
    }
    let r = star.dim();
    let mut z_tilde = Vector::zeros(r + dim_y);
    z_tilde.rows_mut(0, r).copy_from(&z);
    z_tilde.rows_mut(r, dim_y).copy_from(&std_normal(dim_y, &mut rng));

    let (z_new, proposal_draws) = if cfg.probe.identical_proposal {
        (z_tilde.clone(), 0)
    } else {
        let mut found = None;
        for draw in 1..=PROBE_MAX_DRAWS {
            let cand = &z_tilde + std_normal(r + dim_y, &mut rng) * proposal_scale;
            let acc = limit_acceptance(&mix, &star, &z_tilde, &cand);
            if acc > 0.05 && acc < 0.95 {
                found = Some((cand, draw));
                break;
            }
        }
        found.ok_or_else(|| {
            CliError::Numerical(smcmc::Error::Contract(format!(
                "no non-saturated proposal within {PROBE_MAX_DRAWS} draws"
            )))
        })?
    };

    let rows = convergence_probe(&z_tilde, &z_new, &mix, &a, &y, &cfg.probe.delta_grid)?;
    let outcome = ProbeOutcome {
        tail_monotone: tail_is_monotone(&rows, PROBE_MONOTONE_BELOW),
        factorized_limit_acceptance: factorized_limit_acceptance(&mix, &star, &z_tilde, &z_new),
        degenerate_acceptance: degenerate_acceptance(&mix, &star, &z, &z_new.rows(0, r).into_owned()),
        rows,
        proposal_scale,
        proposal_draws,
    };

    output::create_dir(&inv.out)?;
    inv.write_config()?;
    output::write_text(&inv.out.join("probe.csv"), &probe_csv(&outcome.rows))?;
    let mut manifest = inv.manifest_base("probe-delta");
    manifest["data_seed"] = json!(inv.seed);
    manifest["probe"] = json!({
        "time_index": 2,
        "proposal_scale": outcome.proposal_scale,
        "proposal_draws": outcome.proposal_draws,
        "z": z_tilde.as_slice(),
        "z_new": z_new.as_slice(),
        "tail_monotone": outcome.tail_monotone,
        "final_gap": outcome.final_gap(),
        "factorized_limit_acceptance": outcome.factorized_limit_acceptance,
        "degenerate_acceptance": outcome.degenerate_acceptance,
        "summary": outcome.summary_line(),
    });
    manifest["files"] = json!(["config.toml", "probe.csv"]);
    output::write_json(&inv.out.join("manifest.json"), &manifest)?;
    Ok(outcome)
}
