use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smcmc_cli::{commands, CliError, Invocation};

#[derive(Parser)]
#[command(name = "smcmc", version, about = "Sequential MCMC filtering on constraint manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a hidden trajectory and its observations.
    Simulate(Common),
    /// Run the filter on simulated or supplied observations.
    Filter {
        #[command(flatten)]
        common: Common,
        /// CSV of observations `(k, y_1..y_dy)`; simulated from the seed if absent.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Compare subset sizes over matched-seed replicates.
    SweepS(Common),
    /// Probe the low-noise kernel's acceptance as the noise vanishes.
    ProbeDelta(Common),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct Common {
    /// Config file or preset name.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Apply the config's desk-scale overrides.
    #[arg(long)]
    smoke: bool,
    /// Threads for replicate fan-out.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl Common {
    fn invocation(&self) -> Result<Invocation, CliError> {
        Invocation::new(&self.config, self.seed, &self.out, self.smoke, self.workers)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(c) => {
            let out = commands::simulate(&c.invocation()?)?;
            println!("simulated {} observations into {}", out.observations.len(), c.out.display());
        }
        Command::Filter { common, observations } => {
            let out = commands::filter(&common.invocation()?, observations.as_deref())?;
            for d in &out.diagnostics {
                println!(
                    "k={:>4} acceptance={:.3} ess_median={:.1} ess_min={:.1}",
                    d.k, d.acceptance_rate, d.ess_median, d.ess_min
                );
            }
            println!("wall time {:.2} s", out.run.wall_time);
        }
        Command::SweepS(c) => {
            let out = commands::sweep_s(&c.invocation()?)?;
            for r in &out.rows {
                println!(
                    "s={:>3} ess_median={:.1} l2_mean={} l2_std={} runtime={:.2} s",
                    r.s,
                    r.ess_median,
                    r.l2_mean_error.map_or("-".into(), |v| format!("{v:.4}")),
                    r.l2_std_error.map_or("-".into(), |v| format!("{v:.4}")),
                    r.total_runtime_s
                );
            }
        }
        Command::ProbeDelta(c) => {
            let out = commands::probe_delta(&c.invocation()?)?;
            print!("{}", smcmc::linear_noise::probe_csv(&out.rows));
            println!("{}", out.summary_line());
        }
        Command::Presets => {
            for (name, _) in smcmc_cli::config::PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
