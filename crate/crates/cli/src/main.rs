use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use pmekf::io::Config;
use pmekf::observability::ObservabilityConfig;
use pmekf::pipeline::{
    cmd_estimate, cmd_evaluate, cmd_observability, cmd_preprocess, cmd_simulate, default_observability_scenario,
    EstimateOptions, EvaluateOptions, MetricsMode, SimulateOptions, TrajectorySource,
};
use pmekf::simulator::Scenario;

/// Energy expenditure estimation with a physiological-model Kalman filter.
#[derive(Parser, Debug)]
#[command(name = "pmekf", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file with [model], [ekf] and [subject] sections.
    #[arg(long, global = true, value_name = "FILE")]
    params: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Random seed for synthetic noise.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the filter on a session directory.
    Estimate {
        session: PathBuf,
        /// Replace the measured heart rate by a constant 70 bpm.
        #[arg(long)]
        constant_hr: bool,
        /// Fail unless the session has a PAEE reference.
        #[arg(long, conflicts_with = "no_metrics")]
        metrics: bool,
        /// Do not compute metrics even if a reference exists.
        #[arg(long)]
        no_metrics: bool,
    },
    /// Simulate a scenario file into a session directory.
    Simulate {
        scenario: PathBuf,
        /// Proxy noise as a fraction of the channel RMS.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Integration step, s.
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// Also write synthetic IMU channels and activity segments.
        #[arg(long)]
        imu: bool,
    },
    /// Local observability along a trajectory.
    Observability {
        /// Trajectory CSV (state and hr_bpm columns) or a session directory
        /// with truth.csv. Defaults to a simulated mid-intensity trajectory.
        input: Option<PathBuf>,
        /// Simulate this scenario file instead.
        #[arg(long, conflicts_with = "input")]
        scenario: Option<PathBuf>,
        /// Evaluate every N-th sample.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Number of stacked Lie derivatives.
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
    /// Leave-one-subject-out evaluation over session subdirectories.
    Evaluate {
        dataset: PathBuf,
        /// Run the filter with a constant 70 bpm input.
        #[arg(long)]
        constant_hr: bool,
        /// Drop heart rate from the regression baseline.
        #[arg(long)]
        no_hr: bool,
    },
    /// Write the 1 Hz model inputs of a session.
    Preprocess { session: PathBuf },
}

fn run(cli: Cli) -> pmekf::Result<()> {
    let config = match &cli.common.params {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let out = &cli.common.out;
    let started = Instant::now();
    match cli.command {
        Command::Estimate {
            session,
            constant_hr,
            metrics,
            no_metrics,
        } => {
            let mode = match (metrics, no_metrics) {
                (true, _) => MetricsMode::Require,
                (_, true) => MetricsMode::Skip,
                _ => MetricsMode::Auto,
            };
            let est = cmd_estimate(&session, &config, EstimateOptions { constant_hr, metrics: mode }, out)?;
            println!("estimated {} s in {:.2} s", est.t.len(), started.elapsed().as_secs_f64());
            if let Some(r) = &est.report {
                print!("{}", r.to_text());
            }
        }
        Command::Simulate { scenario, noise, dt, imu } => {
            let opts = SimulateOptions {
                seed: cli.common.seed,
                noise_sigma_frac: noise,
                dt,
                imu,
                ..SimulateOptions::default()
            };
            let run = cmd_simulate(&scenario, &config, &opts, out)?;
            println!("simulated {} s into {}", run.output.len(), out.display());
        }
        Command::Observability {
            input,
            scenario,
            stride,
            order,
        } => {
            let source = match (input, scenario) {
                (Some(p), _) => TrajectorySource::File(p),
                (None, Some(s)) => {
                    if !s.is_file() {
                        return Err(pmekf::Error::MissingFile(s.display().to_string()));
                    }
                    TrajectorySource::Scenario(Scenario::parse(&std::fs::read_to_string(&s)?, 0.0, cli.common.seed)?)
                }
                (None, None) => TrajectorySource::Scenario(default_observability_scenario()),
            };
            let cfg = ObservabilityConfig {
                stride,
                order,
                ..ObservabilityConfig::default()
            };
            let run = cmd_observability(&source, &config, &cfg, out)?;
            print!("{}", run.to_text());
        }
        Command::Evaluate {
            dataset,
            constant_hr,
            no_hr,
        } => {
            let report = cmd_evaluate(&dataset, &config, EvaluateOptions { constant_hr, no_hr }, out)?;
            print!("{}", report.to_text());
        }
        Command::Preprocess { session } => {
            let inputs = cmd_preprocess(&session, &config, out)?;
            println!(
                "wrote {} s of model inputs ({} heart-rate samples replaced)",
                inputs.t.len(),
                inputs.hr_replaced.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
