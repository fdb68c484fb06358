//! Command-line harness: configure, run, and persist monitored-qubit
//! experiments.
//!
//! Exit codes: 0 on full success, 1 when one or more trajectories failed
//! (remaining output is still written), 2 on configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blochsim::config::ExperimentConfig;
use blochsim::ensemble::run_experiment;
use blochsim::recipes;
use blochsim::sde::DriftScheme;

#[derive(Parser)]
#[command(
    name = "blochsim",
    version,
    about = "Simulation, filtering, and switching feedback control for a continuously monitored qubit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate truth trajectories only (no estimator).
    Simulate(RunArgs),
    /// Track the truth with a single filter (qf or ekf).
    Filter(RunArgs),
    /// Run the multiple-model adaptive estimator bank.
    Mmae(RunArgs),
    /// Close the loop with the switching Lyapunov controller.
    Control(RunArgs),
    /// Run a named built-in experiment recipe.
    Recipe {
        /// Recipe name; try an unknown name to list the options.
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for the ensemble.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long)]
    realizations: Option<usize>,
    /// Output directory for CSV and metadata.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = library default).
    #[arg(long)]
    workers: Option<usize>,
    /// Detector efficiency override.
    #[arg(long)]
    eta: Option<f64>,
    /// Spectrum-analyzer noise variance override.
    #[arg(long = "sigma-z2")]
    sigma_z2: Option<f64>,
    /// Decay rate override.
    #[arg(long)]
    gamma: Option<f64>,
    /// Drift frequency override.
    #[arg(long = "omega-r")]
    omega_r: Option<f64>,
    /// Integration step override.
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon override.
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// Drift discretization: rk4-split or euler.
    #[arg(long = "drift-scheme")]
    drift_scheme: Option<String>,
    /// Estimator selection (none, qf, ekf, mmae-qf, mmae-ekf).
    #[arg(long)]
    estimator: Option<String>,
    /// Controller selection (off, constant, lyapunov-true-state,
    /// lyapunov-estimated).
    #[arg(long)]
    controller: Option<String>,
    /// Constant drive amplitude.
    #[arg(long)]
    omega: Option<f64>,
    /// Lyapunov decay rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Switching threshold.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Drive saturation bound.
    #[arg(long = "omega-max")]
    omega_max: Option<f64>,
    /// Use the stated process-noise variance 1 + sigma_bar.
    #[arg(long = "paper-literal-qw")]
    paper_literal_qw: bool,
    /// Use the Jacobian form of the covariance diffusion.
    #[arg(long = "paper-literal-G")]
    paper_literal_g: bool,
}

impl RunArgs {
    fn load_base(&self) -> Result<ExperimentConfig, String> {
        match &self.config {
            Some(path) => ExperimentConfig::from_file(path).map_err(|e| e.to_string()),
            None => Ok(ExperimentConfig::default()),
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), String> {
        if let Some(seed) = self.seed {
            cfg.run.master_seed = seed;
        }
        if let Some(n) = self.realizations {
            cfg.run.realizations = n;
        }
        if let Some(out) = &self.out {
            cfg.run.out_dir = Some(out.clone());
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
        if let Some(eta) = self.eta {
            cfg.model.eta = eta;
        }
        if let Some(s) = self.sigma_z2 {
            cfg.model.sigma_z2 = s;
        }
        if let Some(g) = self.gamma {
            cfg.model.gamma = g;
        }
        if let Some(w) = self.omega_r {
            cfg.model.omega_r = w;
        }
        if let Some(dt) = self.dt {
            cfg.sim.dt = dt;
        }
        if let Some(t) = self.t_final {
            cfg.sim.t_final = t;
        }
        if let Some(scheme) = &self.drift_scheme {
            cfg.sim.drift_scheme = match scheme.as_str() {
                "euler" => DriftScheme::Euler,
                "rk4-split" => DriftScheme::SplitRk4,
                other => return Err(format!("unknown drift scheme '{other}' (euler, rk4-split)")),
            };
        }
        if let Some(e) = &self.estimator {
            cfg.estimator.kind = e.clone();
        }
        if let Some(c) = &self.controller {
            cfg.controller.kind = c.clone();
        }
        if let Some(omega) = self.omega {
            cfg.controller.constant_omega = omega;
        }
        if let Some(alpha) = self.alpha {
            cfg.controller.alpha = alpha;
        }
        if let Some(eps) = self.epsilon {
            cfg.controller.epsilon = eps;
        }
        if let Some(m) = self.omega_max {
            cfg.controller.omega_max = m;
        }
        if self.paper_literal_qw {
            cfg.estimator.paper_literal_qw = true;
        }
        if self.paper_literal_g {
            cfg.estimator.paper_literal_g = true;
        }
        Ok(())
    }
}

fn configure(mode: &str, args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = args.load_base()?;
    match mode {
        "simulate" => {
            cfg.estimator.kind = "none".into();
            if cfg.controller.kind.starts_with("lyapunov-estimated") {
                cfg.controller.kind = "lyapunov-true-state".into();
            }
        }
        "filter" => {
            if !matches!(cfg.estimator.kind.as_str(), "qf" | "ekf") {
                cfg.estimator.kind = "ekf".into();
            }
            if cfg.controller.kind == "off" {
                cfg.controller.kind = "constant".into();
            }
        }
        "mmae" => {
            if !cfg.estimator.kind.starts_with("mmae") {
                cfg.estimator.kind = "mmae-ekf".into();
            }
            if cfg.controller.kind == "off" {
                cfg.controller.kind = "constant".into();
            }
        }
        "control" => {
            if !cfg.controller.kind.starts_with("lyapunov") {
                cfg.controller.kind = "lyapunov-estimated".into();
            }
            if cfg.controller.kind == "lyapunov-estimated" && cfg.estimator.kind == "none" {
                cfg.estimator.kind = "ekf".into();
            }
        }
        _ => {}
    }
    args.apply(&mut cfg)?;
    if cfg.run.out_dir.is_none() {
        cfg.run.out_dir = Some(PathBuf::from("runs").join(mode));
    }
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig) -> ExitCode {
    match cfg.validate() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    }
    match run_experiment(cfg) {
        Ok(summary) => {
            let out = cfg
                .run
                .out_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<memory>".into());
            println!(
                "{} / {} trajectories completed; output in {}",
                summary.trajectories.len(),
                cfg.run.realizations,
                out
            );
            for f in &summary.failures {
                eprintln!("trajectory {} failed: {}", f.index, f.reason);
            }
            if summary.all_succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => configure("simulate", args),
        Command::Filter(args) => configure("filter", args),
        Command::Mmae(args) => configure("mmae", args),
        Command::Control(args) => configure("control", args),
        Command::Recipe { name, args } => match recipes::build(name) {
            Ok(mut cfg) => {
                if let Err(e) = args.apply(&mut cfg) {
                    Err(e)
                } else {
                    if cfg.run.out_dir.is_none() {
                        cfg.run.out_dir = Some(PathBuf::from("runs").join(name));
                    }
                    Ok(cfg)
                }
            }
            Err(e) => Err(e.to_string()),
        },
    };
    match result {
        Ok(cfg) => execute(&cfg),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
