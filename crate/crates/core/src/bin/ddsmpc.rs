//! Command-line front end: data collection, offline synthesis, online
//! stepping, closed-loop simulation, and Monte Carlo campaigns.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use ddsmpc::controller::{synthesize, ControllerArtifact, OnlineController, StepOutcome};
use ddsmpc::error::Result;
use ddsmpc::geometry::Polytope;
use ddsmpc::hankel::TrajectoryData;
use ddsmpc::harness::{
    check_gates, run_campaign, summarize, write_outputs, CampaignConfig, STREAM_DATA,
};
use ddsmpc::noise::{estimate_entry_intervals, estimate_rho, NoiseModel, NormKind, RhoSearchConfig};
use ddsmpc::plant::{collect_data, paper_plant};
use ddsmpc::rng::stream;

#[derive(Parser)]
#[command(name = "ddsmpc", about = "Offline-sampling data-driven stochastic MPC toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct NoiseArgs {
    /// Noise support half-width ε̄.
    #[arg(long, default_value_t = 0.002)]
    noise_bound: f64,
    /// Truncated-Gaussian std as a fraction of ε̄.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    noise_std_factor: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Record an open-loop trajectory from the benchmark plant.
    Collect {
        #[command(flatten)]
        noise: NoiseArgs,
        /// Trajectory length N.
        #[arg(long, default_value_t = 30)]
        length: usize,
        /// Prediction horizon L (sets the PE order n+L+1).
        #[arg(long, default_value_t = 6)]
        horizon: usize,
        /// Input box half-width.
        #[arg(long, default_value_t = 0.2)]
        u_bound: f64,
        #[arg(long, default_value_t = 2026)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the offline pipeline on a recorded trajectory.
    Synthesize {
        /// Campaign-format config file (key = value).
        #[arg(long)]
        config: PathBuf,
        /// Trajectory CSV from `collect`.
        #[arg(long)]
        data: PathBuf,
        /// Artifact output path.
        #[arg(long)]
        out: PathBuf,
        /// Noise support half-width ε̄ for this artifact.
        #[arg(long, default_value_t = 0.002)]
        noise_bound: f64,
        /// Explicit scenario count (must meet the Eq.-7 bound).
        #[arg(long)]
        num_samples: Option<usize>,
        /// Safety inflation on the system-matrix bound.
        #[arg(long)]
        rho_safety: Option<f64>,
    },
    /// Solve one online step for a measured state.
    Step {
        #[arg(long)]
        artifact: PathBuf,
        /// Comma-separated measurement, e.g. "0.1,-0.2".
        #[arg(long)]
        state: String,
    },
    /// Closed-loop simulation from one initial state.
    Simulate {
        #[arg(long)]
        artifact: PathBuf,
        /// Comma-separated true initial state.
        #[arg(long)]
        state: String,
        #[arg(long, default_value_t = 30)]
        steps: usize,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = 2026)]
        seed: u64,
    },
    /// Monte Carlo campaign over the configured noise scenarios.
    Campaign {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (summary, boxplot data, transcripts).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit nonzero unless every invariant gate passes.
        #[arg(long)]
        check: bool,
        /// Override the scenario count (paper-scale reproduction).
        #[arg(long)]
        num_samples: Option<usize>,
    },
    /// Print the summary table for a finished campaign config (reruns it).
    Report {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate the system-matrix uncertainty from a trajectory.
    EstimateBounds {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = 1.1)]
        rho_safety: f64,
        #[arg(long, default_value_t = 2026)]
        seed: u64,
    },
}

fn parse_state(text: &str) -> Result<DVector<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ddsmpc::error::Error::Parse(format!("bad state component {s:?}")))
        })
        .collect::<Result<_>>()?;
    Ok(DVector::from_vec(vals))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Collect {
            noise,
            length,
            horizon,
            u_bound,
            seed,
            out,
        } => {
            let plant = paper_plant(noise.noise_bound, noise.noise_std_factor)?;
            let mut rng = stream(seed, STREAM_DATA);
            let (data, retries) = collect_data(
                &plant,
                length,
                &Polytope::inf_ball(1, u_bound),
                horizon,
                &DVector::zeros(2),
                &mut rng,
            )?;
            std::fs::write(&out, data.to_csv())?;
            println!(
                "collected N={} trajectory (PE retries: {retries}) -> {}",
                data.len(),
                out.display()
            );
        }
        Command::Synthesize {
            config,
            data,
            out,
            noise_bound,
            num_samples,
            rho_safety,
        } => {
            let mut campaign = CampaignConfig::from_text(&std::fs::read_to_string(&config)?)?;
            if let Some(count) = num_samples {
                campaign.num_samples = Some(count);
            }
            if let Some(s) = rho_safety {
                campaign.rho_safety = s;
            }
            let trajectory = TrajectoryData::from_csv(&std::fs::read_to_string(&data)?)?;
            let synth_cfg = campaign.synthesis_config(noise_bound, campaign.master_seed)?;
            let (artifact, report) = synthesize(&trajectory, &synth_cfg)?;
            std::fs::write(&out, artifact.to_text())?;
            println!(
                "synthesized: N_s={} rows={}->{} rho_hat={:.4} z_inf_iters={} -> {}",
                report.num_samples,
                report.raw_rows,
                report.reduced_rows,
                report.rho_hat,
                report.z_inf_iterations,
                out.display()
            );
        }
        Command::Step { artifact, state } => {
            let artifact = ControllerArtifact::from_text(&std::fs::read_to_string(&artifact)?)?;
            let x = parse_state(&state)?;
            let mut ctrl = OnlineController::new(&artifact)?;
            match ctrl.online_step(&x)? {
                StepOutcome::Feasible(dec) => {
                    let u: Vec<String> = dec.u0.iter().map(|v| format!("{v:.12e}")).collect();
                    println!("u0 = {}", u.join(","));
                    println!("objective = {:.12e}", dec.objective);
                }
                StepOutcome::Infeasible { .. } => {
                    println!("infeasible");
                    return Ok(false);
                }
            }
        }
        Command::Simulate {
            artifact,
            state,
            steps,
            noise,
            seed,
        } => {
            let artifact = ControllerArtifact::from_text(&std::fs::read_to_string(&artifact)?)?;
            let plant = paper_plant(noise.noise_bound, noise.noise_std_factor)?;
            let mut ctrl = OnlineController::new(&artifact)?;
            let mut rng = stream(seed, 1);
            let mut x = parse_state(&state)?;
            println!("k,x_1,x_2,u,feasible");
            for k in 0..steps {
                let xhat = &x + artifact.noise.sample(&mut rng)?;
                match ctrl.online_step(&xhat)? {
                    StepOutcome::Feasible(dec) => {
                        println!("{k},{:.6e},{:.6e},{:.6e},1", x[0], x[1], dec.u0[0]);
                        x = &plant.a * &x + &plant.b * &dec.u0;
                    }
                    StepOutcome::Infeasible { .. } => {
                        println!("{k},{:.6e},{:.6e},,0", x[0], x[1]);
                        return Ok(false);
                    }
                }
            }
        }
        Command::Campaign {
            config,
            out,
            check,
            num_samples,
        } => {
            let mut campaign = CampaignConfig::from_text(&std::fs::read_to_string(&config)?)?;
            if let Some(count) = num_samples {
                campaign.num_samples = Some(count);
            }
            let result = run_campaign(&campaign)?;
            let summary = summarize(&result);
            print!("{}", summary.to_table());
            if let Some(dir) = out {
                write_outputs(&result, &campaign, &dir)?;
                println!("outputs written to {}", dir.display());
            }
            if check {
                let failures = check_gates(&result);
                if failures.is_empty() {
                    println!("all gates pass");
                } else {
                    for f in &failures {
                        eprintln!("GATE FAILED: {f}");
                    }
                    return Ok(false);
                }
            }
        }
        Command::Report { config } => {
            let campaign = CampaignConfig::from_text(&std::fs::read_to_string(&config)?)?;
            let result = run_campaign(&campaign)?;
            print!("{}", summarize(&result).to_table());
        }
        Command::EstimateBounds {
            data,
            noise,
            rho_safety,
            seed,
        } => {
            let trajectory = TrajectoryData::from_csv(&std::fs::read_to_string(&data)?)?;
            let model = NoiseModel::box_model(
                trajectory.n,
                noise.noise_bound,
                noise.noise_std_factor,
            )?;
            let cfg = RhoSearchConfig {
                safety: rho_safety,
                ..RhoSearchConfig::default()
            };
            let mut rng = stream(seed, 3);
            let rho = estimate_rho(&trajectory, &model, NormKind::Inf, &cfg, &mut rng)?;
            println!("rho_raw = {:.6}", rho.raw);
            println!("rho_hat = {:.6}", rho.inflated);
            let mut rng = stream(seed, 3);
            let (lo, hi) = estimate_entry_intervals(&trajectory, &model, &cfg, &mut rng)?;
            println!("entry intervals [A,B]:");
            for i in 0..lo.nrows() {
                let row: Vec<String> = (0..lo.ncols())
                    .map(|j| format!("[{:+.4}, {:+.4}]", lo[(i, j)], hi[(i, j)]))
                    .collect();
                println!("  {}", row.join(" "));
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
