//! Monte Carlo campaign runner: per-noise-scenario synthesis, closed-loop
//! simulation, statistics (total trajectory cost, violation and
//! feasibility rates, solve timing), and plot-data emission.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::controller::{
    synthesize, BoundMode, ControllerArtifact, OnlineController, StepOutcome, SynthesisConfig,
    SynthesisReport,
};
use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::noise::{NormKind, RhoSearchConfig};
use crate::plant::{collect_data, paper_plant};
use crate::rng::stream;

/// RNG stream ids: data collection per scenario, then one stream per
/// Monte Carlo run.
pub const STREAM_DATA: u64 = 100;
pub const MONTE_CARLO_BASE: u64 = 1000;
/// Give up resampling x₀ after this many rejections.
const MAX_X0_RESAMPLES: usize = 100_000;

/// Full campaign description. Parsed from a flat `key = value` file;
/// the `paper-5.1` preset fills §5-style defaults which later keys may
/// override.
#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub noise_bounds: Vec<f64>,
    pub runs: usize,
    pub steps: usize,
    /// x₀ sampled uniformly from `‖x₀‖∞ ≤ x0_radius`.
    pub x0_radius: f64,
    pub x_ref: Option<DVector<f64>>,
    pub horizon: usize,
    pub p: f64,
    pub beta: f64,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub p_diag: Vec<f64>,
    pub x_bound: f64,
    pub u_bound: f64,
    /// Recorded trajectory length per scenario.
    pub data_len: usize,
    pub saa_count: usize,
    /// Explicit scenario count override (paper-scale reproduction).
    pub num_samples: Option<usize>,
    /// `entry-intervals` or `rho-box`.
    pub bound_mode: String,
    pub std_factor: f64,
    pub rho_safety: f64,
    pub max_invariance_iter: usize,
    pub master_seed: u64,
}

impl CampaignConfig {
    /// The §5.1 benchmark configuration at desk scale (200 runs, Eq.-7
    /// sample count; the paper used 1 000 runs and N_s = 31 800).
    pub fn paper_5_1() -> Self {
        Self {
            noise_bounds: vec![0.0001, 0.001, 0.002, 0.01, 0.1],
            runs: 200,
            steps: 30,
            x0_radius: 0.5,
            x_ref: Some(DVector::from_vec(vec![0.0, 2.8])),
            horizon: 6,
            p: 0.8,
            beta: 0.999,
            q_diag: vec![1.0, 10.0],
            r_diag: vec![1.0],
            p_diag: vec![1.0, 10.0],
            x_bound: 2.8,
            u_bound: 0.2,
            data_len: 30,
            saa_count: 400,
            num_samples: None,
            bound_mode: "entry-intervals".into(),
            std_factor: 1.0 / 3.0,
            rho_safety: 1.1,
            max_invariance_iter: 100,
            master_seed: 2026,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("campaign: runs must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("campaign: steps must be at least 1"));
        }
        if self.noise_bounds.is_empty() {
            return Err(Error::config("campaign: noise_bounds must be nonempty"));
        }
        if self.q_diag.len() != self.p_diag.len() {
            return Err(Error::config("campaign: q_diag and p_diag lengths differ"));
        }
        if self.bound_mode != "entry-intervals" && self.bound_mode != "rho-box" {
            return Err(Error::config(format!(
                "campaign: unknown bound_mode {:?} (expected entry-intervals or rho-box)",
                self.bound_mode
            )));
        }
        Ok(())
    }

    /// Parse the flat `key = value` format. Lines starting with `#` are
    /// comments. `preset = paper-5.1` (first line position not required)
    /// selects the base; all other keys override it.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv: Vec<(String, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("campaign config line {}: expected key = value", lineno + 1))
            })?;
            kv.push((key.trim().to_string(), val.trim().to_string()));
        }
        let mut cfg = match kv.iter().find(|(k, _)| k == "preset") {
            Some((_, name)) if name == "paper-5.1" => Self::paper_5_1(),
            Some((_, name)) => {
                return Err(Error::config(format!("campaign: unknown preset {name:?}")))
            }
            None => Self::paper_5_1(),
        };
        for (key, val) in &kv {
            cfg.set(key, val)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, val: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, val: &str) -> Result<T> {
            val.parse()
                .map_err(|_| Error::Parse(format!("campaign config: bad value for {key}: {val:?}")))
        }
        fn list(key: &str, val: &str) -> Result<Vec<f64>> {
            val.split(',')
                .map(|s| num::<f64>(key, s.trim()))
                .collect()
        }
        match key {
            "preset" => {}
            "noise_bounds" => self.noise_bounds = list(key, val)?,
            "runs" => self.runs = num(key, val)?,
            "steps" => self.steps = num(key, val)?,
            "x0_radius" => self.x0_radius = num(key, val)?,
            "x_ref" => {
                self.x_ref = if val.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(DVector::from_vec(list(key, val)?))
                }
            }
            "horizon" => self.horizon = num(key, val)?,
            "p" => self.p = num(key, val)?,
            "beta" => self.beta = num(key, val)?,
            "q_diag" => self.q_diag = list(key, val)?,
            "r_diag" => self.r_diag = list(key, val)?,
            "p_diag" => self.p_diag = list(key, val)?,
            "x_bound" => self.x_bound = num(key, val)?,
            "u_bound" => self.u_bound = num(key, val)?,
            "data_len" => self.data_len = num(key, val)?,
            "saa_count" => self.saa_count = num(key, val)?,
            "num_samples" => {
                self.num_samples = if val.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(num(key, val)?)
                }
            }
            "bound_mode" => self.bound_mode = val.to_string(),
            "std_factor" => self.std_factor = num(key, val)?,
            "rho_safety" => self.rho_safety = num(key, val)?,
            "max_invariance_iter" => self.max_invariance_iter = num(key, val)?,
            "master_seed" => self.master_seed = num(key, val)?,
            other => {
                return Err(Error::config(format!("campaign config: unknown key {other:?}")))
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<CostWeights> {
        let diag = |d: &[f64]| DMatrix::from_diagonal(&DVector::from_vec(d.to_vec()));
        CostWeights::new(
            diag(&self.q_diag),
            diag(&self.r_diag),
            diag(&self.p_diag),
            self.horizon,
        )
    }

    /// The per-scenario synthesis configuration.
    pub fn synthesis_config(&self, noise_bound: f64, scenario_seed: u64) -> Result<SynthesisConfig> {
        let n = self.q_diag.len();
        let m = self.r_diag.len();
        let bound_mode = match self.bound_mode.as_str() {
            "rho-box" => BoundMode::RhoBox(NormKind::Inf),
            _ => BoundMode::EntryIntervals,
        };
        Ok(SynthesisConfig {
            horizon: self.horizon,
            p: self.p,
            beta: self.beta,
            noise_bound,
            std_factor: self.std_factor,
            x_poly: Polytope::inf_ball(n, self.x_bound),
            u_poly: Polytope::inf_ball(m, self.u_bound),
            weights: self.weights()?,
            saa_count: self.saa_count,
            num_samples: self.num_samples,
            bound_mode,
            rho_search: RhoSearchConfig {
                safety: self.rho_safety,
                ..RhoSearchConfig::default()
            },
            max_invariance_iter: self.max_invariance_iter,
            x_ref: self.x_ref.clone(),
            master_seed: scenario_seed,
        })
    }

    /// Deterministic per-scenario seed derived from the master seed.
    pub fn scenario_seed(&self, index: usize) -> u64 {
        self.master_seed.wrapping_add((index as u64) << 32)
    }
}

/// One closed-loop step of one run.
#[derive(Debug, Clone)]
pub struct TranscriptRow {
    pub k: usize,
    /// True state x_k (before applying u_k).
    pub x: DVector<f64>,
    /// Measurement x̂_k the controller saw.
    pub xhat: DVector<f64>,
    /// Applied input (zeros when infeasible).
    pub u: DVector<f64>,
    pub feasible: bool,
    pub solve_time_ms: f64,
    /// Whether the *successor* true state x_{k+1} lies in 𝕏.
    pub in_x: bool,
}

/// One Monte Carlo run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: usize,
    pub x0: DVector<f64>,
    /// Rejected x₀ draws before one landed in the admissible set.
    pub resamples: usize,
    pub j_tot: f64,
    pub state_violations: usize,
    pub input_violations: usize,
    pub infeasible_steps: usize,
    pub transcript: Vec<TranscriptRow>,
}

/// All runs of one noise scenario (or the reason it was skipped).
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub noise_bound: f64,
    pub report: Option<SynthesisReport>,
    pub skipped: Option<String>,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub scenarios: Vec<ScenarioResult>,
    pub runs_requested: usize,
    pub steps_requested: usize,
    pub p: f64,
}

/// Total trajectory cost of one transcript:
/// `J_tot = Σ_k e_{k+1}ᵀ Q e_{k+1} + u_kᵀ R u_k` with `e = x − x_ref`
/// (the state error is offset by one step).
pub fn total_cost(
    transcript: &[TranscriptRow],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x_ref: Option<&DVector<f64>>,
    final_state: &DVector<f64>,
) -> f64 {
    let mut j = 0.0;
    for (i, row) in transcript.iter().enumerate() {
        if !row.feasible {
            break;
        }
        let x_next = transcript
            .get(i + 1)
            .map(|t| &t.x)
            .unwrap_or(final_state);
        let e = match x_ref {
            Some(r) => x_next - r,
            None => x_next.clone(),
        };
        j += (e.transpose() * q * &e)[(0, 0)] + (row.u.transpose() * r * &row.u)[(0, 0)];
    }
    j
}

/// Simulate one closed-loop run from a fixed x₀ with its own RNG stream.
#[allow(clippy::too_many_arguments)]
fn simulate_run(
    artifact: &ControllerArtifact,
    config: &CampaignConfig,
    plant: &crate::plant::PlantModel,
    run: usize,
    x0: DVector<f64>,
    resamples: usize,
    rng: &mut impl Rng,
) -> Result<RunRecord> {
    let q = DMatrix::from_diagonal(&DVector::from_vec(config.q_diag.clone()));
    let r = DMatrix::from_diagonal(&DVector::from_vec(config.r_diag.clone()));
    let mut ctrl = OnlineController::new(artifact)?;
    let mut transcript = Vec::with_capacity(config.steps);
    let mut state_violations = 0usize;
    let mut input_violations = 0usize;
    let mut infeasible_steps = 0usize;
    let mut x = x0.clone();
    let mut final_state = x0.clone();
    for k in 0..config.steps {
        let xhat = &x + artifact.noise.sample(rng)?;
        let started = Instant::now();
        let outcome = ctrl.online_step(&xhat)?;
        let solve_time_ms = started.elapsed().as_secs_f64() * 1e3;
        match outcome {
            StepOutcome::Feasible(dec) => {
                if dec.u0.amax() > config.u_bound + 1e-9 {
                    input_violations += 1;
                }
                let x_next = &plant.a * &x + &plant.b * &dec.u0;
                let in_x = x_next.amax() <= config.x_bound + 1e-9;
                if !in_x {
                    state_violations += 1;
                }
                transcript.push(TranscriptRow {
                    k,
                    x: x.clone(),
                    xhat,
                    u: dec.u0.clone(),
                    feasible: true,
                    solve_time_ms,
                    in_x,
                });
                x = x_next;
                final_state = x.clone();
            }
            StepOutcome::Infeasible { .. } => {
                infeasible_steps += 1;
                transcript.push(TranscriptRow {
                    k,
                    x: x.clone(),
                    xhat,
                    u: DVector::zeros(artifact.m),
                    feasible: false,
                    solve_time_ms,
                    in_x: true,
                });
                break;
            }
        }
    }
    let j_tot = total_cost(&transcript, &q, &r, config.x_ref.as_ref(), &final_state);
    Ok(RunRecord {
        run,
        x0,
        resamples,
        j_tot,
        state_violations,
        input_violations,
        infeasible_steps,
        transcript,
    })
}

/// Run every scenario: synthesize once from fresh data, then simulate
/// `runs` closed loops on independent RNG streams. A scenario whose
/// synthesis fails is recorded as skipped with the reason.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult> {
    config.validate()?;
    let n = config.q_diag.len();
    let m = config.r_diag.len();
    let mut scenarios = Vec::with_capacity(config.noise_bounds.len());
    for (idx, &eps) in config.noise_bounds.iter().enumerate() {
        let seed = config.scenario_seed(idx);
        let plant = paper_plant(eps, config.std_factor)?;
        let mut data_rng = stream(seed, STREAM_DATA);
        let (data, _) = collect_data(
            &plant,
            config.data_len,
            &Polytope::inf_ball(m, config.u_bound),
            config.horizon,
            &DVector::zeros(n),
            &mut data_rng,
        )?;
        let synth_cfg = config.synthesis_config(eps, seed)?;
        let (artifact, report) = match synthesize(&data, &synth_cfg) {
            Ok(out) => out,
            Err(e) => {
                scenarios.push(ScenarioResult {
                    noise_bound: eps,
                    report: None,
                    skipped: Some(e.to_string()),
                    runs: Vec::new(),
                });
                continue;
            }
        };
        let mut runs = Vec::with_capacity(config.runs);
        for run in 0..config.runs {
            let mut rng = stream(seed, MONTE_CARLO_BASE + run as u64);
            let mut resamples = 0usize;
            let x0 = loop {
                let cand = DVector::from_fn(n, |_, _| {
                    rng.gen_range(-config.x0_radius..=config.x0_radius)
                });
                if artifact.init_set.contains(&cand) {
                    break cand;
                }
                resamples += 1;
                if resamples > MAX_X0_RESAMPLES {
                    return Err(Error::Numerical(format!(
                        "scenario ε̄={eps}: no admissible x₀ found in {MAX_X0_RESAMPLES} draws"
                    )));
                }
            };
            runs.push(simulate_run(&artifact, config, &plant, run, x0, resamples, &mut rng)?);
        }
        scenarios.push(ScenarioResult {
            noise_bound: eps,
            report: Some(report),
            skipped: None,
            runs,
        });
    }
    Ok(CampaignResult {
        scenarios,
        runs_requested: config.runs,
        steps_requested: config.steps,
        p: config.p,
    })
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

/// Per-scenario aggregate statistics.
#[derive(Debug, Clone)]
pub struct ScenarioSummary {
    pub noise_bound: f64,
    pub skipped: Option<String>,
    pub runs: usize,
    /// Boxplot data: min, first quartile, median, third quartile, max.
    pub j_quartiles: [f64; 5],
    pub state_violation_rate: f64,
    pub input_violation_rate: f64,
    pub infeasible_steps: usize,
    /// Minimum over time steps of the fraction of runs with x_k ∈ 𝕏.
    pub min_per_step_in_x: f64,
    pub mean_solve_ms: f64,
    pub median_solve_ms: f64,
    pub p95_solve_ms: f64,
    pub total_resamples: usize,
}

#[derive(Debug, Clone)]
pub struct CampaignSummary {
    pub scenarios: Vec<ScenarioSummary>,
    pub p: f64,
}

/// Aggregate a campaign into per-scenario summaries.
pub fn summarize(result: &CampaignResult) -> CampaignSummary {
    let mut scenarios = Vec::with_capacity(result.scenarios.len());
    for sc in &result.scenarios {
        if sc.skipped.is_some() || sc.runs.is_empty() {
            scenarios.push(ScenarioSummary {
                noise_bound: sc.noise_bound,
                skipped: sc.skipped.clone().or_else(|| Some("no runs".into())),
                runs: 0,
                j_quartiles: [f64::NAN; 5],
                state_violation_rate: f64::NAN,
                input_violation_rate: f64::NAN,
                infeasible_steps: 0,
                min_per_step_in_x: f64::NAN,
                mean_solve_ms: f64::NAN,
                median_solve_ms: f64::NAN,
                p95_solve_ms: f64::NAN,
                total_resamples: 0,
            });
            continue;
        }
        let costs: Vec<f64> = sc.runs.iter().map(|r| r.j_tot).collect();
        let steps_total: usize = sc.runs.iter().map(|r| r.transcript.len()).sum();
        let state_violations: usize = sc.runs.iter().map(|r| r.state_violations).sum();
        let input_violations: usize = sc.runs.iter().map(|r| r.input_violations).sum();
        let infeasible: usize = sc.runs.iter().map(|r| r.infeasible_steps).sum();
        let solve_times: Vec<f64> = sc
            .runs
            .iter()
            .flat_map(|r| r.transcript.iter().map(|t| t.solve_time_ms))
            .collect();
        // Per-step empirical chance-constraint satisfaction: fraction of
        // runs whose state at each step index stays in 𝕏.
        let max_len = sc.runs.iter().map(|r| r.transcript.len()).max().unwrap_or(0);
        let mut min_rate = 1.0f64;
        for k in 0..max_len {
            let mut total = 0usize;
            let mut ok = 0usize;
            for r in &sc.runs {
                if let Some(row) = r.transcript.get(k) {
                    total += 1;
                    if row.in_x {
                        ok += 1;
                    }
                }
            }
            if total > 0 {
                min_rate = min_rate.min(ok as f64 / total as f64);
            }
        }
        scenarios.push(ScenarioSummary {
            noise_bound: sc.noise_bound,
            skipped: None,
            runs: sc.runs.len(),
            j_quartiles: [
                quantile(&costs, 0.0),
                quantile(&costs, 0.25),
                quantile(&costs, 0.5),
                quantile(&costs, 0.75),
                quantile(&costs, 1.0),
            ],
            state_violation_rate: state_violations as f64 / steps_total.max(1) as f64,
            input_violation_rate: input_violations as f64 / steps_total.max(1) as f64,
            infeasible_steps: infeasible,
            min_per_step_in_x: min_rate,
            mean_solve_ms: solve_times.iter().sum::<f64>() / solve_times.len().max(1) as f64,
            median_solve_ms: quantile(&solve_times, 0.5),
            p95_solve_ms: quantile(&solve_times, 0.95),
            total_resamples: sc.runs.iter().map(|r| r.resamples).sum(),
        });
    }
    CampaignSummary {
        scenarios,
        p: result.p,
    }
}

impl CampaignSummary {
    /// CSV table, one row per scenario.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "noise_bound,runs,j_min,j_q1,j_median,j_q3,j_max,state_violation_rate,\
             input_violation_rate,infeasible_steps,min_per_step_in_x,mean_solve_ms,\
             median_solve_ms,p95_solve_ms,total_resamples,skipped\n",
        );
        for s in &self.scenarios {
            let skipped = s.skipped.as_deref().unwrap_or("");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.noise_bound,
                s.runs,
                s.j_quartiles[0],
                s.j_quartiles[1],
                s.j_quartiles[2],
                s.j_quartiles[3],
                s.j_quartiles[4],
                s.state_violation_rate,
                s.input_violation_rate,
                s.infeasible_steps,
                s.min_per_step_in_x,
                s.mean_solve_ms,
                s.median_solve_ms,
                s.p95_solve_ms,
                s.total_resamples,
                skipped.replace(',', ";"),
            );
        }
        out
    }

    /// Gnuplot boxplot data: `index eps min q1 median q3 max` per line
    /// (usable with `plot ... using 1:3:2:6:5 with candlesticks`).
    pub fn to_gnuplot(&self) -> String {
        let mut out =
            String::from("# index noise_bound j_min j_q1 j_median j_q3 j_max\n");
        for (i, s) in self.scenarios.iter().enumerate() {
            if s.skipped.is_some() {
                continue;
            }
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                i,
                s.noise_bound,
                s.j_quartiles[0],
                s.j_quartiles[1],
                s.j_quartiles[2],
                s.j_quartiles[3],
                s.j_quartiles[4],
            );
        }
        out
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>10} {:>6} {:>12} {:>12} {:>12} {:>10} {:>10} {:>8}\n",
            "eps", "runs", "J_q1", "J_median", "J_q3", "viol_rate", "in_X_min", "ms_med"
        );
        for s in &self.scenarios {
            if let Some(reason) = &s.skipped {
                let _ = writeln!(out, "{:>10} skipped: {reason}", s.noise_bound);
                continue;
            }
            let _ = writeln!(
                out,
                "{:>10} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>10.5} {:>10.5} {:>8.3}",
                s.noise_bound,
                s.runs,
                s.j_quartiles[1],
                s.j_quartiles[2],
                s.j_quartiles[3],
                s.state_violation_rate,
                s.min_per_step_in_x,
                s.median_solve_ms,
            );
        }
        out
    }
}

/// Invariant gates for `campaign --check`. Returns the list of failed
/// gates (empty = all pass): zero infeasible steps everywhere, zero
/// violations at the small-noise scenarios, and per-step empirical
/// chance-constraint satisfaction ≥ p − 3σ elsewhere.
pub fn check_gates(result: &CampaignResult) -> Vec<String> {
    let summary = summarize(result);
    let mut failures = Vec::new();
    for s in &summary.scenarios {
        if let Some(reason) = &s.skipped {
            failures.push(format!("scenario ε̄={}: skipped ({reason})", s.noise_bound));
            continue;
        }
        if s.infeasible_steps > 0 {
            failures.push(format!(
                "scenario ε̄={}: {} infeasible steps (expected 0)",
                s.noise_bound, s.infeasible_steps
            ));
        }
        if s.noise_bound <= 0.002 {
            if s.state_violation_rate > 0.0 || s.input_violation_rate > 0.0 {
                failures.push(format!(
                    "scenario ε̄={}: violations at small noise (state {}, input {})",
                    s.noise_bound, s.state_violation_rate, s.input_violation_rate
                ));
            }
        } else {
            let sigma = (result.p * (1.0 - result.p) / s.runs.max(1) as f64).sqrt();
            let floor = result.p - 3.0 * sigma;
            if s.min_per_step_in_x < floor {
                failures.push(format!(
                    "scenario ε̄={}: per-step satisfaction {} below {:.4}",
                    s.noise_bound, s.min_per_step_in_x, floor
                ));
            }
        }
    }
    failures
}

/// Transcript CSV for one run: one row per step.
pub fn transcript_csv(record: &RunRecord, n: usize, m: usize) -> String {
    let mut header = String::from("k");
    for i in 0..n {
        let _ = write!(header, ",x_{}", i + 1);
    }
    for i in 0..n {
        let _ = write!(header, ",xhat_{}", i + 1);
    }
    for i in 0..m {
        let _ = write!(header, ",u_{}", i + 1);
    }
    header.push_str(",feasible,solve_time_ms,in_X\n");
    let mut out = header;
    for row in &record.transcript {
        let _ = write!(out, "{}", row.k);
        for v in row.x.iter().chain(row.xhat.iter()).chain(row.u.iter()) {
            let _ = write!(out, ",{v:.12e}");
        }
        let _ = writeln!(
            out,
            ",{},{:.6},{}",
            row.feasible as u8, row.solve_time_ms, row.in_x as u8
        );
    }
    out
}

/// Write summary CSV, gnuplot boxplot data, and per-run transcripts.
pub fn write_outputs(result: &CampaignResult, config: &CampaignConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary = summarize(result);
    std::fs::write(dir.join("summary.csv"), summary.to_csv())?;
    std::fs::write(dir.join("boxplot.dat"), summary.to_gnuplot())?;
    let n = config.q_diag.len();
    let m = config.r_diag.len();
    for sc in &result.scenarios {
        for run in &sc.runs {
            let name = format!("transcript_eps{}_run{:04}.csv", sc.noise_bound, run.run);
            std::fs::write(dir.join(name), transcript_csv(run, n, m))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    /// A desk-scale configuration that keeps unit tests under seconds.
    fn tiny_config() -> CampaignConfig {
        let mut cfg = CampaignConfig::paper_5_1();
        cfg.noise_bounds = vec![0.002];
        cfg.runs = 3;
        cfg.steps = 6;
        cfg.horizon = 3;
        cfg.p = 0.5;
        cfg.beta = 0.9;
        cfg.saa_count = 150;
        cfg.x_ref = None;
        cfg.master_seed = 11;
        cfg
    }

    fn tiny_result() -> &'static CampaignResult {
        static CELL: OnceLock<CampaignResult> = OnceLock::new();
        CELL.get_or_init(|| run_campaign(&tiny_config()).unwrap())
    }

    #[test]
    fn runs_zero_rejected() {
        let mut cfg = tiny_config();
        cfg.runs = 0;
        assert!(run_campaign(&cfg).is_err());
    }

    #[test]
    fn total_cost_matches_hand_computation() {
        // Two feasible steps: x0=(1,0) u0=0.1 → x1=(0.5,0), u1=-0.2,
        // final state (0.25, 0.1); Q=diag(1,10), R=1, regulation.
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 10.0]));
        let r = DMatrix::identity(1, 1);
        let rows = vec![
            TranscriptRow {
                k: 0,
                x: DVector::from_vec(vec![1.0, 0.0]),
                xhat: DVector::from_vec(vec![1.0, 0.0]),
                u: DVector::from_vec(vec![0.1]),
                feasible: true,
                solve_time_ms: 0.0,
                in_x: true,
            },
            TranscriptRow {
                k: 1,
                x: DVector::from_vec(vec![0.5, 0.0]),
                xhat: DVector::from_vec(vec![0.5, 0.0]),
                u: DVector::from_vec(vec![-0.2]),
                feasible: true,
                solve_time_ms: 0.0,
                in_x: true,
            },
        ];
        let final_state = DVector::from_vec(vec![0.25, 0.1]);
        // J = (e1ᵀQe1 + u0²) + (e2ᵀQe2 + u1²)
        //   = (0.25 + 0 + 0.01) + (0.0625 + 10·0.01 + 0.04) = 0.4625.
        let j = total_cost(&rows, &q, &r, None, &final_state);
        assert!((j - 0.4625).abs() < 1e-12, "J_tot = {j}");
    }

    #[test]
    fn campaign_runs_feasibly_at_small_noise() {
        let result = tiny_result();
        assert_eq!(result.scenarios.len(), 1);
        let sc = &result.scenarios[0];
        assert!(sc.skipped.is_none(), "skipped: {:?}", sc.skipped);
        assert_eq!(sc.runs.len(), 3);
        for run in &sc.runs {
            assert_eq!(run.infeasible_steps, 0);
            assert_eq!(run.transcript.len(), 6);
            assert!(run.j_tot.is_finite());
        }
        assert!(check_gates(result).is_empty(), "{:?}", check_gates(result));
    }

    #[test]
    fn campaign_is_deterministic() {
        let a = run_campaign(&tiny_config()).unwrap();
        let b = tiny_result();
        for (sa, sb) in a.scenarios.iter().zip(&b.scenarios) {
            for (ra, rb) in sa.runs.iter().zip(&sb.runs) {
                assert_eq!(ra.j_tot.to_bits(), rb.j_tot.to_bits());
                assert_eq!(ra.x0, rb.x0);
                assert_eq!(ra.resamples, rb.resamples);
                for (ta, tb) in ra.transcript.iter().zip(&rb.transcript) {
                    assert_eq!(ta.x, tb.x);
                    assert_eq!(ta.u, tb.u);
                }
            }
        }
    }

    #[test]
    fn single_run_quartiles_collapse() {
        let result = tiny_result();
        let mut one = result.clone();
        one.scenarios[0].runs.truncate(1);
        let summary = summarize(&one);
        let q = summary.scenarios[0].j_quartiles;
        let j = one.scenarios[0].runs[0].j_tot;
        for v in q {
            assert_eq!(v.to_bits(), j.to_bits());
        }
    }

    #[test]
    fn violation_rate_counts_planted_violations() {
        let mut result = tiny_result().clone();
        let sc = &mut result.scenarios[0];
        // Plant 3 state violations across the transcripts.
        sc.runs[0].state_violations = 2;
        sc.runs[0].transcript[1].in_x = false;
        sc.runs[0].transcript[3].in_x = false;
        sc.runs[1].state_violations = 1;
        sc.runs[1].transcript[2].in_x = false;
        let summary = summarize(&result);
        let steps_total: usize = result.scenarios[0]
            .runs
            .iter()
            .map(|r| r.transcript.len())
            .sum();
        let expect = 3.0 / steps_total as f64;
        assert!((summary.scenarios[0].state_violation_rate - expect).abs() < 1e-15);
        // The planted rows also depress the per-step satisfaction.
        assert!(summary.scenarios[0].min_per_step_in_x < 1.0);
        assert!(!check_gates(&result).is_empty());
    }

    #[test]
    fn quantile_linear_interpolation() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
    }

    #[test]
    fn config_text_parses_and_overrides_preset() {
        let text = "\
# campaign
preset = paper-5.1
runs = 10
noise_bounds = 0.001, 0.01
x_ref = 0, 1.4
master_seed = 99
";
        let cfg = CampaignConfig::from_text(text).unwrap();
        assert_eq!(cfg.runs, 10);
        assert_eq!(cfg.noise_bounds, vec![0.001, 0.01]);
        assert_eq!(cfg.x_ref.as_ref().unwrap()[1], 1.4);
        assert_eq!(cfg.master_seed, 99);
        // Preset defaults survive for untouched keys.
        assert_eq!(cfg.horizon, 6);
        assert_eq!(cfg.steps, 30);

        assert!(CampaignConfig::from_text("bogus_key = 1").is_err());
        assert!(CampaignConfig::from_text("runs = 0").is_err());
    }

    #[test]
    fn transcript_csv_layout() {
        let result = tiny_result();
        let run = &result.scenarios[0].runs[0];
        let csv = transcript_csv(run, 2, 1);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,x_1,x_2,xhat_1,xhat_2,u_1,feasible,solve_time_ms,in_X"
        );
        assert_eq!(lines.count(), run.transcript.len());
    }
}
