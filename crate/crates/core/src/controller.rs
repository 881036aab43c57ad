//! Offline synthesis and the online per-step optimal control problem.
//!
//! `synthesize` runs the full offline pipeline on one recorded trajectory
//! and freezes everything the online phase needs into a
//! [`ControllerArtifact`]: the sampled-and-reduced constraint set ℂ, the
//! first-step set ℂ_R, the robust invariant set Z_∞, the quadratic cost
//! form, and the descriptors needed to reproduce the run. The artifact is
//! immutable; [`OnlineController`] holds the per-session mutable state
//! (warm starts), so several sessions may share one artifact.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::cost::{estimate_cost_form, CostForm, CostWeights};
use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::hankel::{check_pe, HankelBundle, TrajectoryData};
use crate::invariance::{
    build_first_step_constraint, compute_z_inf, compute_z_l, initial_condition_set, FixedPoint,
};
use crate::noise::{
    estimate_entry_intervals, estimate_rho, NoiseModel, NormKind, RhoSearchConfig, SystemBound,
    VertexMode,
};
use crate::rng::stream;
use crate::scenario::{
    assemble_constraint_set, build_sampled_rows, draw_ensemble_counted, ConstraintSet,
    ScenarioConfig,
};
use crate::solver::lp::{solve_lp, LinearProgram, Status};
use crate::solver::qp::{solve_qp_warm, QuadraticProgram, WarmStart};

/// Artifact container version written in the file header.
pub const ARTIFACT_VERSION: u32 = 1;
/// Rank tolerance for the persistency-of-excitation check.
pub const PE_RANK_TOL: f64 = 1e-8;
/// Rows active within this tolerance feed the next warm start.
const ACTIVE_TOL: f64 = 1e-7;

/// RNG stream ids derived from the master seed (one per stochastic stage,
/// so stages stay reproducible independently of each other).
pub const STREAM_ENSEMBLE: u64 = 1;
pub const STREAM_COST: u64 = 2;
pub const STREAM_BOUND: u64 = 3;

/// How the admissible system-matrix set 𝔸 is obtained.
#[derive(Debug, Clone)]
pub enum BoundMode {
    /// Uniform entrywise box `±ρ̂` from the induced-norm ascent.
    RhoBox(NormKind),
    /// Entrywise intervals from the per-entry ascent.
    EntryIntervals,
    /// Caller-supplied bound (skips estimation).
    Supplied(SystemBound),
}

/// Everything `synthesize` needs besides the trajectory.
#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    pub horizon: usize,
    /// Chance-constraint probability level p.
    pub p: f64,
    /// Scenario confidence β.
    pub beta: f64,
    /// Noise support half-width ε̄ (box support).
    pub noise_bound: f64,
    /// Std of the truncated Gaussian as a fraction of ε̄.
    pub std_factor: f64,
    pub x_poly: Polytope,
    pub u_poly: Polytope,
    pub weights: CostWeights,
    /// Sample-average count for the cost form.
    pub saa_count: usize,
    /// Explicit scenario count (must be ≥ the computed bound).
    pub num_samples: Option<usize>,
    pub bound_mode: BoundMode,
    pub rho_search: RhoSearchConfig,
    pub max_invariance_iter: usize,
    /// Constant state reference; `None` means regulation to the origin.
    pub x_ref: Option<DVector<f64>>,
    pub master_seed: u64,
}

impl SynthesisConfig {
    fn validate(&self, data: &TrajectoryData) -> Result<()> {
        if !(0.0 < self.p && self.p < 1.0) || !(0.0 < self.beta && self.beta < 1.0) {
            return Err(Error::config("p and beta must lie in (0, 1)"));
        }
        if self.noise_bound < 0.0 || self.std_factor < 0.0 {
            return Err(Error::config("noise bound and std factor must be nonnegative"));
        }
        if self.saa_count == 0 {
            return Err(Error::config("saa_count must be at least 1"));
        }
        if self.max_invariance_iter == 0 {
            return Err(Error::config("max_invariance_iter must be at least 1"));
        }
        if self.weights.horizon() != self.horizon {
            return Err(Error::config("cost weights horizon does not match config"));
        }
        if self.x_poly.dim() != data.n || self.u_poly.dim() != data.m {
            return Err(Error::config("state/input set dimensions do not match the data"));
        }
        if let Some(r) = &self.x_ref {
            if r.len() != data.n {
                return Err(Error::config("x_ref dimension does not match the data"));
            }
        }
        Ok(())
    }
}

/// Row counts and estimation outcomes of one synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisReport {
    pub num_samples: usize,
    /// Applied half-width factor on the estimated system bound (1.0 when
    /// the bound was used as estimated).
    pub bound_shrink: f64,
    pub ensemble_redraws: usize,
    pub cost_redraws: usize,
    pub raw_rows: usize,
    pub dedup_rows: usize,
    pub reduced_rows: usize,
    pub rho_hat: f64,
    pub z_inf_iterations: usize,
    pub z_inf_rows: usize,
    pub first_step_rows: usize,
    pub init_set_rows: usize,
    /// Constant cost offset c (logged, never part of the solved objective).
    pub cost_constant: f64,
}

/// The frozen offline output. Contains no plant matrices — only
/// quantities estimated from the recorded trajectory.
#[derive(Debug, Clone)]
pub struct ControllerArtifact {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// Length of the trajectory the artifact was synthesized from.
    pub data_len: usize,
    pub cost: CostForm,
    pub constraints: ConstraintSet,
    /// First-step set ℂ_R embedded in the full decision space.
    pub first_step: Polytope,
    pub z_inf: Polytope,
    pub init_set: Polytope,
    pub scenario: ScenarioConfig,
    pub noise: NoiseModel,
    pub bound: SystemBound,
    pub x_ref: Option<DVector<f64>>,
    pub master_seed: u64,
}

impl ControllerArtifact {
    /// Full decision dimension `n + (L+1)m`.
    pub fn decision_dim(&self) -> usize {
        self.n + (self.horizon + 1) * self.m
    }
}

/// Run the offline pipeline. Every stage failure carries a stage tag.
pub fn synthesize(
    data: &TrajectoryData,
    config: &SynthesisConfig,
) -> Result<(ControllerArtifact, SynthesisReport)> {
    let n = data.n;
    let m = data.m;
    let horizon = config.horizon;
    config.validate(data)?;

    // Persistency of excitation of order n + L + 1 (input sequence).
    let pe_order = n + horizon + 1;
    let pe = check_pe(&data.inputs, pe_order, PE_RANK_TOL)
        .map_err(|e| e.in_stage("pe-validation"))?;
    if !pe {
        return Err(Error::input(format!(
            "input data not persistently exciting of order n+L+1 = {pe_order}"
        ))
        .in_stage("pe-validation"));
    }

    let bundle = HankelBundle::new(data, horizon).map_err(|e| e.in_stage("pe-validation"))?;

    let mut scenario = ScenarioConfig::new(n, m, horizon, config.p, config.beta)
        .map_err(|e| e.in_stage("sample-complexity"))?;
    if let Some(count) = config.num_samples {
        scenario = scenario
            .with_override(count)
            .map_err(|e| e.in_stage("sample-complexity"))?;
    }

    let noise = NoiseModel::box_model(n, config.noise_bound, config.std_factor)
        .map_err(|e| e.in_stage("noise-model"))?;

    let mut rng = stream(config.master_seed, STREAM_ENSEMBLE);
    let (ensemble, ensemble_redraws) =
        draw_ensemble_counted(&bundle, &noise, scenario.num_samples, &mut rng)
            .map_err(|e| e.in_stage("ensemble"))?;

    let mut rng = stream(config.master_seed, STREAM_COST);
    let mut cost = estimate_cost_form(&bundle, &noise, &config.weights, config.saa_count, &mut rng)
        .map_err(|e| e.in_stage("cost"))?;
    if let Some(x_ref) = &config.x_ref {
        cost = cost.with_reference(x_ref).map_err(|e| e.in_stage("cost"))?;
    }

    let (rows, rhs) = build_sampled_rows(&ensemble, &config.x_poly, n, horizon)
        .map_err(|e| e.in_stage("sampled-rows"))?;
    let constraints = assemble_constraint_set(rows, rhs, &config.u_poly, n, m, horizon)
        .map_err(|e| e.in_stage("constraint-set"))?;

    let z_l = compute_z_l(&constraints.set, n).map_err(|e| e.in_stage("z-l"))?;
    if z_l.is_empty().map_err(|e| e.in_stage("z-l"))? {
        return Err(Error::EmptySet("feasible initial-state set Z_L is empty".into())
            .in_stage("z-l"));
    }

    let base_bound = match &config.bound_mode {
        BoundMode::RhoBox(norm) => {
            let mut rng = stream(config.master_seed, STREAM_BOUND);
            let est = estimate_rho(data, &noise, *norm, &config.rho_search, &mut rng)
                .map_err(|e| e.in_stage("system-bound"))?;
            SystemBound::from_rho(est.inflated, n, m, VertexMode::Interval, *norm)
                .map_err(|e| e.in_stage("system-bound"))?
        }
        BoundMode::EntryIntervals => {
            let mut rng = stream(config.master_seed, STREAM_BOUND);
            let (lo, hi) = estimate_entry_intervals(data, &noise, &config.rho_search, &mut rng)
                .map_err(|e| e.in_stage("system-bound"))?;
            SystemBound::from_intervals(lo, hi, VertexMode::Interval, NormKind::Inf)
                .map_err(|e| e.in_stage("system-bound"))?
        }
        BoundMode::Supplied(b) => {
            if b.n != n || b.m != m {
                return Err(Error::config("supplied system bound has wrong dimensions")
                    .in_stage("system-bound"));
            }
            b.clone()
        }
    };

    // A robust control invariant set exists only when the system bound is
    // suitably tight for the constraint geometry. Estimated intervals at
    // large noise can be too wide for any invariant set to exist; shrink
    // the half-widths about their midpoints and retry, recording the
    // factor in the report. Supplied bounds are never modified.
    let mut bound_shrink = 1.0f64;
    let mut bound = base_bound.clone();
    let (fixed, first_step, init_set) = loop {
        let attempt = invariance_attempt(
            &z_l,
            &bound,
            &noise,
            &constraints.set,
            config,
            n,
            m,
            horizon,
        );
        match attempt {
            Ok(out) => break out,
            Err(e) => {
                let retryable = matches!(
                    unwrap_stage(&e),
                    Error::EmptySet(_) | Error::Numerical(_)
                ) && !matches!(config.bound_mode, BoundMode::Supplied(_))
                    && bound_shrink > 1e-3;
                if !retryable {
                    return Err(e);
                }
                bound_shrink *= 0.5;
                let mid = (&base_bound.lo + &base_bound.hi) * 0.5;
                let half = (&base_bound.hi - &base_bound.lo) * (0.5 * bound_shrink);
                bound = SystemBound::from_intervals(
                    &mid - &half,
                    &mid + &half,
                    VertexMode::Interval,
                    base_bound.norm_kind,
                )
                .map_err(|e| e.in_stage("system-bound"))?;
            }
        }
    };

    let report = SynthesisReport {
        num_samples: scenario.num_samples,
        bound_shrink,
        ensemble_redraws,
        cost_redraws: cost.redraws,
        raw_rows: constraints.raw_rows,
        dedup_rows: constraints.dedup_rows,
        reduced_rows: constraints.reduced_rows,
        rho_hat: bound.rho_hat,
        z_inf_iterations: fixed.iterations,
        z_inf_rows: fixed.z_inf.num_rows(),
        first_step_rows: first_step.num_rows(),
        init_set_rows: init_set.num_rows(),
        cost_constant: cost.c,
    };
    let artifact = ControllerArtifact {
        version: ARTIFACT_VERSION,
        n,
        m,
        horizon,
        data_len: data.len(),
        cost,
        constraints,
        first_step,
        z_inf: fixed.z_inf,
        init_set,
        scenario,
        noise,
        bound,
        x_ref: config.x_ref.clone(),
        master_seed: config.master_seed,
    };
    Ok((artifact, report))
}

/// The invariance stages for one candidate system bound: Z_∞, ℂ_R, the
/// admissible initial set, and the ℂ ∩ ℂ_R nonemptiness check.
#[allow(clippy::too_many_arguments)]
fn invariance_attempt(
    z_l: &Polytope,
    bound: &SystemBound,
    noise: &NoiseModel,
    c_set: &Polytope,
    config: &SynthesisConfig,
    n: usize,
    m: usize,
    horizon: usize,
) -> Result<(FixedPoint, Polytope, Polytope)> {
    let fixed = compute_z_inf(
        z_l,
        bound,
        &config.u_poly,
        &noise.support,
        config.max_invariance_iter,
    )
    .map_err(|e| e.in_stage("z-inf"))?;
    if !fixed.converged {
        return Err(Error::Numerical(format!(
            "invariant-set recursion did not converge in {} iterations",
            config.max_invariance_iter
        ))
        .in_stage("z-inf"));
    }

    let first_step = build_first_step_constraint(&fixed.z_inf, bound, &noise.support, n, m, horizon)
        .map_err(|e| e.in_stage("first-step"))?;

    let init_set = initial_condition_set(&fixed.z_inf, noise).map_err(|e| e.in_stage("init-set"))?;
    if init_set.is_empty().map_err(|e| e.in_stage("init-set"))? {
        return Err(Error::EmptySet("admissible initial-state set is empty".into())
            .in_stage("init-set"));
    }

    // Theorem 1 can only hold when ℂ ∩ ℂ_R is nonempty.
    let both = c_set
        .intersect(&first_step)
        .map_err(|e| e.in_stage("nonemptiness"))?;
    if both.is_empty().map_err(|e| e.in_stage("nonemptiness"))? {
        return Err(Error::EmptySet(
            "sampled constraint set and first-step set do not intersect".into(),
        )
        .in_stage("nonemptiness"));
    }
    Ok((fixed, first_step, init_set))
}

/// Strip stage wrappers to reach the root error.
fn unwrap_stage(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => unwrap_stage(source),
        other => other,
    }
}

/// One accepted online decision.
#[derive(Debug, Clone)]
pub struct StepDecision {
    /// First input block, to be applied to the plant.
    pub u0: DVector<f64>,
    /// Full optimal sequence `u_0..u_L` (`u_L` pinned to zero).
    pub u_seq: DVector<f64>,
    /// Solved objective plus the x̂-only terms; the constant c excluded.
    pub objective: f64,
}

/// Outcome of one online solve.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Feasible(StepDecision),
    /// Farkas certificate of the fixed-x̂ constraint system.
    Infeasible { certificate: DVector<f64> },
}

/// Per-session online solver over a frozen artifact. Holds mutable
/// warm-start state, so use one instance per closed-loop session.
pub struct OnlineController<'a> {
    artifact: &'a ControllerArtifact,
    /// `2 S_UU` over the free inputs `u_0..u_{L−1}`.
    hessian: DMatrix<f64>,
    /// `S_xU` block (n × Lm).
    s_xu: DMatrix<f64>,
    /// `S_xx` block (n × n).
    s_xx: DMatrix<f64>,
    gamma_x: DVector<f64>,
    gamma_u: DVector<f64>,
    /// Stacked ℂ and ℂ_R rows, split at the x̂/u boundary (u_L dropped).
    g_x: DMatrix<f64>,
    g_u: DMatrix<f64>,
    g_rhs: DVector<f64>,
    warm: Option<WarmStart>,
    warm_enabled: bool,
}

impl<'a> OnlineController<'a> {
    pub fn new(artifact: &'a ControllerArtifact) -> Result<Self> {
        let n = artifact.n;
        let m = artifact.m;
        let dec_dim = artifact.decision_dim();
        let nu = artifact.horizon * m;
        if artifact.constraints.set.dim() != dec_dim || artifact.first_step.dim() != dec_dim {
            return Err(Error::input(
                "artifact constraint sets do not match the decision dimension",
            ));
        }
        if artifact.cost.s.nrows() != dec_dim {
            return Err(Error::input("artifact cost form does not match the decision dimension"));
        }

        let s = &artifact.cost.s;
        let mut hessian = 2.0 * s.view((n, n), (nu, nu)).clone_owned();
        // Re-symmetrize: the block view of a symmetric S is symmetric up
        // to floating error, and the QP rejects asymmetry.
        hessian = (&hessian + hessian.transpose()) * 0.5;
        let s_xu = s.view((0, n), (n, nu)).clone_owned();
        let s_xx = s.view((0, 0), (n, n)).clone_owned();
        let gamma_x = artifact.cost.gamma.rows(0, n).clone_owned();
        let gamma_u = artifact.cost.gamma.rows(n, nu).clone_owned();

        let rc = artifact.constraints.set.num_rows();
        let rr = artifact.first_step.num_rows();
        let mut g_x = DMatrix::zeros(rc + rr, n);
        let mut g_u = DMatrix::zeros(rc + rr, nu);
        let mut g_rhs = DVector::zeros(rc + rr);
        for (offset, p) in [(0, &artifact.constraints.set), (rc, &artifact.first_step)] {
            g_x.view_mut((offset, 0), (p.num_rows(), n))
                .copy_from(&p.rows().view((0, 0), (p.num_rows(), n)));
            g_u.view_mut((offset, 0), (p.num_rows(), nu))
                .copy_from(&p.rows().view((0, n), (p.num_rows(), nu)));
            g_rhs.rows_mut(offset, p.num_rows()).copy_from(p.rhs());
        }

        Ok(Self {
            artifact,
            hessian,
            s_xu,
            s_xx,
            gamma_x,
            gamma_u,
            g_x,
            g_u,
            g_rhs,
            warm: None,
            warm_enabled: true,
        })
    }

    pub fn artifact(&self) -> &ControllerArtifact {
        &self.artifact
    }

    /// Disable (or re-enable) warm starting; disabling also clears the
    /// stored state, for determinism audits.
    pub fn set_warm_start(&mut self, enabled: bool) {
        self.warm_enabled = enabled;
        if !enabled {
            self.warm = None;
        }
    }

    fn fixed_state_rhs(&self, x_meas: &DVector<f64>) -> DVector<f64> {
        &self.g_rhs - &self.g_x * x_meas
    }

    /// Solve the per-step OCP with x̂ fixed at the measurement and `u_L`
    /// pinned to zero.
    pub fn online_step(&mut self, x_meas: &DVector<f64>) -> Result<StepOutcome> {
        if x_meas.len() != self.artifact.n {
            return Err(Error::Dimension {
                context: "online_step state",
                expected: self.artifact.n,
                got: x_meas.len(),
            });
        }
        let linear = 2.0 * self.s_xu.transpose() * x_meas + &self.gamma_u;
        let rhs = self.fixed_state_rhs(x_meas);
        let qp = QuadraticProgram::new(
            self.hessian.clone(),
            linear,
            self.g_u.clone(),
            rhs.clone(),
        )?;
        let warm = if self.warm_enabled { self.warm.as_ref() } else { None };
        let res = solve_qp_warm(&qp, warm);
        match res.status {
            Status::Optimal => {
                let u = res.point.ok_or_else(|| {
                    Error::Numerical("QP reported optimal without a point".into())
                })?;
                if self.warm_enabled {
                    let slack = &self.g_u * &u - &rhs;
                    let scale = 1.0 + rhs.amax();
                    let active = (0..slack.len())
                        .filter(|&i| slack[i].abs() <= ACTIVE_TOL * scale)
                        .collect();
                    self.warm = Some(WarmStart {
                        point: u.clone(),
                        active,
                    });
                }
                let objective = qp.objective(&u)
                    + (x_meas.transpose() * &self.s_xx * x_meas)[(0, 0)]
                    + self.gamma_x.dot(x_meas);
                let m = self.artifact.m;
                let mut u_seq = DVector::zeros(u.len() + m);
                u_seq.rows_mut(0, u.len()).copy_from(&u);
                Ok(StepOutcome::Feasible(StepDecision {
                    u0: u.rows(0, m).clone_owned(),
                    u_seq,
                    objective,
                }))
            }
            Status::Infeasible => Ok(StepOutcome::Infeasible {
                certificate: res
                    .certificate
                    .unwrap_or_else(|| DVector::zeros(self.g_rhs.len())),
            }),
            Status::Unbounded => Err(Error::Numerical(
                "online QP unbounded: cost form is not positive definite over inputs".into(),
            )),
            Status::NumericalFailure => {
                Err(Error::Numerical("online QP solve failed numerically".into()))
            }
        }
    }

    /// Phase-1 feasibility of ℂ ∩ ℂ_R with x̂ fixed: realizes 𝔽(x̂) ≠ ∅.
    pub fn feasible_check(&self, x_meas: &DVector<f64>) -> Result<bool> {
        if x_meas.len() != self.artifact.n {
            return Err(Error::Dimension {
                context: "feasible_check state",
                expected: self.artifact.n,
                got: x_meas.len(),
            });
        }
        let rhs = self.fixed_state_rhs(x_meas);
        let lp = LinearProgram::new(DVector::zeros(self.g_u.ncols()), self.g_u.clone(), rhs)?;
        let res = solve_lp(&lp);
        match res.status {
            Status::Optimal | Status::Unbounded => Ok(true),
            Status::Infeasible => Ok(false),
            Status::NumericalFailure => {
                Err(Error::Numerical("feasibility LP failed numerically".into()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact file format: versioned sectioned text. Sections start with
// `@ name`; scalar sections hold `key value` lines, matrix/polytope
// sections hold the geometry text format (`r c` header then rows).
// ---------------------------------------------------------------------------

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("@ {name}\n{} {}\n", m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn write_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    write_matrix(out, name, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
}

fn parse_matrix(name: &str, body: &[String]) -> Result<DMatrix<f64>> {
    let header = body
        .first()
        .ok_or_else(|| Error::Parse(format!("artifact section {name}: missing header")))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("artifact section {name}: bad header: {e}")))?;
    if dims.len() != 2 {
        return Err(Error::Parse(format!("artifact section {name}: bad header")));
    }
    let (r, c) = (dims[0], dims[1]);
    if body.len() != r + 1 {
        return Err(Error::Parse(format!(
            "artifact section {name}: expected {r} rows, got {}",
            body.len() - 1
        )));
    }
    let mut m = DMatrix::zeros(r, c);
    for i in 0..r {
        let vals: Vec<f64> = body[i + 1]
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("artifact section {name} row {i}: {e}")))?;
        if vals.len() != c {
            return Err(Error::Parse(format!(
                "artifact section {name} row {i}: expected {c} values, got {}",
                vals.len()
            )));
        }
        for j in 0..c {
            m[(i, j)] = vals[j];
        }
    }
    Ok(m)
}

fn parse_vector(name: &str, body: &[String]) -> Result<DVector<f64>> {
    let m = parse_matrix(name, body)?;
    if m.ncols() != 1 {
        return Err(Error::Parse(format!("artifact section {name}: expected a column vector")));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

fn parse_polytope(name: &str, body: &[String]) -> Result<Polytope> {
    Polytope::from_text(&body.join("\n"))
        .map_err(|e| Error::Parse(format!("artifact section {name}: {e}")))
}

struct Sections {
    map: BTreeMap<String, Vec<String>>,
}

impl Sections {
    fn body(&self, name: &str) -> Result<&[String]> {
        self.map
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Parse(format!("artifact: missing section {name}")))
    }

    fn scalars(&self, name: &str) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for line in self.body(name)? {
            let mut it = line.split_whitespace();
            let key = it
                .next()
                .ok_or_else(|| Error::Parse(format!("artifact section {name}: empty line")))?;
            let val = it
                .next()
                .ok_or_else(|| Error::Parse(format!("artifact section {name}: {key} has no value")))?;
            out.insert(key.to_string(), val.to_string());
        }
        Ok(out)
    }
}

fn scalar<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    kv.get(key)
        .ok_or_else(|| Error::Parse(format!("artifact: missing key {key}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("artifact: bad value for {key}")))
}

impl ControllerArtifact {
    /// Serialize to the sectioned text container.
    pub fn to_text(&self) -> String {
        let mut out = format!("ddsmpc-artifact version {}\n", self.version);
        out.push_str("@ dims\n");
        out.push_str(&format!("n {}\nm {}\nhorizon {}\ndata_len {}\n", self.n, self.m, self.horizon, self.data_len));
        out.push_str("@ seeds\n");
        out.push_str(&format!("master_seed {}\n", self.master_seed));
        out.push_str("@ scenario\n");
        out.push_str(&format!(
            "p {:.17e}\nbeta {:.17e}\nd {}\nnum_samples {}\noverridden {}\n",
            self.scenario.p, self.scenario.beta, self.scenario.d, self.scenario.num_samples,
            self.scenario.overridden
        ));
        out.push_str("@ constraints\n");
        out.push_str(&format!(
            "raw_rows {}\ndedup_rows {}\nreduced_rows {}\n",
            self.constraints.raw_rows, self.constraints.dedup_rows, self.constraints.reduced_rows
        ));
        out.push_str("@ cost\n");
        out.push_str(&format!(
            "c {:.17e}\nsaa_count {}\nredraws {}\n",
            self.cost.c, self.cost.saa_count, self.cost.redraws
        ));
        write_matrix(&mut out, "cost.s", &self.cost.s);
        write_vector(&mut out, "cost.gamma", &self.cost.gamma);
        write_matrix(&mut out, "cost.e_mtq", self.cost.e_mtq());
        write_vector(&mut out, "cost.e_wmtq", self.cost.e_wmtq());
        write_matrix(&mut out, "cost.q_tilde", self.cost.q_tilde_ref());
        out.push_str("@ noise.support\n");
        out.push_str(&self.noise.support.to_text());
        write_vector(&mut out, "noise.scale", &self.noise.scale);
        out.push_str("@ bound\n");
        let norm = match self.bound.norm_kind {
            NormKind::Inf => "inf",
            NormKind::One => "one",
        };
        out.push_str(&format!("norm {norm}\n"));
        write_matrix(&mut out, "bound.lo", &self.bound.lo);
        write_matrix(&mut out, "bound.hi", &self.bound.hi);
        out.push_str("@ constraints.set\n");
        out.push_str(&self.constraints.set.to_text());
        out.push_str("@ first_step\n");
        out.push_str(&self.first_step.to_text());
        out.push_str("@ z_inf\n");
        out.push_str(&self.z_inf.to_text());
        out.push_str("@ init_set\n");
        out.push_str(&self.init_set.to_text());
        if let Some(x_ref) = &self.x_ref {
            write_vector(&mut out, "x_ref", x_ref);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ControllerArtifact> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("artifact: empty file".into()))?;
        let mut it = header.split_whitespace();
        if it.next() != Some("ddsmpc-artifact") || it.next() != Some("version") {
            return Err(Error::Parse("artifact: bad header line".into()));
        }
        let version: u32 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("artifact: bad version".into()))?;
        if version != ARTIFACT_VERSION {
            return Err(Error::Parse(format!(
                "artifact: unsupported version {version} (expected {ARTIFACT_VERSION})"
            )));
        }

        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix("@ ") {
                let name = name.trim().to_string();
                if map.insert(name.clone(), Vec::new()).is_some() {
                    return Err(Error::Parse(format!("artifact: duplicate section {name}")));
                }
                current = Some(name);
            } else {
                let name = current
                    .as_ref()
                    .ok_or_else(|| Error::Parse("artifact: data before first section".into()))?;
                map.get_mut(name).unwrap().push(line.to_string());
            }
        }
        let sections = Sections { map };

        let dims = sections.scalars("dims")?;
        let n: usize = scalar(&dims, "n")?;
        let m: usize = scalar(&dims, "m")?;
        let horizon: usize = scalar(&dims, "horizon")?;
        let data_len: usize = scalar(&dims, "data_len")?;
        let seeds = sections.scalars("seeds")?;
        let master_seed: u64 = scalar(&seeds, "master_seed")?;

        let sc = sections.scalars("scenario")?;
        let scenario = ScenarioConfig {
            p: scalar(&sc, "p")?,
            beta: scalar(&sc, "beta")?,
            d: scalar(&sc, "d")?,
            horizon,
            num_samples: scalar(&sc, "num_samples")?,
            overridden: scalar(&sc, "overridden")?,
        };

        let ck = sections.scalars("constraints")?;
        let cost_kv = sections.scalars("cost")?;
        let cost = CostForm::from_parts(
            parse_matrix("cost.s", sections.body("cost.s")?)?,
            parse_vector("cost.gamma", sections.body("cost.gamma")?)?,
            scalar(&cost_kv, "c")?,
            scalar(&cost_kv, "saa_count")?,
            scalar(&cost_kv, "redraws")?,
            parse_matrix("cost.e_mtq", sections.body("cost.e_mtq")?)?,
            parse_vector("cost.e_wmtq", sections.body("cost.e_wmtq")?)?,
            parse_matrix("cost.q_tilde", sections.body("cost.q_tilde")?)?,
            n,
            m,
            horizon,
        )?;

        let noise = NoiseModel::new(
            parse_polytope("noise.support", sections.body("noise.support")?)?,
            parse_vector("noise.scale", sections.body("noise.scale")?)?,
        )?;

        let bk = sections.scalars("bound")?;
        let norm = match bk.get("norm").map(String::as_str) {
            Some("inf") => NormKind::Inf,
            Some("one") => NormKind::One,
            _ => return Err(Error::Parse("artifact: bad bound norm".into())),
        };
        let bound = SystemBound::from_intervals(
            parse_matrix("bound.lo", sections.body("bound.lo")?)?,
            parse_matrix("bound.hi", sections.body("bound.hi")?)?,
            VertexMode::Interval,
            norm,
        )?;

        let constraints = ConstraintSet {
            set: parse_polytope("constraints.set", sections.body("constraints.set")?)?,
            raw_rows: scalar(&ck, "raw_rows")?,
            dedup_rows: scalar(&ck, "dedup_rows")?,
            reduced_rows: scalar(&ck, "reduced_rows")?,
            n,
            m,
            horizon,
        };
        let first_step = parse_polytope("first_step", sections.body("first_step")?)?;
        let z_inf = parse_polytope("z_inf", sections.body("z_inf")?)?;
        let init_set = parse_polytope("init_set", sections.body("init_set")?)?;
        let x_ref = match sections.map.get("x_ref") {
            Some(body) => Some(parse_vector("x_ref", body)?),
            None => None,
        };

        let dec_dim = n + (horizon + 1) * m;
        if constraints.set.dim() != dec_dim || first_step.dim() != dec_dim {
            return Err(Error::Parse("artifact: constraint dimension mismatch".into()));
        }
        if z_inf.dim() != n || init_set.dim() != n || noise.dim() != n {
            return Err(Error::Parse("artifact: state dimension mismatch".into()));
        }

        Ok(ControllerArtifact {
            version,
            n,
            m,
            horizon,
            data_len,
            cost,
            constraints,
            first_step,
            z_inf,
            init_set,
            scenario,
            noise,
            bound,
            x_ref,
            master_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{collect_data, paper_plant, PlantModel};
    use crate::solver::qp::solve_qp;
    use std::sync::OnceLock;

    const L: usize = 3;
    const SEED: u64 = 41;

    fn weights(horizon: usize) -> CostWeights {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 10.0]));
        CostWeights::new(q.clone(), DMatrix::identity(1, 1), q, horizon).unwrap()
    }

    fn base_config(noise_bound: f64) -> SynthesisConfig {
        SynthesisConfig {
            horizon: L,
            p: 0.5,
            beta: 0.9,
            noise_bound,
            std_factor: 1.0 / 3.0,
            x_poly: Polytope::inf_ball(2, 2.8),
            u_poly: Polytope::inf_ball(1, 0.2),
            weights: weights(L),
            saa_count: 200,
            num_samples: None,
            bound_mode: BoundMode::EntryIntervals,
            rho_search: RhoSearchConfig {
                starts: 2,
                sweeps: 2,
                grid: 3,
                safety: 1.1,
            },
            max_invariance_iter: 50,
            x_ref: None,
            master_seed: SEED,
        }
    }

    fn make(noise_bound: f64) -> (PlantModel, TrajectoryData, ControllerArtifact, SynthesisReport) {
        let plant = paper_plant(noise_bound, 1.0 / 3.0).unwrap();
        let mut rng = stream(SEED, 900);
        let (data, _) = collect_data(
            &plant,
            30,
            &Polytope::inf_ball(1, 0.2),
            L,
            &DVector::zeros(2),
            &mut rng,
        )
        .unwrap();
        let (artifact, report) = synthesize(&data, &base_config(noise_bound)).unwrap();
        (plant, data, artifact, report)
    }

    fn noisy_fixture() -> &'static (PlantModel, TrajectoryData, ControllerArtifact, SynthesisReport)
    {
        static CELL: OnceLock<(PlantModel, TrajectoryData, ControllerArtifact, SynthesisReport)> =
            OnceLock::new();
        CELL.get_or_init(|| make(0.002))
    }

    fn zero_noise_fixture(
    ) -> &'static (PlantModel, TrajectoryData, ControllerArtifact, SynthesisReport) {
        static CELL: OnceLock<(PlantModel, TrajectoryData, ControllerArtifact, SynthesisReport)> =
            OnceLock::new();
        CELL.get_or_init(|| make(0.0))
    }

    #[test]
    fn synthesis_produces_consistent_artifact() {
        let (_, _, artifact, report) = noisy_fixture();
        let dec_dim = artifact.decision_dim();
        assert_eq!(artifact.constraints.set.dim(), dec_dim);
        assert_eq!(artifact.first_step.dim(), dec_dim);
        assert_eq!(artifact.z_inf.dim(), 2);
        assert!(report.num_samples >= 100);
        assert!(report.reduced_rows <= report.raw_rows);
        // ℂ ∩ ℂ_R nonempty (re-check the synthesis invariant).
        let both = artifact.constraints.set.intersect(&artifact.first_step).unwrap();
        assert!(!both.is_empty().unwrap());
        assert!(!artifact.init_set.is_empty().unwrap());
    }

    #[test]
    fn non_pe_data_rejected_with_stage_tag() {
        let constant_u = vec![DVector::from_element(1, 0.1); 30];
        let plant = paper_plant(0.0, 0.0).unwrap();
        let mut rng = stream(SEED, 901);
        let mut states = vec![DVector::from_vec(vec![0.1, 0.1])];
        for u in &constant_u[..29] {
            let (x, _) = plant.step(states.last().unwrap(), u, &mut rng).unwrap();
            states.push(x);
        }
        let data = TrajectoryData::new(constant_u, states).unwrap();
        let err = synthesize(&data, &base_config(0.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pe-validation"), "missing stage tag: {msg}");
        assert!(msg.contains("n+L+1"), "missing PE order: {msg}");
    }

    /// Zero-noise closed loop equals certainty-equivalence MPC built
    /// directly from the exact plant matrices (test-side oracle).
    #[test]
    fn zero_noise_matches_certainty_equivalence_mpc() {
        let (plant, _, artifact, _) = zero_noise_fixture();
        let mut ctrl = OnlineController::new(artifact).unwrap();
        ctrl.set_warm_start(false);

        // Oracle: dense nominal MPC. x_l = A^l x + Σ_j A^{l-1-j} B u_j.
        let n = 2;
        let nu = L; // m = 1
        let w = weights(L);
        let mut phi_x = vec![DMatrix::identity(n, n)]; // A^l
        for _ in 0..L {
            phi_x.push(&plant.a * phi_x.last().unwrap());
        }
        // Gain of u_j on x_l.
        let gain = |l: usize, j: usize| -> DMatrix<f64> {
            if j < l {
                &phi_x[l - 1 - j] * &plant.b
            } else {
                DMatrix::zeros(n, 1)
            }
        };
        let oracle = |x: &DVector<f64>| -> DVector<f64> {
            // Cost: Σ_{l=1..L-1} x_lᵀQx_l + x_LᵀPx_L + Σ u_lᵀRu_l.
            let mut h = DMatrix::zeros(nu, nu);
            let mut f = DVector::zeros(nu);
            for l in 1..=L {
                let wq = if l == L { w.p() } else { w.q() };
                for a in 0..nu {
                    let ga = gain(l, a);
                    let proj = wq * (&phi_x[l] * x);
                    f[a] += 2.0 * (ga.transpose() * &proj)[(0, 0)];
                    for b in 0..nu {
                        h[(a, b)] += 2.0 * (ga.transpose() * wq * gain(l, b))[(0, 0)];
                    }
                }
            }
            for a in 0..nu {
                h[(a, a)] += 2.0 * w.r()[(0, 0)];
            }
            h = (&h + h.transpose()) * 0.5;
            // Constraints: |u_l| ≤ 0.2, |x_l|∞ ≤ 2.8 for l = 1..L.
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            for a in 0..nu {
                let mut r = vec![0.0; nu];
                r[a] = 1.0;
                rows.push(r.clone());
                rhs.push(0.2);
                r[a] = -1.0;
                rows.push(r);
                rhs.push(0.2);
            }
            for l in 1..=L {
                for dim in 0..n {
                    for sign in [1.0, -1.0] {
                        let mut r = vec![0.0; nu];
                        for (a, item) in r.iter_mut().enumerate() {
                            *item = sign * gain(l, a)[(dim, 0)];
                        }
                        rows.push(r);
                        rhs.push(2.8 - sign * (&phi_x[l] * x)[dim]);
                    }
                }
            }
            let rn = rows.len();
            let ineq = DMatrix::from_fn(rn, nu, |i, j| rows[i][j]);
            let qp = QuadraticProgram::new(h, f, ineq, DVector::from_vec(rhs)).unwrap();
            let res = solve_qp(&qp);
            assert_eq!(res.status, Status::Optimal);
            res.point.unwrap()
        };

        // Roll the exact plant; compare the applied input at every step.
        let mut x = DVector::from_vec(vec![0.3, -1.0]);
        for _ in 0..8 {
            let out = ctrl.online_step(&x).unwrap();
            let StepOutcome::Feasible(dec) = out else {
                panic!("unexpected infeasibility in the zero-noise loop")
            };
            let u_ref = oracle(&x);
            assert!(
                (dec.u0[0] - u_ref[0]).abs() < 1e-6,
                "controller {} vs oracle {}",
                dec.u0[0],
                u_ref[0]
            );
            x = &plant.a * &x + &plant.b * dec.u0.clone();
        }
    }

    /// Deep-interior state: the solution matches the unconstrained
    /// KKT system u* = −(S_UU)⁻¹ (S_Uxᵀ x + γ_U / 2).
    #[test]
    fn interior_step_matches_closed_form() {
        let (_, _, artifact, _) = zero_noise_fixture();
        let mut ctrl = OnlineController::new(artifact).unwrap();
        let x = DVector::from_vec(vec![0.01, 0.02]);
        let out = ctrl.online_step(&x).unwrap();
        let StepOutcome::Feasible(dec) = out else { panic!("expected feasible") };

        let n = 2;
        let nu = L;
        let s_uu = artifact.cost.s.view((n, n), (nu, nu)).clone_owned();
        let s_xu = artifact.cost.s.view((0, n), (n, nu)).clone_owned();
        let gamma_u = artifact.cost.gamma.rows(n, nu).clone_owned();
        let rhs = -(s_xu.transpose() * &x + gamma_u * 0.5);
        let u_free = s_uu.lu().solve(&rhs).unwrap();
        let u_opt = dec.u_seq.rows(0, nu).clone_owned();
        assert!(
            (&u_opt - &u_free).amax() < 1e-8,
            "constrained {u_opt} vs free {u_free}"
        );
    }

    #[test]
    fn warm_start_is_objective_neutral() {
        let (plant, _, artifact, _) = noisy_fixture();
        let mut warm_ctrl = OnlineController::new(artifact).unwrap();
        let mut cold_ctrl = OnlineController::new(artifact).unwrap();
        cold_ctrl.set_warm_start(false);
        let mut rng = stream(SEED, 902);
        let mut x = artifact.init_set.feasible_point().unwrap().unwrap();
        let mut xhat = x.clone();
        for _ in 0..10 {
            let a = warm_ctrl.online_step(&xhat).unwrap();
            let b = cold_ctrl.online_step(&xhat).unwrap();
            let (StepOutcome::Feasible(da), StepOutcome::Feasible(db)) = (a, b) else {
                panic!("loop left the feasible region")
            };
            assert!(
                (da.objective - db.objective).abs() <= 1e-7 * (1.0 + db.objective.abs()),
                "warm {} vs cold {}",
                da.objective,
                db.objective
            );
            let (x_next, meas) = plant.step(&x, &da.u0, &mut rng).unwrap();
            x = x_next;
            xhat = meas;
        }
    }

    /// Pinning u_L to zero never changes u₀ in the zero-noise artifact.
    #[test]
    fn terminal_input_pin_is_neutral() {
        let (_, _, artifact, _) = zero_noise_fixture();
        let mut ctrl = OnlineController::new(artifact).unwrap();
        let n = 2;
        let nu_full = L + 1;
        for x in [
            DVector::from_vec(vec![0.3, -1.0]),
            DVector::from_vec(vec![-0.5, 0.8]),
            DVector::from_vec(vec![0.0, 1.5]),
        ] {
            let StepOutcome::Feasible(pinned) = ctrl.online_step(&x).unwrap() else {
                panic!("expected feasible")
            };
            // Unpinned solve over all of u_0..u_L.
            let s_uu = 2.0 * artifact.cost.s.view((n, n), (nu_full, nu_full)).clone_owned();
            let s_uu = (&s_uu + s_uu.transpose()) * 0.5;
            let s_xu = artifact.cost.s.view((0, n), (n, nu_full)).clone_owned();
            let gamma_u = artifact.cost.gamma.rows(n, nu_full).clone_owned();
            let linear = 2.0 * s_xu.transpose() * &x + gamma_u;
            let rc = artifact.constraints.set.num_rows();
            let rr = artifact.first_step.num_rows();
            // No constraint row touches u_L, so box it loosely to keep
            // the free solve bounded; this cannot affect u_0.
            let mut g_u = DMatrix::zeros(rc + rr + 2, nu_full);
            let mut rhs = DVector::zeros(rc + rr + 2);
            for (offset, p) in [(0, &artifact.constraints.set), (rc, &artifact.first_step)] {
                g_u.view_mut((offset, 0), (p.num_rows(), nu_full))
                    .copy_from(&p.rows().view((0, n), (p.num_rows(), nu_full)));
                let shift = p.rows().view((0, 0), (p.num_rows(), n)) * &x;
                for i in 0..p.num_rows() {
                    rhs[offset + i] = p.rhs()[i] - shift[i];
                }
            }
            g_u[(rc + rr, nu_full - 1)] = 1.0;
            rhs[rc + rr] = 10.0;
            g_u[(rc + rr + 1, nu_full - 1)] = -1.0;
            rhs[rc + rr + 1] = 10.0;
            let qp = QuadraticProgram::new(s_uu, linear, g_u, rhs).unwrap();
            let res = solve_qp(&qp);
            assert_eq!(res.status, Status::Optimal);
            let free = res.point.unwrap();
            assert!(
                (pinned.u0[0] - free[0]).abs() < 1e-6,
                "pinned {} vs free {}",
                pinned.u0[0],
                free[0]
            );
        }
    }

    #[test]
    fn far_state_is_infeasible_with_certificate() {
        let (_, _, artifact, _) = noisy_fixture();
        let mut ctrl = OnlineController::new(artifact).unwrap();
        let x = DVector::from_vec(vec![100.0, 100.0]);
        match ctrl.online_step(&x).unwrap() {
            StepOutcome::Infeasible { certificate } => {
                assert!(certificate.amax() > 0.0, "empty certificate");
            }
            StepOutcome::Feasible(_) => panic!("expected infeasibility far outside Z_inf"),
        }
        assert!(!ctrl.feasible_check(&x).unwrap());
    }

    #[test]
    fn init_set_states_are_feasible() {
        let (_, _, artifact, _) = noisy_fixture();
        let mut ctrl = OnlineController::new(artifact).unwrap();
        let x = artifact.init_set.feasible_point().unwrap().unwrap();
        assert!(ctrl.feasible_check(&x).unwrap());
        match ctrl.online_step(&x).unwrap() {
            StepOutcome::Feasible(dec) => {
                assert!(dec.u0.amax() <= 0.2 + 1e-9, "input constraint violated");
            }
            StepOutcome::Infeasible { .. } => panic!("init-set state must be feasible"),
        }
    }

    #[test]
    fn artifact_text_roundtrip_preserves_decisions() {
        let (_, _, artifact, _) = noisy_fixture();
        let text = artifact.to_text();
        let back = ControllerArtifact::from_text(&text).unwrap();
        assert_eq!(back.n, artifact.n);
        assert_eq!(back.scenario.num_samples, artifact.scenario.num_samples);
        assert_eq!(back.constraints.set.num_rows(), artifact.constraints.set.num_rows());
        assert!((&back.cost.s - &artifact.cost.s).amax() < 1e-14);
        assert!((back.bound.lo.clone() - &artifact.bound.lo).amax() < 1e-14);

        let x = artifact.init_set.feasible_point().unwrap().unwrap();
        let mut a = OnlineController::new(artifact).unwrap();
        let mut b = OnlineController::new(&back).unwrap();
        let (StepOutcome::Feasible(da), StepOutcome::Feasible(db)) =
            (a.online_step(&x).unwrap(), b.online_step(&x).unwrap())
        else {
            panic!("expected feasible steps")
        };
        assert!((da.u0[0] - db.u0[0]).abs() < 1e-12);
        assert!((da.objective - db.objective).abs() < 1e-12);
    }

    #[test]
    fn x_ref_shifts_the_linear_term_only() {
        let (_, data, _, _) = noisy_fixture();
        let mut cfg = base_config(0.002);
        cfg.x_ref = Some(DVector::from_vec(vec![0.0, 1.0]));
        let (tracking, _) = synthesize(data, &cfg).unwrap();
        let (_, _, regulation, _) = noisy_fixture();
        assert!((&tracking.cost.s - &regulation.cost.s).amax() < 1e-12);
        assert!((&tracking.cost.gamma - &regulation.cost.gamma).amax() > 1e-6);
    }
}
