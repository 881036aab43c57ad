//! Scenario sample complexity and the sampled, tightened constraint set.
//!
//! Each drawn noise scenario yields one prediction matrix; imposing the
//! state constraints on every scenario's predicted trajectory produces a
//! large linear system over the decision vector `(x̂, u_0..u_L)` whose
//! intersection inner-approximates the chance constraint with the
//! guarantee of the scenario bound. Input constraints are appended and
//! the union is reduced to its irredundant rows.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::hankel::{HankelBundle, PredictionSample};
use crate::noise::NoiseModel;

/// `Ñ(d,p,β) = 5/(1−p) · (ln(4/(1−β)) + d·ln(40/(1−p)))`, rounded up.
pub fn sample_complexity(d: usize, p: f64, beta: f64) -> Result<usize> {
    if d == 0 {
        return Err(Error::input("sample_complexity: d must be at least 1"));
    }
    if !(0.0..1.0).contains(&p) || p <= 0.0 || !(0.0..1.0).contains(&beta) || beta <= 0.0 {
        return Err(Error::input(
            "sample_complexity: p and beta must lie in (0,1)",
        ));
    }
    let val = 5.0 / (1.0 - p) * ((4.0 / (1.0 - beta)).ln() + d as f64 * (40.0 / (1.0 - p)).ln());
    Ok(val.ceil() as usize)
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub p: f64,
    pub beta: f64,
    /// Effective decision dimension `n + L·m` (the last input is not part
    /// of the optimization).
    pub d: usize,
    pub horizon: usize,
    pub num_samples: usize,
    /// True when `num_samples` was supplied explicitly instead of being
    /// computed from the bound.
    pub overridden: bool,
}

impl ScenarioConfig {
    pub fn new(n: usize, m: usize, horizon: usize, p: f64, beta: f64) -> Result<Self> {
        let d = n + horizon * m;
        Ok(Self {
            p,
            beta,
            d,
            horizon,
            num_samples: sample_complexity(d, p, beta)?,
            overridden: false,
        })
    }

    /// Replace the computed sample count (e.g. to replicate a published
    /// configuration). Counts below the bound are rejected.
    pub fn with_override(mut self, num_samples: usize) -> Result<Self> {
        let floor = sample_complexity(self.d, self.p, self.beta)?;
        if num_samples < floor {
            return Err(Error::config(format!(
                "sample override {num_samples} below the required bound {floor}"
            )));
        }
        self.num_samples = num_samples;
        self.overridden = true;
        Ok(self)
    }
}

/// Draw `count` independent prediction samples; rank-deficient draws are
/// redrawn, erroring when the redraw rate exceeds 50%.
pub fn draw_ensemble(
    bundle: &HankelBundle,
    model: &NoiseModel,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PredictionSample>> {
    Ok(draw_ensemble_counted(bundle, model, count, rng)?.0)
}

/// As [`draw_ensemble`], also reporting how many rank-deficient samples
/// were redrawn.
pub fn draw_ensemble_counted(
    bundle: &HankelBundle,
    model: &NoiseModel,
    count: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<PredictionSample>, usize)> {
    let mut out = Vec::with_capacity(count);
    let mut redraws = 0usize;
    while out.len() < count {
        let seq = model.sample_sequence(bundle.data_len, rng)?;
        let h_eps = crate::hankel::build_hankel(&seq, bundle.order)?;
        let eps0 = model.sample(rng)?;
        match PredictionSample::new(bundle, h_eps, eps0) {
            Ok(s) => out.push(s),
            Err(Error::RankDeficient(_)) => {
                redraws += 1;
                if redraws > count {
                    return Err(Error::input(
                        "scenario redraw rate above 50%: noise too large for the data",
                    ));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, redraws))
}

/// State-constraint rows over `(x̂, U)` for every sample and prediction
/// step `l ∈ 1..L`: `G_x·M_l·(x̂;U) ≤ g_x + G_x·M_l·(ε₀;0)`.
pub fn build_sampled_rows(
    ensemble: &[PredictionSample],
    x_poly: &Polytope,
    n: usize,
    horizon: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if ensemble.is_empty() {
        return Err(Error::input("build_sampled_rows: empty ensemble"));
    }
    let dec_dim = ensemble[0].m_mat.ncols();
    if x_poly.dim() != n {
        return Err(Error::Dimension {
            context: "build_sampled_rows state set",
            expected: n,
            got: x_poly.dim(),
        });
    }
    let gx = x_poly.rows();
    let g = x_poly.rhs();
    let rows_per = gx.nrows();
    let total = ensemble.len() * horizon * rows_per;
    let mut rows = DMatrix::zeros(total, dec_dim);
    let mut rhs = DVector::zeros(total);
    let mut at = 0usize;
    for sample in ensemble {
        // Shift of the current-measurement noise into the rhs.
        let mut w = DVector::zeros(dec_dim);
        w.rows_mut(0, n).copy_from(&sample.eps0);
        for l in 1..=horizon {
            let m_l = sample.m_mat.view((l * n, 0), (n, dec_dim));
            let block = gx * m_l;
            let shift = &block * &w;
            rows.view_mut((at, 0), (rows_per, dec_dim)).copy_from(&block);
            for i in 0..rows_per {
                rhs[at + i] = g[i] + shift[i];
            }
            at += rows_per;
        }
    }
    Ok((rows, rhs))
}

/// The reduced constraint set with its provenance row counts.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub set: Polytope,
    pub raw_rows: usize,
    pub dedup_rows: usize,
    pub reduced_rows: usize,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

/// Append input rows for `u_0..u_{L−1}`, deduplicate, and reduce.
pub fn assemble_constraint_set(
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
    u_poly: &Polytope,
    n: usize,
    m: usize,
    horizon: usize,
) -> Result<ConstraintSet> {
    let dec_dim = n + (horizon + 1) * m;
    if rows.ncols() != dec_dim {
        return Err(Error::Dimension {
            context: "assemble_constraint_set rows",
            expected: dec_dim,
            got: rows.ncols(),
        });
    }
    if u_poly.dim() != m {
        return Err(Error::Dimension {
            context: "assemble_constraint_set input set",
            expected: m,
            got: u_poly.dim(),
        });
    }
    let gu = u_poly.rows();
    let input_rows = horizon * gu.nrows();
    let mut all = DMatrix::zeros(rows.nrows() + input_rows, dec_dim);
    let mut all_rhs = DVector::zeros(rows.nrows() + input_rows);
    all.view_mut((0, 0), (rows.nrows(), dec_dim)).copy_from(&rows);
    all_rhs.rows_mut(0, rows.nrows()).copy_from(&rhs);
    let mut at = rows.nrows();
    for l in 0..horizon {
        for i in 0..gu.nrows() {
            for j in 0..m {
                all[(at, n + l * m + j)] = gu[(i, j)];
            }
            all_rhs[at] = u_poly.rhs()[i];
            at += 1;
        }
    }
    let raw = Polytope::new(all, all_rhs)?;
    let raw_rows = rows.nrows() + input_rows;
    let dedup_rows = raw.dedup().num_rows();
    let reduced = raw.remove_redundancy().map_err(|e| match e {
        Error::EmptySet(_) => Error::EmptySet(
            "sampled constraint set is empty: constraints over-tightened".into(),
        ),
        other => other,
    })?;
    Ok(ConstraintSet {
        reduced_rows: reduced.num_rows(),
        set: reduced,
        raw_rows,
        dedup_rows,
        n,
        m,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::TrajectoryData;
    use crate::rng::stream;
    use nalgebra::DMatrix;
    use rand::Rng as _;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn paper_ab() -> (DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_row_slice(2, 2, &[1.0, 0.013, -0.080, 0.996]),
            DMatrix::from_row_slice(2, 1, &[4.798, 0.064]),
        )
    }

    fn clean_data(seed: u64) -> TrajectoryData {
        let (a, b) = paper_ab();
        let mut rng = stream(seed, 0);
        let inputs: Vec<DVector<f64>> =
            (0..30).map(|_| dv(&[rng.gen_range(-0.2..0.2)])).collect();
        let mut states = vec![dv(&[0.0, 0.0])];
        for u in &inputs {
            let next = &a * states.last().unwrap() + &b * u;
            states.push(next);
        }
        states.truncate(30);
        TrajectoryData::new(inputs, states).unwrap()
    }

    #[test]
    fn complexity_reference_values() {
        assert_eq!(sample_complexity(1, 0.5, 0.99).unwrap(), 104);
        assert_eq!(sample_complexity(8, 0.8, 0.999).unwrap(), 1268);
    }

    #[test]
    fn complexity_monotone_in_d() {
        let a = sample_complexity(8, 0.8, 0.999).unwrap();
        let b = sample_complexity(9, 0.8, 0.999).unwrap();
        assert!(b > a);
    }

    #[test]
    fn complexity_rejects_bad_ranges() {
        assert!(sample_complexity(1, 0.0, 0.9).is_err());
        assert!(sample_complexity(1, 1.0, 0.9).is_err());
        assert!(sample_complexity(1, 0.5, 1.0).is_err());
        assert!(sample_complexity(0, 0.5, 0.9).is_err());
    }

    #[test]
    fn override_below_bound_rejected() {
        let cfg = ScenarioConfig::new(2, 1, 6, 0.8, 0.999).unwrap();
        assert_eq!(cfg.num_samples, 1268);
        assert!(cfg.clone().with_override(100).is_err());
        let big = cfg.with_override(31_800).unwrap();
        assert!(big.overridden);
        assert_eq!(big.num_samples, 31_800);
    }

    #[test]
    fn zero_noise_rows_match_exact_model() {
        let (a, b) = paper_ab();
        let data = clean_data(30);
        let bundle = HankelBundle::new(&data, 6).unwrap();
        let model = NoiseModel::box_model(2, 0.0, 0.0).unwrap();
        let ensemble = draw_ensemble(&bundle, &model, 1, &mut stream(31, 0)).unwrap();
        let x_poly = Polytope::inf_ball(2, 2.8);
        let (rows, rhs) = build_sampled_rows(&ensemble, &x_poly, 2, 6).unwrap();
        assert_eq!(rows.nrows(), 6 * 4);
        // ε = 0 → rhs unchanged.
        for i in 0..rhs.len() {
            assert!((rhs[i] - 2.8).abs() < 1e-10);
        }
        // Row action equals the true-model prediction constraint for
        // random decision vectors.
        let mut rng = stream(32, 0);
        for _ in 0..50 {
            let x0 = dv(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let us: Vec<f64> = (0..7).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let mut v = DVector::zeros(9);
            v.rows_mut(0, 2).copy_from(&x0);
            for (j, u) in us.iter().enumerate() {
                v[2 + j] = *u;
            }
            // Exact rollout.
            let mut x = x0.clone();
            for l in 1..=6 {
                x = &a * &x + &b * dv(&[us[l - 1]]);
                for i in 0..4 {
                    let lhs = rows.row((l - 1) * 4 + i).transpose().dot(&v);
                    let exact = x_poly.rows().row(i).transpose().dot(&x);
                    assert!((lhs - exact).abs() < 1e-8, "l={l} i={i}");
                }
            }
        }
    }

    #[test]
    fn row_count_small_case() {
        let data = clean_data(33);
        let bundle = HankelBundle::new(&data, 6).unwrap();
        let model = NoiseModel::box_model(2, 0.002, 1.0 / 3.0).unwrap();
        let ensemble = draw_ensemble(&bundle, &model, 2, &mut stream(34, 0)).unwrap();
        let x_poly = Polytope::inf_ball(2, 2.8);
        let (rows, _) = build_sampled_rows(&ensemble, &x_poly, 2, 1).unwrap();
        // Only steps l ∈ 1..=1 used here even though the bundle is L=6.
        assert_eq!(rows.nrows(), 2 * 1 * 4);
    }

    #[test]
    fn assemble_zero_rows_gives_input_box() {
        let u_poly = Polytope::inf_ball(1, 0.2);
        let rows = DMatrix::zeros(0, 4); // n=2, L=1 → dim 2+2=4
        let rhs = DVector::zeros(0);
        let cs = assemble_constraint_set(rows, rhs, &u_poly, 2, 1, 1).unwrap();
        // Just |u0| ≤ 0.2 (x̂ and u1 free).
        assert_eq!(cs.reduced_rows, 2);
        assert!(cs.set.contains(&dv(&[5.0, -5.0, 0.2, 9.0])));
        assert!(!cs.set.contains(&dv(&[0.0, 0.0, 0.21, 0.0])));
    }

    #[test]
    fn reduction_preserves_membership() {
        let data = clean_data(35);
        let bundle = HankelBundle::new(&data, 6).unwrap();
        let model = NoiseModel::box_model(2, 0.002, 1.0 / 3.0).unwrap();
        let ensemble = draw_ensemble(&bundle, &model, 60, &mut stream(36, 0)).unwrap();
        let x_poly = Polytope::inf_ball(2, 2.8);
        let (rows, rhs) = build_sampled_rows(&ensemble, &x_poly, 2, 6).unwrap();
        let u_poly = Polytope::inf_ball(1, 0.2);
        // Reconstruct the raw (pre-reduction) polytope the same way
        // assemble does: sampled rows plus per-step input rows.
        let gu = u_poly.rows();
        let extra = 6 * gu.nrows();
        let mut m = DMatrix::zeros(rows.nrows() + extra, 9);
        m.view_mut((0, 0), (rows.nrows(), 9)).copy_from(&rows);
        let mut r = DVector::zeros(rows.nrows() + extra);
        r.rows_mut(0, rhs.len()).copy_from(&rhs);
        let mut at = rows.nrows();
        for l in 0..6 {
            for i in 0..gu.nrows() {
                m[(at, 2 + l)] = gu[(i, 0)];
                r[at] = u_poly.rhs()[i];
                at += 1;
            }
        }
        let raw_poly = Polytope::new(m, r).unwrap();
        let cs = assemble_constraint_set(rows, rhs, &u_poly, 2, 1, 6).unwrap();
        assert!(cs.reduced_rows < cs.raw_rows);
        let mut rng = stream(37, 0);
        for _ in 0..500 {
            let mut v = DVector::zeros(9);
            v[0] = rng.gen_range(-3.0..3.0);
            v[1] = rng.gen_range(-3.0..3.0);
            for j in 2..9 {
                v[j] = rng.gen_range(-0.25..0.25);
            }
            assert_eq!(raw_poly.contains(&v), cs.set.contains(&v));
        }
    }

    #[test]
    fn constraint_set_deterministic() {
        let data = clean_data(38);
        let bundle = HankelBundle::new(&data, 6).unwrap();
        let model = NoiseModel::box_model(2, 0.002, 1.0 / 3.0).unwrap();
        let build = || {
            let ensemble = draw_ensemble(&bundle, &model, 40, &mut stream(39, 0)).unwrap();
            let x_poly = Polytope::inf_ball(2, 2.8);
            let (rows, rhs) = build_sampled_rows(&ensemble, &x_poly, 2, 6).unwrap();
            assemble_constraint_set(rows, rhs, &Polytope::inf_ball(1, 0.2), 2, 1, 6).unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a.set.rows(), b.set.rows());
        assert_eq!(a.set.rhs(), b.set.rhs());
    }

    #[test]
    fn sampled_constraints_hold_on_retained_scenarios() {
        // Every feasible point of ℂ keeps each retained scenario's
        // predicted states inside 𝕏 (construction property of Eq. 20).
        let data = clean_data(40);
        let bundle = HankelBundle::new(&data, 6).unwrap();
        let model = NoiseModel::box_model(2, 0.01, 1.0 / 3.0).unwrap();
        let ensemble = draw_ensemble(&bundle, &model, 50, &mut stream(41, 0)).unwrap();
        let x_poly = Polytope::inf_ball(2, 2.8);
        let (rows, rhs) = build_sampled_rows(&ensemble, &x_poly, 2, 6).unwrap();
        let cs =
            assemble_constraint_set(rows, rhs, &Polytope::inf_ball(1, 0.2), 2, 1, 6).unwrap();
        let mut rng = stream(42, 0);
        let mut found = 0;
        while found < 200 {
            let mut v = DVector::zeros(9);
            v[0] = rng.gen_range(-2.8..2.8);
            v[1] = rng.gen_range(-2.8..2.8);
            for j in 2..9 {
                v[j] = rng.gen_range(-0.2..0.2);
            }
            if !cs.set.contains(&v) {
                continue;
            }
            found += 1;
            let x_meas = v.rows(0, 2).into_owned();
            let u = v.rows(2, 7).into_owned();
            for s in &ensemble {
                let traj = crate::hankel::predict_trajectory(s, &x_meas, &u);
                for l in 1..=6 {
                    let x_l = traj.rows(2 * l, 2).into_owned();
                    assert!(
                        x_poly.contains_with_tol(&x_l, 1e-8),
                        "scenario constraint violated at l={l}"
                    );
                }
            }
        }
    }

    #[test]
    fn out_of_sample_chance_constraint() {
        // At a feasible point of a properly sized ℂ, fresh noise draws
        // keep the one-step state in 𝕏 with probability at least p.
        let data = clean_data(43);
        let bundle = HankelBundle::new(&data, 6).unwrap();
        let model = NoiseModel::box_model(2, 0.01, 1.0 / 3.0).unwrap();
        let cfg = ScenarioConfig::new(2, 1, 6, 0.8, 0.999).unwrap();
        let ensemble =
            draw_ensemble(&bundle, &model, cfg.num_samples, &mut stream(44, 0)).unwrap();
        let x_poly = Polytope::inf_ball(2, 2.8);
        let (rows, rhs) = build_sampled_rows(&ensemble, &x_poly, 2, 6).unwrap();
        let cs =
            assemble_constraint_set(rows, rhs, &Polytope::inf_ball(1, 0.2), 2, 1, 6).unwrap();
        // A feasible point: Chebyshev-like interior point of ℂ.
        let v = cs.set.feasible_point().unwrap().unwrap();
        let x_meas = v.rows(0, 2).into_owned();
        let u = v.rows(2, 7).into_owned();
        let (a, b) = paper_ab();
        let mut rng = stream(45, 0);
        let trials = 10_000;
        let mut ok = 0usize;
        for _ in 0..trials {
            // True state consistent with a fresh measurement-noise draw,
            // then the true one-step propagation with a fresh next-step
            // measurement.
            let e0 = model.sample(&mut rng).unwrap();
            let x_true = &x_meas - &e0;
            let x1 = &a * &x_true + &b * dv(&[u[0]]);
            if x_poly.contains_with_tol(&x1, 0.0) {
                ok += 1;
            }
        }
        let rate = ok as f64 / trials as f64;
        let sigma = (0.8f64 * 0.2 / trials as f64).sqrt();
        assert!(
            rate >= 0.8 - 3.0 * sigma,
            "empirical chance constraint {rate} below 0.8 - 3σ"
        );
    }
}
