//! Feasible-initial-state set, robust control invariant fixed point,
//! first-step constraint, and the admissible initial-condition set.
//!
//! The recursion shrinks the feasible set until one control input keeps
//! every admissible system matrix pair inside it for every noise
//! realization; the fixed point backs the first-step constraint that
//! makes the closed loop recursively feasible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::noise::{NoiseModel, SystemBound};

/// Default iteration cap for the fixed-point recursion.
pub const DEFAULT_MAX_ITER: usize = 100;
/// Two-sided inclusion tolerance for the stopping rule.
pub const FIXED_POINT_TOL: f64 = 1e-7;

/// Outcome of the fixed-point recursion.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub z_inf: Polytope,
    pub iterations: usize,
    pub converged: bool,
}

/// The complete invariance data consumed by the controller.
#[derive(Debug, Clone)]
pub struct InvarianceResult {
    pub z_l: Polytope,
    pub z_inf: Polytope,
    pub c_r: Polytope,
    pub init_set: Polytope,
    pub iterations: usize,
    pub converged: bool,
}

/// Feasible measured initial states: the constraint set over `(x̂, U)`
/// projected onto the first `n` coordinates.
pub fn compute_z_l(c_set: &Polytope, n: usize) -> Result<Polytope> {
    if n >= c_set.dim() {
        return Err(Error::input("compute_z_l: n must be below the decision dimension"));
    }
    c_set.project(n)
}

/// Rowwise robust tightening of `target` against the noise set for one
/// vertex `(A_j, B_j)`: rows `[G A_j | G B_j]` over `(x̂, u)` with rhs
/// `g − max_ε′(Gε′) − max_ε(−G A_j ε)`, so that
/// `A_j(x̂ − ε) + B_j u + ε′ ∈ target` for all `ε, ε′ ∈ Ɛ`.
fn robust_pre_rows(
    target: &Polytope,
    a_j: &DMatrix<f64>,
    b_j: &DMatrix<f64>,
    eps_set: &Polytope,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (r, n, m) = (target.num_rows(), a_j.nrows(), b_j.ncols());
    let mut rows = DMatrix::zeros(r, n + m);
    let mut rhs = DVector::zeros(r);
    let ga = target.rows() * a_j;
    let gb = target.rows() * b_j;
    for q in 0..r {
        rows.view_mut((q, 0), (1, n)).copy_from(&ga.row(q));
        rows.view_mut((q, n), (1, m)).copy_from(&gb.row(q));
        let g_q = target.rows().row(q).transpose();
        let s_next = eps_set.support(&g_q)?;
        let s_cur = eps_set.support(&(-ga.row(q).transpose()))?;
        if !s_next.is_finite() || !s_cur.is_finite() {
            return Err(Error::input("robust tightening needs a bounded noise set"));
        }
        rhs[q] = target.rhs()[q] - s_next - s_cur;
    }
    Ok((rows, rhs))
}

/// One application of the recursion: the set of `x̂ ∈ Z_L ∩ Z_q` for
/// which some shared `u ∈ 𝕌` sends every vertex `(A_j, B_j)` back into
/// `Z_q` robustly against both noise terms. An empty result is returned
/// as the empty-marker polytope, not an error.
pub fn invariant_step(
    z_q: &Polytope,
    z_l: &Polytope,
    bound: &SystemBound,
    u_poly: &Polytope,
    eps_set: &Polytope,
) -> Result<Polytope> {
    let n = z_q.dim();
    let m = u_poly.dim();
    if z_l.dim() != n || eps_set.dim() != n || bound.n != n || bound.m != m {
        return Err(Error::input("invariant_step: dimension mismatch"));
    }
    let vertices = bound.vertices()?;
    let mut blocks: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(vertices.len() + 3);
    for (a_j, b_j) in &vertices {
        blocks.push(robust_pre_rows(z_q, a_j, b_j, eps_set)?);
    }
    // u ∈ 𝕌 and x̂ ∈ Z_L ∩ Z_q, embedded in the lifted (x̂, u) space.
    let mut u_rows = DMatrix::zeros(u_poly.num_rows(), n + m);
    u_rows.view_mut((0, n), (u_poly.num_rows(), m)).copy_from(u_poly.rows());
    blocks.push((u_rows, u_poly.rhs().clone()));
    for state_set in [z_l, z_q] {
        let mut x_rows = DMatrix::zeros(state_set.num_rows(), n + m);
        x_rows
            .view_mut((0, 0), (state_set.num_rows(), n))
            .copy_from(state_set.rows());
        blocks.push((x_rows, state_set.rhs().clone()));
    }
    let total: usize = blocks.iter().map(|(b, _)| b.nrows()).sum();
    let mut rows = DMatrix::zeros(total, n + m);
    let mut rhs = DVector::zeros(total);
    let mut at = 0usize;
    for (b_rows, b_rhs) in &blocks {
        rows.view_mut((at, 0), (b_rows.nrows(), n + m)).copy_from(b_rows);
        rhs.rows_mut(at, b_rhs.len()).copy_from(b_rhs);
        at += b_rows.nrows();
    }
    let lifted = Polytope::new(rows, rhs)?;
    if lifted.is_empty()? {
        return Ok(Polytope::empty(n));
    }
    lifted.remove_redundancy()?.project(n)
}

/// Iterate [`invariant_step`] from `Z⁰ = Z_L` until two successive sets
/// are mutually included at [`FIXED_POINT_TOL`], or the cap is hit
/// (`converged = false`). An empty iterate is an error: no robust
/// control invariant subset exists for these bounds.
pub fn compute_z_inf(
    z_l: &Polytope,
    bound: &SystemBound,
    u_poly: &Polytope,
    eps_set: &Polytope,
    max_iter: usize,
) -> Result<FixedPoint> {
    if max_iter == 0 {
        return Err(Error::input("compute_z_inf: max_iter must be at least 1"));
    }
    let mut current = z_l.clone();
    for q in 1..=max_iter {
        let next = invariant_step(&current, z_l, bound, u_poly, eps_set)?;
        if next.is_empty()? {
            return Err(Error::EmptySet(
                "no robust control invariant subset: recursion reached the empty set".into(),
            ));
        }
        if next.set_eq(&current, FIXED_POINT_TOL)? {
            return Ok(FixedPoint {
                z_inf: next,
                iterations: q,
                converged: true,
            });
        }
        current = next;
    }
    Ok(FixedPoint {
        z_inf: current,
        iterations: max_iter,
        converged: false,
    })
}

/// First-step constraint ℂ_R over the full decision `(x̂, u_0..u_L)`:
/// for every vertex, the successor measurement stays in `Z_∞` for all
/// noise pairs. Only the `x̂` and `u_0` blocks carry coefficients; the
/// reduction runs in that subspace before embedding.
pub fn build_first_step_constraint(
    z_inf: &Polytope,
    bound: &SystemBound,
    eps_set: &Polytope,
    n: usize,
    m: usize,
    horizon: usize,
) -> Result<Polytope> {
    if z_inf.dim() != n || eps_set.dim() != n || bound.n != n || bound.m != m {
        return Err(Error::input("build_first_step_constraint: dimension mismatch"));
    }
    let vertices = bound.vertices()?;
    let per = z_inf.num_rows();
    let mut rows = DMatrix::zeros(per * vertices.len(), n + m);
    let mut rhs = DVector::zeros(per * vertices.len());
    for (j, (a_j, b_j)) in vertices.iter().enumerate() {
        let (b_rows, b_rhs) = robust_pre_rows(z_inf, a_j, b_j, eps_set)?;
        rows.view_mut((j * per, 0), (per, n + m)).copy_from(&b_rows);
        rhs.rows_mut(j * per, per).copy_from(&b_rhs);
    }
    let compact = Polytope::new(rows, rhs)?.remove_redundancy()?;
    // Embed into the (x̂, u_0, …, u_L) decision space.
    let dec_dim = n + (horizon + 1) * m;
    let mut full = DMatrix::zeros(compact.num_rows(), dec_dim);
    full.view_mut((0, 0), (compact.num_rows(), n + m))
        .copy_from(compact.rows());
    Polytope::new(full, compact.rhs().clone())
}

/// Admissible true initial states: `Z_∞ ⊖ Ɛ`.
pub fn initial_condition_set(z_inf: &Polytope, model: &NoiseModel) -> Result<Polytope> {
    z_inf.pontryagin_diff(&model.support)
}

/// Run the complete invariance stage from the reduced constraint set.
pub fn compute_invariance(
    c_set: &Polytope,
    bound: &SystemBound,
    u_poly: &Polytope,
    model: &NoiseModel,
    n: usize,
    m: usize,
    horizon: usize,
    max_iter: usize,
) -> Result<InvarianceResult> {
    let z_l = compute_z_l(c_set, n)?;
    if z_l.is_empty()? {
        return Err(Error::EmptySet("feasible initial-state set is empty".into()));
    }
    let fp = compute_z_inf(&z_l, bound, u_poly, &model.support, max_iter)?;
    let c_r = build_first_step_constraint(&fp.z_inf, bound, &model.support, n, m, horizon)?;
    let init_set = initial_condition_set(&fp.z_inf, model)?;
    Ok(InvarianceResult {
        z_l,
        z_inf: fp.z_inf,
        c_r,
        init_set,
        iterations: fp.iterations,
        converged: fp.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NormKind, VertexMode};
    use crate::rng::stream;
    use crate::solver::lp::{solve_lp, LinearProgram, Status};
    use rand::Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn single_vertex_bound(a: &DMatrix<f64>, b: &DMatrix<f64>) -> SystemBound {
        let mut ab = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
        ab.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
        ab.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
        SystemBound::from_intervals(ab.clone(), ab, VertexMode::FullBox, NormKind::Inf).unwrap()
    }

    /// A maximizer of `aᵀx` over `p`.
    fn support_point(p: &Polytope, a: &DVector<f64>) -> DVector<f64> {
        let lp = LinearProgram::new(-a, p.rows().clone(), p.rhs().clone()).unwrap();
        let res = solve_lp(&lp);
        assert_eq!(res.status, Status::Optimal);
        res.point.unwrap()
    }

    /// Definitional robust control invariance at one point: some
    /// `u ∈ 𝕌` keeps every (vertex, ε-vertex, ε′-vertex) successor in
    /// `target`, by explicit vertex enumeration of Ɛ.
    fn has_robust_control(
        x_hat: &DVector<f64>,
        target: &Polytope,
        bound: &SystemBound,
        u_poly: &Polytope,
        eps_vertices: &[DVector<f64>],
        slack: f64,
    ) -> bool {
        let m = u_poly.dim();
        let mut rows_vec: Vec<DVector<f64>> = Vec::new();
        let mut rhs_vec: Vec<f64> = Vec::new();
        for (a_j, b_j) in bound.vertices().unwrap() {
            let gb = target.rows() * &b_j;
            for eps in eps_vertices {
                for eps_next in eps_vertices {
                    let base = &a_j * (x_hat - eps) + eps_next;
                    let shift = target.rows() * &base;
                    for q in 0..target.num_rows() {
                        rows_vec.push(gb.row(q).transpose());
                        rhs_vec.push(target.rhs()[q] - shift[q] + slack);
                    }
                }
            }
        }
        for q in 0..u_poly.num_rows() {
            rows_vec.push(u_poly.rows().row(q).transpose());
            rhs_vec.push(u_poly.rhs()[q] + slack);
        }
        let mut rows = DMatrix::zeros(rows_vec.len(), m);
        for (i, r) in rows_vec.iter().enumerate() {
            rows.row_mut(i).copy_from(&r.transpose());
        }
        !Polytope::new(rows, DVector::from_vec(rhs_vec))
            .unwrap()
            .is_empty()
            .unwrap()
    }

    #[test]
    fn z_l_of_box_is_state_box() {
        // ℂ = |x̂|∞ ≤ 2 × |u₀| ≤ 1 over (x̂, u₀).
        let c = Polytope::inf_ball(3, 1.0);
        let mut rows = c.rows().clone();
        let mut rhs = c.rhs().clone();
        for i in 0..rows.nrows() {
            if rows[(i, 0)].abs() > 0.5 || rows[(i, 1)].abs() > 0.5 {
                rhs[i] = 2.0;
            }
        }
        let c = Polytope::new(rows, rhs).unwrap();
        let z = compute_z_l(&c, 2).unwrap();
        assert!(z.set_eq(&Polytope::inf_ball(2, 2.0), 1e-9).unwrap());
    }

    #[test]
    fn z_l_coupling_row_absorbed_by_input() {
        // x̂₁ + u₀ ≤ 1, |u₀| ≤ 1, |x̂|∞ ≤ 2: choosing u₀ = −1 absorbs the
        // coupling row (x̂₁ ≤ 1 − (−1) = 2), so Z_L is the full box.
        let rows = DMatrix::from_row_slice(
            7,
            3,
            &[
                1.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, //
                0.0, 0.0, -1.0, //
                1.0, 0.0, 0.0, //
                -1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, -1.0, 0.0,
            ],
        );
        let rhs = dv(&[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let c = Polytope::new(rows, rhs).unwrap();
        let z = compute_z_l(&c, 2).unwrap();
        assert!(z.set_eq(&Polytope::inf_ball(2, 2.0), 1e-9).unwrap());
    }

    #[test]
    fn invariant_step_matches_definitional_oracle() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let bound = single_vertex_bound(&a, &b);
        let z = Polytope::inf_ball(2, 1.0);
        let u = Polytope::inf_ball(1, 0.4);
        let eps = Polytope::inf_ball(2, 0.05);
        let eps_vertices = vec![
            dv(&[0.05, 0.05]),
            dv(&[0.05, -0.05]),
            dv(&[-0.05, 0.05]),
            dv(&[-0.05, -0.05]),
        ];
        let step = invariant_step(&z, &z, &bound, &u, &eps).unwrap();
        let mut rng = stream(80, 0);
        for _ in 0..200 {
            let x = dv(&[rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)]);
            let member = step.contains_with_tol(&x, 1e-9);
            let margin = (0..step.num_rows())
                .map(|i| (step.rhs()[i] - (step.rows().row(i) * &x)[(0, 0)]).abs())
                .fold(f64::INFINITY, f64::min);
            if margin < 1e-7 {
                continue;
            }
            let oracle = z.contains(&x)
                && has_robust_control(&x, &z, &bound, &u, &eps_vertices, 0.0);
            assert_eq!(member, oracle, "disagreement at {x:?}");
        }
    }

    #[test]
    fn invariant_step_shrinks_with_noise() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let bound = single_vertex_bound(&a, &b);
        let z = Polytope::inf_ball(2, 1.0);
        let u = Polytope::inf_ball(1, 0.4);
        let small = invariant_step(&z, &z, &bound, &u, &Polytope::inf_ball(2, 0.01)).unwrap();
        let large = invariant_step(&z, &z, &bound, &u, &Polytope::inf_ball(2, 0.08)).unwrap();
        assert!(small.includes(&large, 1e-9).unwrap());
        let mut rng = stream(81, 0);
        for _ in 0..200 {
            let x = dv(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            if large.contains(&x) {
                assert!(small.contains_with_tol(&x, 1e-9));
            }
        }
    }

    #[test]
    fn infeasible_tightening_yields_empty() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let bound = single_vertex_bound(&a, &b);
        // Noise larger than the target box: no x̂ survives.
        let z = Polytope::inf_ball(2, 0.1);
        let u = Polytope::inf_ball(1, 1.0);
        let eps = Polytope::inf_ball(2, 0.2);
        let step = invariant_step(&z, &z, &bound, &u, &eps).unwrap();
        assert!(step.is_empty().unwrap());
    }

    #[test]
    fn fixed_point_immediate_for_invariant_z() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let b = DMatrix::identity(2, 2);
        let bound = single_vertex_bound(&a, &b);
        let z = Polytope::inf_ball(2, 1.0);
        let u = Polytope::inf_ball(2, 10.0);
        let eps = Polytope::inf_ball(2, 0.0);
        let fp = compute_z_inf(&z, &bound, &u, &eps, 10).unwrap();
        assert!(fp.converged);
        assert_eq!(fp.iterations, 1);
        assert!(fp.z_inf.set_eq(&z, 1e-9).unwrap());
    }

    #[test]
    fn fixed_point_is_robust_control_invariant() {
        // Interval uncertainty on A's diagonal plus noise: the fixed
        // point must satisfy the definitional invariance oracle on
        // boundary-biased samples.
        let lo = DMatrix::from_row_slice(2, 3, &[0.85, 0.2, 1.0, -0.1, 0.75, 0.5]);
        let hi = DMatrix::from_row_slice(2, 3, &[0.95, 0.2, 1.0, -0.1, 0.85, 0.5]);
        let bound =
            SystemBound::from_intervals(lo, hi, VertexMode::FullBox, NormKind::Inf).unwrap();
        let z = Polytope::inf_ball(2, 1.0);
        let u = Polytope::inf_ball(1, 0.4);
        let eps = Polytope::inf_ball(2, 0.02);
        let eps_vertices = vec![
            dv(&[0.02, 0.02]),
            dv(&[0.02, -0.02]),
            dv(&[-0.02, 0.02]),
            dv(&[-0.02, -0.02]),
        ];
        let fp = compute_z_inf(&z, &bound, &u, &eps, 50).unwrap();
        assert!(fp.converged);
        let zi = &fp.z_inf;
        assert!(z.includes(zi, 1e-7).unwrap());
        // Fixed-point certificate: one more step leaves the set equal.
        let again = invariant_step(zi, &z, &bound, &u, &eps).unwrap();
        assert!(again.set_eq(zi, 1e-6).unwrap());
        let mut rng = stream(82, 0);
        for _ in 0..200 {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let dir = dv(&[theta.cos(), theta.sin()]);
            let bp = support_point(zi, &dir);
            // Pull slightly inside the boundary.
            let x = bp * rng.gen_range(0.995..0.99999);
            if !zi.contains(&x) {
                continue;
            }
            assert!(
                has_robust_control(&x, zi, &bound, &u, &eps_vertices, 1e-9),
                "no admissible input at boundary sample {x:?}"
            );
        }
    }

    #[test]
    fn first_step_constraint_zero_noise_is_exact_preimage() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let bound = single_vertex_bound(&a, &b);
        let zi = Polytope::inf_ball(2, 1.0);
        let eps0 = Polytope::inf_ball(2, 0.0);
        let horizon = 3;
        let c_r = build_first_step_constraint(&zi, &bound, &eps0, 2, 1, horizon).unwrap();
        assert_eq!(c_r.dim(), 2 + (horizon + 1));
        let mut rng = stream(83, 0);
        for _ in 0..200 {
            let mut z = DVector::zeros(c_r.dim());
            for i in 0..z.len() {
                z[i] = rng.gen_range(-1.5..1.5);
            }
            let succ = &a * z.rows(0, 2) + &b * z.rows(2, 1);
            let margin = (0..c_r.num_rows())
                .map(|i| (c_r.rhs()[i] - (c_r.rows().row(i) * &z)[(0, 0)]).abs())
                .fold(f64::INFINITY, f64::min);
            if margin < 1e-7 {
                continue;
            }
            assert_eq!(c_r.contains_with_tol(&z, 1e-9), zi.contains(&succ));
        }
    }

    #[test]
    fn first_step_rhs_monotone_in_noise() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let bound = single_vertex_bound(&a, &b);
        let zi = Polytope::inf_ball(2, 1.0);
        let small = build_first_step_constraint(&zi, &bound, &Polytope::inf_ball(2, 0.01), 2, 1, 3)
            .unwrap();
        let large = build_first_step_constraint(&zi, &bound, &Polytope::inf_ball(2, 0.05), 2, 1, 3)
            .unwrap();
        assert!(small.includes(&large, 1e-9).unwrap());
    }

    #[test]
    fn first_step_successor_vertex_oracle() {
        let lo = DMatrix::from_row_slice(2, 3, &[0.85, 0.2, 1.0, -0.1, 0.75, 0.5]);
        let hi = DMatrix::from_row_slice(2, 3, &[0.95, 0.2, 1.0, -0.1, 0.85, 0.5]);
        let bound =
            SystemBound::from_intervals(lo, hi, VertexMode::FullBox, NormKind::Inf).unwrap();
        let zi = Polytope::inf_ball(2, 1.0);
        let noise = 0.02;
        let eps = Polytope::inf_ball(2, noise);
        let c_r = build_first_step_constraint(&zi, &bound, &eps, 2, 1, 3).unwrap();
        let eps_vertices = vec![
            dv(&[noise, noise]),
            dv(&[noise, -noise]),
            dv(&[-noise, noise]),
            dv(&[-noise, -noise]),
        ];
        let mut rng = stream(84, 0);
        let mut checked = 0usize;
        while checked < 100 {
            let mut z = DVector::zeros(c_r.dim());
            for i in 0..z.len() {
                z[i] = rng.gen_range(-1.5..1.5);
            }
            if !c_r.contains(&z) {
                continue;
            }
            checked += 1;
            let x_hat = z.rows(0, 2).into_owned();
            let u0 = z.rows(2, 1).into_owned();
            for (a_j, b_j) in bound.vertices().unwrap() {
                for e in &eps_vertices {
                    for e2 in &eps_vertices {
                        let succ = &a_j * (&x_hat - e) + &b_j * &u0 + e2;
                        assert!(
                            zi.contains_with_tol(&succ, 1e-7),
                            "successor escaped Z_inf"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn init_set_zero_noise_is_z_inf() {
        let zi = Polytope::inf_ball(2, 1.0);
        let model = NoiseModel::box_model(2, 0.0, 1.0 / 3.0).unwrap();
        let init = initial_condition_set(&zi, &model).unwrap();
        assert!(init.set_eq(&zi, 1e-9).unwrap());
    }

    #[test]
    fn init_set_box_closed_form_and_vertex_membership() {
        let zi = Polytope::inf_ball(2, 1.0);
        let model = NoiseModel::box_model(2, 0.1, 1.0 / 3.0).unwrap();
        let init = initial_condition_set(&zi, &model).unwrap();
        assert!(init.set_eq(&Polytope::inf_ball(2, 0.9), 1e-9).unwrap());
        let mut rng = stream(85, 0);
        for _ in 0..100 {
            let x = dv(&[rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)]);
            if !init.contains(&x) {
                continue;
            }
            for sx in [-0.1, 0.1] {
                for sy in [-0.1, 0.1] {
                    assert!(zi.contains_with_tol(&(&x + dv(&[sx, sy])), 1e-9));
                }
            }
        }
    }

    #[test]
    fn monotone_recursion() {
        let lo = DMatrix::from_row_slice(2, 3, &[0.85, 0.2, 1.0, -0.1, 0.75, 0.5]);
        let hi = DMatrix::from_row_slice(2, 3, &[0.95, 0.2, 1.0, -0.1, 0.85, 0.5]);
        let bound =
            SystemBound::from_intervals(lo, hi, VertexMode::FullBox, NormKind::Inf).unwrap();
        let z_l = Polytope::inf_ball(2, 1.0);
        let u = Polytope::inf_ball(1, 0.3);
        let eps = Polytope::inf_ball(2, 0.02);
        let mut cur = z_l.clone();
        for _ in 0..5 {
            let next = invariant_step(&cur, &z_l, &bound, &u, &eps).unwrap();
            if next.is_empty().unwrap() {
                break;
            }
            assert!(cur.includes(&next, 1e-7).unwrap());
            if next.set_eq(&cur, 1e-7).unwrap() {
                break;
            }
            cur = next;
        }
    }
}
