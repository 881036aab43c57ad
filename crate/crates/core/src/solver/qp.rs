//! Dense strictly convex quadratic programming.
//!
//! `min ½ xᵀHx + fᵀx  s.t.  Ax ≤ b`, solved with a primal active-set
//! method. A feasible starting vertex comes from the LP phase; equality
//! subproblems go through the full KKT system (the decision dimension is
//! small everywhere in this crate). Warm starts reuse the previous optimal
//! point and working set, which is how the online controller amortizes
//! consecutive solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::solver::lp::{solve_lp, LinearProgram, SolveResult, Status};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        ineq: DMatrix<f64>,
        rhs: DVector<f64>,
    ) -> Result<Self> {
        let d = linear.len();
        if hessian.nrows() != d || hessian.ncols() != d {
            return Err(Error::Dimension {
                context: "QuadraticProgram hessian",
                expected: d,
                got: hessian.nrows(),
            });
        }
        if ineq.ncols() != d || ineq.nrows() != rhs.len() {
            return Err(Error::Dimension {
                context: "QuadraticProgram constraints",
                expected: d,
                got: ineq.ncols(),
            });
        }
        let scale = hessian.amax();
        let sym = (&hessian - hessian.transpose()).amax();
        if sym > 1e-12 * (1.0 + scale) {
            return Err(Error::input(format!("hessian not symmetric (deviation {sym:.3e})")));
        }
        let min_eig = hessian
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 * (1.0 + scale) {
            return Err(Error::input(format!("hessian not PSD (min eigenvalue {min_eig:.3e})")));
        }
        Ok(Self { hessian, linear, ineq, rhs })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.hessian * x)[(0, 0)] + self.linear.dot(x)
    }
}

#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub point: DVector<f64>,
    pub active: Vec<usize>,
}

pub fn solve_qp(qp: &QuadraticProgram) -> SolveResult {
    solve_qp_warm(qp, None)
}

/// Deterministic per-row relaxation making the feasible polytope's
/// vertices simple, so the active-set walk cannot cycle on near-parallel
/// row clusters (scenario constraint sets produce thousands of them).
/// Relaxation only: the perturbed problem is feasible whenever the
/// original is, and the optimum moves by O(1e−10).
fn rhs_perturbation(id: usize) -> f64 {
    let mut z = id as u64 ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    1e-10 * (1.0 + (z as f64 / u64::MAX as f64))
}

/// Allocation-free `rows[i]ᵀ v`.
fn row_dot(m: &DMatrix<f64>, i: usize, v: &DVector<f64>) -> f64 {
    (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()
}

pub fn solve_qp_warm(qp: &QuadraticProgram, warm: Option<&WarmStart>) -> SolveResult {
    let d = qp.linear.len();
    let r = qp.ineq.nrows();
    let mut rhs = qp.rhs.clone();
    for i in 0..r {
        rhs[i] += rhs_perturbation(i) * (1.0 + qp.rhs[i].abs());
    }
    let feas_tol = 1e-8 * (1.0 + rhs.amax());

    // Ridge when H is PSD but singular: keeps the KKT systems well posed.
    let mut h = qp.hessian.clone();
    if h.clone().cholesky().is_none() {
        let ridge = 1e-9 * (h.trace().abs() / d as f64).max(1.0);
        for i in 0..d {
            h[(i, i)] += ridge;
        }
    }

    // Starting point.
    let mut x = match warm {
        Some(ws)
            if ws.point.len() == d && (&qp.ineq * &ws.point - &rhs).max() <= feas_tol =>
        {
            ws.point.clone()
        }
        _ => {
            let lp = LinearProgram::new(DVector::zeros(d), qp.ineq.clone(), rhs.clone())
                .expect("dims checked");
            let res = solve_lp(&lp);
            match res.status {
                Status::Optimal | Status::Unbounded => match res.point {
                    Some(p) => p,
                    // Unbounded phase-1 cannot happen (zero objective), and
                    // an Optimal without point is a solver bug.
                    None => DVector::zeros(d),
                },
                Status::Infeasible => return res,
                Status::NumericalFailure => return res,
            }
        }
    };
    if (&qp.ineq * &x - &rhs).max() > feas_tol {
        return SolveResult {
            status: Status::NumericalFailure,
            point: None,
            objective: f64::NAN,
            dual: None,
            certificate: None,
        };
    }

    // Initial working set: independent rows active at x (honoring the warm
    // hint first).
    let mut working: Vec<usize> = Vec::new();
    let mut consider: Vec<usize> = Vec::new();
    if let Some(ws) = warm {
        consider.extend(ws.active.iter().cloned().filter(|&i| i < r));
    }
    consider.extend(0..r);
    for i in consider {
        if working.len() >= d || working.contains(&i) {
            continue;
        }
        let resid = row_dot(&qp.ineq, i, &x) - rhs[i];
        if resid.abs() <= feas_tol && row_independent(&qp.ineq, &working, i) {
            working.push(i);
        }
    }
    working.sort_unstable();

    let max_iter = 50 * (r + d + 2);
    let bland_after = 10 * (r + d + 2);
    let mut lambda = DVector::zeros(0);
    // Set after a full unblocked step: x is then the minimizer over the
    // current working set, so go straight to the multiplier check even if
    // the recomputed KKT step is not numerically zero.
    let mut at_subspace_min = false;

    for iter in 0..max_iter {
        let bland = iter > bland_after;
        let grad = &h * &x + &qp.linear;
        let k = working.len();

        // KKT step: min ½pᵀHp + gᵀp s.t. A_W p = 0.
        let (p, lam) = match kkt_step(&h, &grad, &qp.ineq, &working) {
            Some(v) => v,
            None => {
                return SolveResult {
                    status: Status::NumericalFailure,
                    point: None,
                    objective: f64::NAN,
                    dual: None,
                    certificate: None,
                }
            }
        };
        lambda = lam;

        if at_subspace_min || p.amax() <= 1e-10 * (1.0 + x.amax()) {
            at_subspace_min = false;
            // Stationary on the working set: check multipliers.
            let mut drop_pos: Option<usize> = None;
            if bland {
                drop_pos = (0..k).find(|&i| lambda[i] < -1e-9);
            } else {
                let mut most = -1e-9;
                for i in 0..k {
                    if lambda[i] < most {
                        most = lambda[i];
                        drop_pos = Some(i);
                    }
                }
            }
            match drop_pos {
                None => {
                    // Optimal; assemble full dual vector.
                    let mut dual = DVector::zeros(r);
                    for (pos, &row) in working.iter().enumerate() {
                        dual[row] = lambda[pos].max(0.0);
                    }
                    return SolveResult {
                        status: Status::Optimal,
                        point: Some(x.clone()),
                        objective: qp.objective(&x),
                        dual: Some(dual),
                        certificate: None,
                    };
                }
                Some(pos) => {
                    working.remove(pos);
                }
            }
        } else {
            // Ratio test against rows outside the working set.
            let mut alpha = 1.0f64;
            let mut blocking: Option<usize> = None;
            for i in 0..r {
                if working.contains(&i) {
                    continue;
                }
                let slope = row_dot(&qp.ineq, i, &p);
                if slope > 1e-12 {
                    let slack = (rhs[i] - row_dot(&qp.ineq, i, &x)).max(0.0);
                    let ratio = slack / slope;
                    if ratio < alpha - 1e-14 {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
            }
            x += &p * alpha;
            if let Some(i) = blocking {
                if row_independent(&qp.ineq, &working, i) {
                    working.push(i);
                    working.sort_unstable();
                } else if alpha <= 1e-12 {
                    // Degenerate zero step: x cannot move and the blocking
                    // row cannot join the working set. Recomputing the same
                    // step would loop forever, so consult the multipliers —
                    // either a row gets dropped (new direction) or x is
                    // optimal up to the conditioning of the active rows.
                    at_subspace_min = true;
                }
            } else {
                at_subspace_min = true;
            }
        }
    }
    let _ = lambda;
    SolveResult {
        status: Status::NumericalFailure,
        point: None,
        objective: f64::NAN,
        dual: None,
        certificate: None,
    }
}

/// Solve the equality-constrained subproblem via the full KKT system.
/// Returns `(step, multipliers)`.
fn kkt_step(
    h: &DMatrix<f64>,
    grad: &DVector<f64>,
    ineq: &DMatrix<f64>,
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = grad.len();
    let k = working.len();
    if k == 0 {
        let p = h.clone().cholesky()?.solve(&(-grad));
        return Some((p, DVector::zeros(0)));
    }
    let mut kkt = DMatrix::zeros(d + k, d + k);
    kkt.view_mut((0, 0), (d, d)).copy_from(h);
    for (pos, &row) in working.iter().enumerate() {
        for j in 0..d {
            kkt[(j, d + pos)] = ineq[(row, j)];
            kkt[(d + pos, j)] = ineq[(row, j)];
        }
    }
    let mut rhs = DVector::zeros(d + k);
    rhs.rows_mut(0, d).copy_from(&(-grad));
    let sol = kkt.lu().solve(&rhs)?;
    let p = sol.rows(0, d).into_owned();
    let lam = sol.rows(d, k).into_owned();
    Some((p, lam))
}

/// True when row `i` is linearly independent from the working-set rows.
fn row_independent(ineq: &DMatrix<f64>, working: &[usize], i: usize) -> bool {
    if working.is_empty() {
        return ineq.row(i).amax() > 1e-12;
    }
    let d = ineq.ncols();
    let k = working.len();
    if k >= d {
        return false;
    }
    let aw = DMatrix::from_fn(k, d, |a, b| ineq[(working[a], b)]);
    let target = ineq.row(i).transpose();
    // Least-squares residual of projecting the row onto span(A_W), via the
    // SVD of A_Wᵀ. The normal equations are not usable here: a working set
    // of near-parallel scenario rows squares an already large condition
    // number and the computed residual can come out orders of magnitude too
    // small, misclassifying a genuinely independent row as dependent.
    match aw.transpose().svd(true, true).solve(&target, 1e-13) {
        Ok(coeff) => {
            let resid = (&target - aw.transpose() * coeff).amax();
            resid > 1e-9 * (1.0 + target.amax())
        }
        Err(_) => true,
    }
}
