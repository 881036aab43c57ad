//! Dense linear programming.
//!
//! Problems have the inequality form `min cᵀx  s.t.  Ax ≤ b` with `x` free.
//! The solver runs a two-phase revised simplex on the dual standard form
//! `min bᵀw  s.t.  Aᵀw = -c, w ≥ 0`, whose basis is `d × d` regardless of
//! the row count. Polytope work in this crate is exactly the low-dimension /
//! many-rows regime where that pays off: pricing is O(r·d) per iteration.
//!
//! Optimal primal points are recovered from the simplex multipliers and
//! re-verified against the primal before being reported. Infeasibility is
//! certified by a Farkas vector `y ≥ 0` with `Aᵀy = 0`, `bᵀy < 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `min costᵀ x  s.t.  ineq · x ≤ rhs`, `x ∈ R^d` free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub cost: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl LinearProgram {
    pub fn new(cost: DVector<f64>, ineq: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if ineq.ncols() != cost.len() {
            return Err(Error::Dimension {
                context: "LinearProgram",
                expected: cost.len(),
                got: ineq.ncols(),
            });
        }
        if ineq.nrows() != rhs.len() {
            return Err(Error::Dimension {
                context: "LinearProgram rhs",
                expected: ineq.nrows(),
                got: rhs.len(),
            });
        }
        let finite = cost.iter().chain(ineq.iter()).chain(rhs.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::input("LP data must be finite"));
        }
        Ok(Self { cost, ineq, rhs })
    }

    /// Text dump for bug reports: `d r` header, then the cost row, then one
    /// line per constraint row (coefficients followed by the rhs).
    pub fn dump(&self) -> String {
        let mut out = format!("{} {}\n", self.cost.len(), self.ineq.nrows());
        let cost: Vec<String> = self.cost.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&cost.join(" "));
        out.push('\n');
        for i in 0..self.ineq.nrows() {
            let mut row: Vec<String> =
                (0..self.ineq.ncols()).map(|j| format!("{:.17e}", self.ineq[(i, j)])).collect();
            row.push(format!("{:.17e}", self.rhs[i]));
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: Status,
    /// Optimal point (when `Optimal`).
    pub point: Option<DVector<f64>>,
    pub objective: f64,
    /// Row multipliers `y ≥ 0` with `c + Aᵀy = 0` (when `Optimal`).
    pub dual: Option<DVector<f64>>,
    /// Farkas vector `y ≥ 0`, `Aᵀy = 0`, `bᵀy < 0` (when `Infeasible`).
    pub certificate: Option<DVector<f64>>,
}

impl SolveResult {
    fn failure() -> Self {
        SolveResult {
            status: Status::NumericalFailure,
            point: None,
            objective: f64::NAN,
            dual: None,
            certificate: None,
        }
    }
}

pub fn solve_lp(lp: &LinearProgram) -> SolveResult {
    // Dual standard form: min bᵀw s.t. Aᵀ w = -c, w ≥ 0.
    let e = lp.ineq.transpose();
    let h = -&lp.cost;
    match solve_standard(&e, &h, &lp.rhs) {
        StdOutcome::Optimal { w, y, objective } => {
            // y is the multiplier of equality row i, i.e. the primal x_i.
            let x = y;
            let feas_tol = 1e-8 * (1.0 + lp.rhs.amax());
            let viol = &lp.ineq * &x - &lp.rhs;
            let resid = if viol.is_empty() { 0.0 } else { viol.max() };
            let primal_obj = lp.cost.dot(&x);
            let gap = (primal_obj + objective).abs();
            if resid > feas_tol || gap > 1e-6 * (1.0 + primal_obj.abs()) {
                return SolveResult::failure();
            }
            SolveResult {
                status: Status::Optimal,
                point: Some(x),
                objective: primal_obj,
                dual: Some(w),
                certificate: None,
            }
        }
        StdOutcome::Unbounded { ray } => {
            // Dual unbounded: ray certifies primal infeasibility.
            let by = lp.rhs.dot(&ray);
            debug_assert!(by < 0.0);
            SolveResult {
                status: Status::Infeasible,
                point: None,
                objective: f64::INFINITY,
                dual: None,
                certificate: Some(ray),
            }
        }
        StdOutcome::Infeasible => {
            // Dual infeasible: primal is unbounded or infeasible. Decide by
            // the homogeneous dual min bᵀw s.t. Aᵀw = 0, w ≥ 0.
            let zero = DVector::zeros(e.nrows());
            match solve_standard(&e, &zero, &lp.rhs) {
                StdOutcome::Optimal { .. } => SolveResult {
                    status: Status::Unbounded,
                    point: None,
                    objective: f64::NEG_INFINITY,
                    dual: None,
                    certificate: None,
                },
                StdOutcome::Unbounded { ray } => SolveResult {
                    status: Status::Infeasible,
                    point: None,
                    objective: f64::INFINITY,
                    dual: None,
                    certificate: Some(ray),
                },
                _ => SolveResult::failure(),
            }
        }
        StdOutcome::Failure => SolveResult::failure(),
    }
}

enum StdOutcome {
    /// `w` solves the standard form; `y` are the equality-row multipliers.
    Optimal { w: DVector<f64>, y: DVector<f64>, objective: f64 },
    Unbounded { ray: DVector<f64> },
    Infeasible,
    Failure,
}

const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;

/// Two-phase revised simplex for `min qᵀw  s.t.  E w = h, w ≥ 0`.
///
/// `E` is `p × nv` with small `p`. The basis is refactorized every iteration;
/// at these sizes LU of a `p × p` block is noise compared to pricing.
fn solve_standard(e: &DMatrix<f64>, h: &DVector<f64>, q: &DVector<f64>) -> StdOutcome {
    let p = e.nrows();
    let nv = e.ncols();

    // Flip rows so h ≥ 0 (simplifies the artificial basis).
    let mut signs = vec![1.0f64; p];
    let mut e = e.clone();
    let mut h = h.clone();
    for i in 0..p {
        if h[i] < 0.0 {
            signs[i] = -1.0;
            h[i] = -h[i];
            for j in 0..nv {
                e[(i, j)] = -e[(i, j)];
            }
        }
    }

    // Row indices still alive (redundant equality rows get dropped after
    // phase 1); `keep[i]` maps a live row back to its original index.
    let mut keep: Vec<usize> = (0..p).collect();
    // Basis: column index < nv is a real variable; nv + i is the artificial
    // of live row position i.
    let mut basis: Vec<usize> = (0..p).map(|i| nv + i).collect();

    let h_scale = 1.0 + h.amax();
    let max_iter = 50 * (nv + p + 2);
    let bland_after = 10 * (nv + p + 2);

    // phase: 1 = minimize artificial sum, 2 = minimize qᵀw.
    for phase in [1usize, 2] {
        let mut iter = 0usize;
        loop {
            iter += 1;
            if iter > max_iter {
                return StdOutcome::Failure;
            }
            let bland = iter > bland_after;
            let np = keep.len();

            let bmat = basis_matrix(&e, &basis, &keep, nv);
            let lu = (np > 0).then(|| bmat.clone().lu());
            let xb = if np == 0 {
                DVector::zeros(0)
            } else {
                match lu.as_ref().unwrap().solve(&subvec(&h, &keep)) {
                    Some(v) => v,
                    None => return StdOutcome::Failure,
                }
            };
            let qb = DVector::from_iterator(
                np,
                basis.iter().map(|&j| {
                    if j < nv {
                        if phase == 1 {
                            0.0
                        } else {
                            q[j]
                        }
                    } else if phase == 1 {
                        1.0
                    } else {
                        0.0
                    }
                }),
            );
            let y = if np == 0 {
                DVector::zeros(0)
            } else {
                match bmat.transpose().lu().solve(&qb) {
                    Some(v) => v,
                    None => return StdOutcome::Failure,
                }
            };

            // Pricing over nonbasic real columns.
            let mut enter: Option<usize> = None;
            let mut best = -FEAS_TOL * (1.0 + y.amax());
            for j in 0..nv {
                if basis.contains(&j) {
                    continue;
                }
                let cj = if phase == 1 { 0.0 } else { q[j] };
                let mut rj = cj;
                for (pos, &row) in keep.iter().enumerate() {
                    rj -= e[(row, j)] * y[pos];
                }
                if rj < best {
                    enter = Some(j);
                    best = rj;
                    if bland {
                        break;
                    }
                }
            }

            let enter = match enter {
                Some(j) => j,
                None => {
                    // Optimal for this phase.
                    if phase == 1 {
                        let art_sum: f64 = basis
                            .iter()
                            .zip(xb.iter())
                            .filter(|(&j, _)| j >= nv)
                            .map(|(_, &v)| v.max(0.0))
                            .sum();
                        if art_sum > 1e-7 * h_scale {
                            return StdOutcome::Infeasible;
                        }
                        if !drive_out_artificials(&e, nv, &mut basis, &mut keep) {
                            return StdOutcome::Failure;
                        }
                        break; // to phase 2
                    }
                    // Phase 2 optimal: assemble the solution.
                    let mut w = DVector::zeros(nv);
                    for (pos, &j) in basis.iter().enumerate() {
                        if j < nv {
                            w[j] = xb[pos].max(0.0);
                        }
                    }
                    // Multipliers back in original row order and sign.
                    let mut y_full = DVector::zeros(p);
                    for (pos, &row) in keep.iter().enumerate() {
                        y_full[row] = signs[row] * y[pos];
                    }
                    let objective = q.dot(&w);
                    return StdOutcome::Optimal { w, y: y_full, objective };
                }
            };

            // Direction and ratio test.
            let col = real_column(&e, enter, &keep);
            let dir = if np == 0 {
                DVector::zeros(0)
            } else {
                match lu.as_ref().unwrap().solve(&col) {
                    Some(v) => v,
                    None => return StdOutcome::Failure,
                }
            };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..np {
                if dir[i] > PIVOT_TOL {
                    let ratio = xb[i].max(0.0) / dir[i];
                    let better = match leave {
                        None => true,
                        Some(cur) => {
                            ratio < best_ratio - 1e-12
                                || (ratio <= best_ratio + 1e-12
                                    && tie_break(basis[cur], basis[i], nv, bland))
                        }
                    };
                    if better {
                        leave = Some(i);
                        best_ratio = ratio;
                    }
                }
            }

            match leave {
                Some(pos) => {
                    basis[pos] = enter;
                }
                None => {
                    if phase == 1 {
                        // Phase-1 objective is bounded below by 0.
                        return StdOutcome::Failure;
                    }
                    // Unbounded: build the ray in the real variables.
                    let mut ray = DVector::zeros(nv);
                    ray[enter] = 1.0;
                    for (pos, &j) in basis.iter().enumerate() {
                        if j < nv {
                            ray[j] = (-dir[pos]).max(0.0);
                        }
                    }
                    return StdOutcome::Unbounded { ray };
                }
            }
        }
    }
    unreachable!()
}

/// Prefer kicking artificials out of the basis; otherwise smaller index
/// (Bland) for determinism.
fn tie_break(current: usize, candidate: usize, nv: usize, _bland: bool) -> bool {
    let cur_art = current >= nv;
    let cand_art = candidate >= nv;
    match (cand_art, cur_art) {
        (true, false) => true,
        (false, true) => false,
        _ => candidate < current,
    }
}

fn subvec(v: &DVector<f64>, keep: &[usize]) -> DVector<f64> {
    DVector::from_iterator(keep.len(), keep.iter().map(|&i| v[i]))
}

fn real_column(e: &DMatrix<f64>, j: usize, keep: &[usize]) -> DVector<f64> {
    DVector::from_iterator(keep.len(), keep.iter().map(|&row| e[(row, j)]))
}

fn basis_matrix(e: &DMatrix<f64>, basis: &[usize], keep: &[usize], nv: usize) -> DMatrix<f64> {
    let np = keep.len();
    DMatrix::from_fn(np, np, |i, k| {
        let j = basis[k];
        if j < nv {
            e[(keep[i], j)]
        } else {
            // Artificial of live-row position (j - nv) in the *original*
            // row numbering: it is 1 exactly on its own row.
            if keep[i] == j - nv {
                1.0
            } else {
                0.0
            }
        }
    })
}

/// After phase 1, pivot remaining zero-valued artificials out of the basis.
/// An artificial whose basis row has no real pivot marks a redundant
/// equality row, which is dropped together with the artificial.
fn drive_out_artificials(
    e: &DMatrix<f64>,
    nv: usize,
    basis: &mut Vec<usize>,
    keep: &mut Vec<usize>,
) -> bool {
    loop {
        let pos = match basis.iter().position(|&j| j >= nv) {
            Some(pos) => pos,
            None => return true,
        };
        let bmat = basis_matrix(e, basis, keep, nv);
        let lut = bmat.transpose().lu();
        let mut unit = DVector::zeros(keep.len());
        unit[pos] = 1.0;
        let u = match lut.solve(&unit) {
            Some(v) => v,
            None => return false,
        };
        // Row of B⁻¹E at `pos`: uᵀ E over real nonbasic columns.
        let mut pivot_col: Option<usize> = None;
        for j in 0..nv {
            if basis.contains(&j) {
                continue;
            }
            let mut val = 0.0;
            for (i, &row) in keep.iter().enumerate() {
                val += u[i] * e[(row, j)];
            }
            if val.abs() > 1e-8 {
                pivot_col = Some(j);
                break;
            }
        }
        match pivot_col {
            Some(j) => basis[pos] = j,
            None => {
                // Redundant equality row: drop the artificial's own row.
                let dead_row = basis[pos] - nv;
                basis.remove(pos);
                keep.retain(|&r| r != dead_row);
                if basis.len() != keep.len() {
                    return false;
                }
            }
        }
    }
}
