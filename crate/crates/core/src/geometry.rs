//! H-representation polytope algebra.
//!
//! All constraint sets in the toolkit are polytopes `{x | Gx ≤ g}`. Rows
//! are ℓ2-normalized on construction so tolerances are scale-free.
//! Redundancy removal is exact (per-row LPs); above a size threshold it
//! switches to Clarkson's algorithm, which prices each candidate row
//! against the currently known irredundant subset only — that is what
//! makes paper-scale constraint sampling (~10⁵..10⁶ raw rows in d ≤ 9)
//! tractable offline.

use nalgebra::{DMatrix, DVector, RowDVector};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::solver::lp::{solve_lp, LinearProgram, Status};

/// Rows below this count use plain sequential per-row LPs.
const SEQUENTIAL_THRESHOLD: usize = 800;
/// Row count above which a planar projection switches to the
/// support-sweep algorithm.
const SHADOW_THRESHOLD: usize = 300;
/// Fourier–Motzkin row guard.
pub const PROJECTION_ROW_GUARD: usize = 100_000;
/// Redundancy tolerance from the construction contract: a row is kept iff
/// maximizing it over the other rows exceeds its rhs by more than this.
const REDUNDANCY_TOL: f64 = 1e-9;
/// Coefficients below this (on normalized rows) are treated as zero when
/// classifying rows for variable elimination.
const ELIM_ZERO_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl Polytope {
    /// Build from `G x ≤ g`, normalizing each row to unit ℓ2 norm.
    /// Trivially true zero rows are dropped; a zero row with negative rhs
    /// is kept verbatim as an explicit infeasibility marker.
    pub fn new(rows: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if rows.nrows() != rhs.len() {
            return Err(Error::Dimension {
                context: "Polytope",
                expected: rows.nrows(),
                got: rhs.len(),
            });
        }
        if !rows.iter().chain(rhs.iter()).all(|v| v.is_finite()) {
            return Err(Error::input("polytope data must be finite"));
        }
        let d = rows.ncols();
        let mut kept_rows: Vec<RowDVector<f64>> = Vec::with_capacity(rows.nrows());
        let mut kept_rhs: Vec<f64> = Vec::with_capacity(rows.nrows());
        for i in 0..rows.nrows() {
            let norm = rows.row(i).norm();
            if norm < 1e-14 {
                if rhs[i] < -1e-14 {
                    kept_rows.push(rows.row(i).into_owned());
                    kept_rhs.push(rhs[i]);
                }
                continue;
            }
            kept_rows.push(rows.row(i).into_owned() / norm);
            kept_rhs.push(rhs[i] / norm);
        }
        let r = kept_rows.len();
        let mut m = DMatrix::zeros(r, d);
        for (i, row) in kept_rows.iter().enumerate() {
            m.row_mut(i).copy_from(row);
        }
        Ok(Self {
            rows: m,
            rhs: DVector::from_vec(kept_rhs),
        })
    }

    /// The whole space (no constraints).
    pub fn universe(dim: usize) -> Self {
        Self {
            rows: DMatrix::zeros(0, dim),
            rhs: DVector::zeros(0),
        }
    }

    /// `{x | ‖x‖∞ ≤ radius}`. `radius = 0` gives the origin.
    pub fn inf_ball(dim: usize, radius: f64) -> Self {
        let mut rows = DMatrix::zeros(2 * dim, dim);
        let mut rhs = DVector::zeros(2 * dim);
        for j in 0..dim {
            rows[(2 * j, j)] = 1.0;
            rows[(2 * j + 1, j)] = -1.0;
            rhs[2 * j] = radius;
            rhs[2 * j + 1] = radius;
        }
        Self { rows, rhs }
    }

    /// An explicitly empty polytope in the given dimension.
    pub fn empty(dim: usize) -> Self {
        Self {
            rows: DMatrix::zeros(1, dim),
            rhs: DVector::from_element(1, -1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn row(&self, i: usize) -> (DVector<f64>, f64) {
        (self.rows.row(i).transpose(), self.rhs[i])
    }

    /// Membership with relative tolerance (default 1e-9 via [`Self::contains`]).
    pub fn contains_with_tol(&self, x: &DVector<f64>, tol: f64) -> bool {
        assert_eq!(x.len(), self.dim(), "contains: dimension mismatch");
        let slack_tol = tol * (1.0 + if self.rhs.is_empty() { 0.0 } else { self.rhs.amax() });
        for i in 0..self.num_rows() {
            if self.rows.row(i).transpose().dot(x) > self.rhs[i] + slack_tol {
                return false;
            }
        }
        true
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_with_tol(x, 1e-9)
    }

    /// Support function `max_{x∈P} aᵀx`; `+∞` when unbounded in `a`.
    pub fn support(&self, a: &DVector<f64>) -> Result<f64> {
        let lp = LinearProgram::new(-a, self.rows.clone(), self.rhs.clone())?;
        let res = solve_lp(&lp);
        match res.status {
            Status::Optimal => Ok(-res.objective),
            Status::Unbounded => Ok(f64::INFINITY),
            Status::Infeasible => Err(Error::EmptySet("support of empty polytope".into())),
            Status::NumericalFailure => Err(Error::Numerical("support LP failed".into())),
        }
    }

    /// Phase-1 feasibility test.
    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.feasible_point()?.is_none())
    }

    /// Some feasible point, if one exists.
    pub fn feasible_point(&self) -> Result<Option<DVector<f64>>> {
        let lp = LinearProgram::new(
            DVector::zeros(self.dim()),
            self.rows.clone(),
            self.rhs.clone(),
        )?;
        let res = solve_lp(&lp);
        match res.status {
            Status::Optimal => Ok(Some(res.point.expect("optimal LP carries a point"))),
            Status::Infeasible => Ok(None),
            _ => Err(Error::Numerical("feasibility LP failed".into())),
        }
    }

    /// Row concatenation; no reduction.
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension {
                context: "intersect",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let r = self.num_rows() + other.num_rows();
        let mut rows = DMatrix::zeros(r, self.dim());
        let mut rhs = DVector::zeros(r);
        rows.view_mut((0, 0), (self.num_rows(), self.dim()))
            .copy_from(&self.rows);
        rows.view_mut((self.num_rows(), 0), (other.num_rows(), self.dim()))
            .copy_from(&other.rows);
        rhs.rows_mut(0, self.num_rows()).copy_from(&self.rhs);
        rhs.rows_mut(self.num_rows(), other.num_rows())
            .copy_from(&other.rhs);
        Ok(Polytope { rows, rhs })
    }

    /// Pontryagin difference `P ⊖ Q`: erode each row by the support of `Q`.
    /// The result may be empty (returned as-is).
    pub fn pontryagin_diff(&self, q: &Polytope) -> Result<Polytope> {
        if self.dim() != q.dim() {
            return Err(Error::Dimension {
                context: "pontryagin_diff",
                expected: self.dim(),
                got: q.dim(),
            });
        }
        let mut rhs = self.rhs.clone();
        for i in 0..self.num_rows() {
            let (a, _) = self.row(i);
            if a.norm() < 1e-14 {
                continue;
            }
            let s = q.support(&a)?;
            if !s.is_finite() {
                return Err(Error::input("pontryagin_diff: subtrahend must be bounded"));
            }
            rhs[i] -= s;
        }
        Ok(Polytope {
            rows: self.rows.clone(),
            rhs,
        })
    }

    /// Chebyshev center restricted to an artificial box of half-width
    /// `bound` (the box makes the LP bounded for unbounded polytopes).
    /// Returns `(center, radius)`; radius < 0 means empty.
    pub fn chebyshev_center(&self, bound: f64) -> Result<(DVector<f64>, f64)> {
        let d = self.dim();
        let r = self.num_rows();
        let mut rows = DMatrix::zeros(r + 2 * d, d + 1);
        let mut rhs = DVector::zeros(r + 2 * d);
        rows.view_mut((0, 0), (r, d)).copy_from(&self.rows);
        for i in 0..r {
            // Rows are unit-norm, so the ball constraint is Gx + t ≤ g.
            rows[(i, d)] = if self.rows.row(i).norm() < 1e-14 { 0.0 } else { 1.0 };
        }
        rhs.rows_mut(0, r).copy_from(&self.rhs);
        for j in 0..d {
            rows[(r + 2 * j, j)] = 1.0;
            rhs[r + 2 * j] = bound;
            rows[(r + 2 * j + 1, j)] = -1.0;
            rhs[r + 2 * j + 1] = bound;
        }
        let mut cost = DVector::zeros(d + 1);
        cost[d] = -1.0;
        let res = solve_lp(&LinearProgram::new(cost, rows, rhs)?);
        match res.status {
            Status::Optimal => {
                let p = res.point.expect("optimal LP carries a point");
                Ok((p.rows(0, d).into_owned(), p[d]))
            }
            Status::Infeasible => Ok((DVector::zeros(d), f64::NEG_INFINITY)),
            _ => Err(Error::Numerical("chebyshev LP failed".into())),
        }
    }

    /// Exact redundancy removal. Errors on an empty input set (that signals
    /// over-tightened constraints upstream).
    pub fn remove_redundancy(&self) -> Result<Polytope> {
        if self.is_empty()? {
            return Err(Error::EmptySet(
                "remove_redundancy called on an empty polytope".into(),
            ));
        }
        let dedup = self.dedup();
        let r = dedup.num_rows();
        let bound = 1e6 * (1.0 + if dedup.rhs().is_empty() { 0.0 } else { dedup.rhs().amax() });
        let (center, radius) = dedup.chebyshev_center(bound)?;
        let kept = if radius <= 1e-9 {
            // Degenerate (lower-dimensional) set: no strictly interior
            // point for the walker; fall back to cold per-row LPs.
            sequential_reduce_cold(&dedup, &(0..r).collect::<Vec<_>>())?
        } else if r <= SEQUENTIAL_THRESHOLD {
            walk_reduce(&dedup, (0..r).collect(), &center)?
        } else {
            clarkson_reduce(&dedup, &center)?
        };
        Ok(dedup.select_rows(&kept))
    }

    /// Merge duplicate directions (quantized at 1e-12), keeping the
    /// smallest rhs per direction. First-occurrence order is preserved.
    pub fn dedup(&self) -> Polytope {
        let d = self.dim();
        let mut seen: HashMap<Vec<i64>, usize> = HashMap::new();
        let mut order: Vec<usize> = Vec::new();
        let mut rhs_min: Vec<f64> = Vec::new();
        for i in 0..self.num_rows() {
            let key: Vec<i64> = (0..d)
                .map(|j| (self.rows[(i, j)] * 1e12).round() as i64)
                .collect();
            match seen.get(&key) {
                Some(&pos) => {
                    if self.rhs[i] < rhs_min[pos] {
                        rhs_min[pos] = self.rhs[i];
                    }
                }
                None => {
                    seen.insert(key, order.len());
                    order.push(i);
                    rhs_min.push(self.rhs[i]);
                }
            }
        }
        let mut rows = DMatrix::zeros(order.len(), d);
        for (pos, &i) in order.iter().enumerate() {
            rows.row_mut(pos).copy_from(&self.rows.row(i));
        }
        Polytope {
            rows,
            rhs: DVector::from_vec(rhs_min),
        }
    }

    fn select_rows(&self, idx: &[usize]) -> Polytope {
        let mut rows = DMatrix::zeros(idx.len(), self.dim());
        let mut rhs = DVector::zeros(idx.len());
        for (pos, &i) in idx.iter().enumerate() {
            rows.row_mut(pos).copy_from(&self.rows.row(i));
            rhs[pos] = self.rhs[i];
        }
        Polytope { rows, rhs }
    }

    /// Exact projection onto the first `keep_dims` coordinates by
    /// Fourier–Motzkin elimination, reducing after every eliminated
    /// variable to bound the row blow-up.
    pub fn project(&self, keep_dims: usize) -> Result<Polytope> {
        if keep_dims >= self.dim() {
            return Err(Error::input(format!(
                "project: keep_dims {} must be below dimension {}",
                keep_dims,
                self.dim()
            )));
        }
        if self.is_empty()? {
            return Ok(Polytope::empty(keep_dims));
        }
        // Fourier–Motzkin pairs every positive row with every negative
        // row per eliminated variable; for large dense systems with a
        // planar target the support-sweep shadow algorithm is exact and
        // avoids the quadratic blow-up.
        if keep_dims == 2 && self.num_rows() > SHADOW_THRESHOLD {
            if let Some(poly) = self.project_shadow_2d()? {
                return Ok(poly);
            }
        }
        let mut cur = self.remove_redundancy()?;
        while cur.dim() > keep_dims {
            // Eliminate the remaining trailing variable with the fewest
            // positive×negative row pairs.
            let mut best: Option<(usize, usize)> = None;
            for j in keep_dims..cur.dim() {
                let mut pos = 0usize;
                let mut neg = 0usize;
                for i in 0..cur.num_rows() {
                    let v = cur.rows[(i, j)];
                    if v > ELIM_ZERO_TOL {
                        pos += 1;
                    } else if v < -ELIM_ZERO_TOL {
                        neg += 1;
                    }
                }
                let score = pos * neg;
                if best.map_or(true, |(_, s)| score < s) {
                    best = Some((j, score));
                }
            }
            let (var, _) = best.expect("at least one variable to eliminate");
            cur = cur.eliminate_variable(var)?;
            if cur.is_empty()? {
                return Ok(Polytope::empty(keep_dims));
            }
            cur = cur.remove_redundancy()?;
        }
        Ok(cur)
    }

    /// Support value and a maximizer in the first two coordinates for a
    /// planar direction, lifted to the full dimension with zeros.
    fn shadow_support(&self, theta: (f64, f64)) -> Result<Option<(f64, [f64; 2])>> {
        let mut a = DVector::zeros(self.dim());
        a[0] = theta.0;
        a[1] = theta.1;
        let lp = LinearProgram::new(-&a, self.rows.clone(), self.rhs.clone())?;
        let res = solve_lp(&lp);
        match res.status {
            Status::Optimal => {
                let p = res.point.expect("optimal LP carries a point");
                Ok(Some((-res.objective, [p[0], p[1]])))
            }
            Status::Unbounded => Ok(None),
            Status::Infeasible => Err(Error::EmptySet("shadow of empty polytope".into())),
            Status::NumericalFailure => Err(Error::Numerical("shadow support LP failed".into())),
        }
    }

    /// Exact projection onto the first two coordinates by recursive
    /// support sweeps: an angular interval is closed once its two
    /// optimal shadow points coincide (shared vertex) or the chord
    /// between them is certified as an edge by the support in the chord
    /// normal direction. Every probed support yields a valid halfplane,
    /// so the collected rows intersect exactly to the shadow polygon.
    /// Returns `None` when the shadow is unbounded (caller falls back to
    /// Fourier–Motzkin).
    fn project_shadow_2d(&self) -> Result<Option<Polytope>> {
        const POINT_TOL: f64 = 1e-10;
        const EDGE_TOL: f64 = 1e-9;
        let mut facets: Vec<(f64, f64, f64)> = Vec::new();
        let cardinal = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        let mut probes: Vec<((f64, f64), [f64; 2])> = Vec::with_capacity(4);
        for &theta in &cardinal {
            match self.shadow_support(theta)? {
                Some((h, p)) => {
                    facets.push((theta.0, theta.1, h));
                    probes.push((theta, p));
                }
                None => return Ok(None),
            }
        }
        // Work stack of adjacent probe pairs (each spans < π).
        let mut stack: Vec<(((f64, f64), [f64; 2]), ((f64, f64), [f64; 2]))> = vec![
            (probes[0], probes[1]),
            (probes[1], probes[2]),
            (probes[2], probes[3]),
            (probes[3], probes[0]),
        ];
        let mut budget = 10_000usize;
        while let Some(((ta, pa), (tb, pb))) = stack.pop() {
            let scale = 1.0 + pa[0].abs().max(pa[1].abs()).max(pb[0].abs()).max(pb[1].abs());
            let dx = pb[0] - pa[0];
            let dy = pb[1] - pa[1];
            if (dx * dx + dy * dy).sqrt() <= POINT_TOL * scale {
                continue;
            }
            // Outward normal of the chord pa→pb, oriented into the cone
            // spanned by ta and tb.
            let mut norm = (dy, -dx);
            let len = (norm.0 * norm.0 + norm.1 * norm.1).sqrt();
            norm = (norm.0 / len, norm.1 / len);
            let mid = (ta.0 + tb.0, ta.1 + tb.1);
            if norm.0 * mid.0 + norm.1 * mid.1 < 0.0 {
                norm = (-norm.0, -norm.1);
            }
            if budget == 0 {
                return Err(Error::Numerical(
                    "shadow projection exceeded its LP budget".into(),
                ));
            }
            budget -= 1;
            match self.shadow_support(norm)? {
                None => return Ok(None),
                Some((h, pm)) => {
                    facets.push((norm.0, norm.1, h));
                    let chord = norm.0 * pa[0] + norm.1 * pa[1];
                    if h <= chord + EDGE_TOL * scale {
                        continue;
                    }
                    stack.push(((ta, pa), (norm, pm)));
                    stack.push(((norm, pm), (tb, pb)));
                }
            }
        }
        let r = facets.len();
        let mut rows = DMatrix::zeros(r, 2);
        let mut rhs = DVector::zeros(r);
        for (i, &(gx, gy, h)) in facets.iter().enumerate() {
            rows[(i, 0)] = gx;
            rows[(i, 1)] = gy;
            rhs[i] = h;
        }
        Ok(Some(Polytope::new(rows, rhs)?.remove_redundancy()?))
    }

    /// One Fourier–Motzkin step: drop column `var`, combining rows with
    /// opposite signs on it.
    fn eliminate_variable(&self, var: usize) -> Result<Polytope> {
        let d = self.dim();
        let mut pos: Vec<usize> = Vec::new();
        let mut neg: Vec<usize> = Vec::new();
        let mut zero: Vec<usize> = Vec::new();
        for i in 0..self.num_rows() {
            let v = self.rows[(i, var)];
            if v > ELIM_ZERO_TOL {
                pos.push(i);
            } else if v < -ELIM_ZERO_TOL {
                neg.push(i);
            } else {
                zero.push(i);
            }
        }
        let total = zero.len() + pos.len() * neg.len();
        if total > PROJECTION_ROW_GUARD {
            return Err(Error::ProjectionBlowup {
                rows: total,
                guard: PROJECTION_ROW_GUARD,
            });
        }
        let keep_cols: Vec<usize> = (0..d).filter(|&j| j != var).collect();
        let mut rows = DMatrix::zeros(total, d - 1);
        let mut rhs = DVector::zeros(total);
        let mut at = 0usize;
        for &i in &zero {
            for (cj, &j) in keep_cols.iter().enumerate() {
                rows[(at, cj)] = self.rows[(i, j)];
            }
            rhs[at] = self.rhs[i];
            at += 1;
        }
        for &ip in &pos {
            let a = self.rows[(ip, var)];
            for &im in &neg {
                let b = -self.rows[(im, var)]; // b > 0
                for (cj, &j) in keep_cols.iter().enumerate() {
                    rows[(at, cj)] = b * self.rows[(ip, j)] + a * self.rows[(im, j)];
                }
                rhs[at] = b * self.rhs[ip] + a * self.rhs[im];
                at += 1;
            }
        }
        Polytope::new(rows, rhs)
    }

    /// `other ⊆ self` up to tolerance, by rowwise support comparison.
    pub fn includes(&self, other: &Polytope, tol: f64) -> Result<bool> {
        if other.is_empty()? {
            return Ok(true);
        }
        for i in 0..self.num_rows() {
            let (a, g) = self.row(i);
            if a.norm() < 1e-14 {
                continue;
            }
            let s = other.support(&a)?;
            if s > g + tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Set equality up to tolerance via two-sided inclusion.
    pub fn set_eq(&self, other: &Polytope, tol: f64) -> Result<bool> {
        Ok(self.includes(other, tol)? && other.includes(self, tol)?)
    }

    /// Text format: first line `r d`, then `r` lines of `d+1` numbers
    /// (row coefficients, then the rhs).
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.num_rows(), self.dim());
        for i in 0..self.num_rows() {
            let mut parts: Vec<String> = (0..self.dim())
                .map(|j| format!("{:.17e}", self.rows[(i, j)]))
                .collect();
            parts.push(format!("{:.17e}", self.rhs[i]));
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Polytope> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("polytope text: missing header".into()))?;
        let mut it = header.split_whitespace();
        let r: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("polytope text: bad row count".into()))?;
        let d: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse("polytope text: bad dimension".into()))?;
        let mut rows = DMatrix::zeros(r, d);
        let mut rhs = DVector::zeros(r);
        for i in 0..r {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("polytope text: missing row {i}")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("polytope text row {i}: {e}")))?;
            if vals.len() != d + 1 {
                return Err(Error::Parse(format!(
                    "polytope text row {i}: expected {} values, got {}",
                    d + 1,
                    vals.len()
                )));
            }
            for j in 0..d {
                rows[(i, j)] = vals[j];
            }
            rhs[i] = vals[d];
        }
        // Already-normalized data passes through Polytope::new unchanged.
        Polytope::new(rows, rhs)
    }
}

/// Maximize row `obj` over the rows in `kept` (excluding `obj` itself),
/// with a cap `G_obj x ≤ g_obj + 1` keeping the LP bounded. Returns the
/// achieved objective value.
fn max_row_over(p: &Polytope, kept: &[usize], obj: usize) -> Result<f64> {
    let d = p.dim();
    let idx: Vec<usize> = kept.iter().cloned().filter(|&i| i != obj).collect();
    let mut rows = DMatrix::zeros(idx.len() + 1, d);
    let mut rhs = DVector::zeros(idx.len() + 1);
    for (pos, &i) in idx.iter().enumerate() {
        rows.row_mut(pos).copy_from(&p.rows().row(i));
        rhs[pos] = p.rhs()[i];
    }
    rows.row_mut(idx.len()).copy_from(&p.rows().row(obj));
    rhs[idx.len()] = p.rhs()[obj] + 1.0;
    let cost = -p.rows().row(obj).transpose();
    let lp = LinearProgram::new(cost, rows, rhs)?;
    let res = solve_lp(&lp);
    match res.status {
        Status::Optimal => Ok(-res.objective),
        // The capped objective cannot be unbounded; infeasible cannot
        // happen for a nonempty set.
        _ => Err(Error::Numerical("redundancy LP failed".into())),
    }
}

/// Same as [`max_row_over`] but also returns the maximizer.
fn max_row_over_with_point(
    p: &Polytope,
    kept: &[usize],
    obj: usize,
) -> Result<(f64, DVector<f64>)> {
    let d = p.dim();
    let idx: Vec<usize> = kept.iter().cloned().filter(|&i| i != obj).collect();
    let mut rows = DMatrix::zeros(idx.len() + 1, d);
    let mut rhs = DVector::zeros(idx.len() + 1);
    for (pos, &i) in idx.iter().enumerate() {
        rows.row_mut(pos).copy_from(&p.rows().row(i));
        rhs[pos] = p.rhs()[i];
    }
    rows.row_mut(idx.len()).copy_from(&p.rows().row(obj));
    rhs[idx.len()] = p.rhs()[obj] + 1.0;
    let cost = -p.rows().row(obj).transpose();
    let lp = LinearProgram::new(cost, rows, rhs)?;
    let res = solve_lp(&lp);
    match res.status {
        Status::Optimal => Ok((-res.objective, res.point.expect("optimal point"))),
        _ => Err(Error::Numerical("redundancy LP failed".into())),
    }
}

/// Plain cold reduction: one fresh LP per row. Used only for degenerate
/// (empty-interior) sets where the warm-started walker has no home point.
fn sequential_reduce_cold(p: &Polytope, candidates: &[usize]) -> Result<Vec<usize>> {
    let mut kept: Vec<usize> = candidates.to_vec();
    let mut i = 0usize;
    while i < kept.len() {
        let row = kept[i];
        let val = match max_row_over(p, &kept, row) {
            Ok(v) => v,
            // A numerically degenerate row LP (swarms of near-parallel
            // rows) cannot prove redundancy; keeping the row is sound.
            Err(Error::Numerical(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if val <= p.rhs()[row] + REDUNDANCY_TOL {
            kept.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(kept)
}

pub static WALK_CALLS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
pub static WALK_PIVOTS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
pub static WALK_FALLBACKS: std::sync::atomic::AtomicUsize =
    std::sync::atomic::AtomicUsize::new(0);
pub static WALK_RESETS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
pub static PRICE_PIVOTS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
pub static PRICE_CALLS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
pub static POLISH_PIVOTS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
pub static POLISH_CALLS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

/// Iteration cap for one [`Walker::maximize`] call before the cold
/// fallback takes over.
const MAX_WALK_ITERS: usize = 600;
const WALK_TOL: f64 = 1e-9;

/// Deterministic per-row right-hand-side perturbation used inside the
/// walker. Makes vertices of the working polytope simple so the
/// active-set walk cannot cycle on the near-parallel row clusters that
/// scenario constraints produce. The perturbation is non-negative, so
/// walker maxima only over-estimate the true maxima: a row certified
/// redundant against the perturbed set is redundant against the true
/// one, while a few extra rows may be kept.
fn perturbation(id: usize) -> f64 {
    let mut z = id as u64 ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    1e-9 * (1.0 + (z as f64 / u64::MAX as f64))
}

/// Sort key grouping rows by quantized direction so consecutive walker
/// calls share nearby optima.
fn direction_key(p: &Polytope, i: usize) -> Vec<i64> {
    (0..p.dim())
        .map(|j| (p.rows()[(i, j)] * 1e3).round() as i64)
        .collect()
}


/// Number of optimal vertices remembered for warm starts.
const VERTEX_CACHE: usize = 128;

/// Cached optimal vertex: the point, the active rows (as global ids),
/// and the precomputed row·x products.
struct CacheEntry {
    x: DVector<f64>,
    work_ids: Vec<usize>,
    ax: Vec<f64>,
}

/// Warm-startable active-set LP maximizer over a maintained row subset.
///
/// Keeps a feasible point, working set, and a cache of recently optimal
/// vertices between calls, so consecutive maximizations over similar
/// directions finish in a handful of pivots instead of a cold simplex
/// solve. This is what makes exact redundancy removal tractable at
/// 10⁵–10⁶ rows on one core. All rows are unit norm (guaranteed by
/// `Polytope::new`).
struct Walker {
    dim: usize,
    /// Row-major compact copy of the member rows (cache-friendly ratio
    /// tests).
    rows: Vec<f64>,
    /// Perturbed right-hand sides (see [`perturbation`]).
    rhs: Vec<f64>,
    /// Global row ids of the members.
    ids: Vec<usize>,
    /// Global id → member position, -1 when absent.
    pos_of: Vec<i32>,
    /// Current feasible point.
    x: DVector<f64>,
    /// Maintained row·x for every member row.
    ax: Vec<f64>,
    /// Working set as positions into `ids`.
    work: Vec<usize>,
    /// Strictly interior fallback point, feasible for every possible
    /// member row.
    home: DVector<f64>,
    cache: Vec<CacheEntry>,
    cache_next: usize,
    /// Scratch buffer for per-row step sizes during the ratio test.
    s_buf: Vec<f64>,
}

impl Walker {
    fn new(dim: usize, home: DVector<f64>, capacity: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            rhs: Vec::new(),
            ids: Vec::new(),
            pos_of: vec![-1; capacity],
            x: home.clone(),
            ax: Vec::new(),
            work: Vec::new(),
            home,
            cache: Vec::new(),
            cache_next: 0,
            s_buf: Vec::new(),
        }
    }

    fn dot_row(&self, pos: usize, v: &DVector<f64>) -> f64 {
        self.rows[pos * self.dim..(pos + 1) * self.dim]
            .iter()
            .zip(v.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn rebuild_ax(&mut self) {
        for pos in 0..self.ids.len() {
            self.ax[pos] = self.dot_row(pos, &self.x);
        }
    }

    fn reset(&mut self) {
        self.x = self.home.clone();
        self.work.clear();
        self.rebuild_ax();
    }

    fn add(&mut self, p: &Polytope, id: usize) {
        for j in 0..self.dim {
            self.rows.push(p.rows()[(id, j)]);
        }
        let rhs = p.rhs()[id] + perturbation(id);
        self.rhs.push(rhs);
        self.ids.push(id);
        let pos = self.ids.len() - 1;
        self.pos_of[id] = pos as i32;
        let ax = self.dot_row(pos, &self.x);
        self.ax.push(ax);
        // Evict cached vertices cut off by the new row; extend the
        // ax vectors of the survivors.
        let dim = self.dim;
        let row = &self.rows[pos * dim..(pos + 1) * dim];
        self.cache.retain_mut(|e| {
            let d: f64 = row.iter().zip(e.x.iter()).map(|(a, b)| a * b).sum();
            if d > rhs {
                false
            } else {
                e.ax.push(d);
                true
            }
        });
        self.cache_next = 0;
        if ax > rhs {
            // Pull the point back toward the interior home point until
            // the new row is satisfied; cheaper to re-optimize from here
            // than from home.
            WALK_RESETS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let ah = self.dot_row(pos, &self.home);
            let t = ((ax - rhs) / (ax - ah)).clamp(0.0, 1.0);
            let step = (&self.home - &self.x) * t;
            self.x += step;
            self.work.clear();
            self.rebuild_ax();
        }
    }

    fn remove(&mut self, id: usize) {
        let pos = self.pos_of[id];
        if pos < 0 {
            return;
        }
        let pos = pos as usize;
        let last = self.ids.len() - 1;
        self.pos_of[id] = -1;
        self.ids.swap_remove(pos);
        self.rhs.swap_remove(pos);
        self.ax.swap_remove(pos);
        if pos != last {
            self.pos_of[self.ids[pos]] = pos as i32;
            for j in 0..self.dim {
                self.rows[pos * self.dim + j] = self.rows[last * self.dim + j];
            }
        }
        self.rows.truncate(last * self.dim);
        // Positions in the working set and cached entries are stale
        // after the swap; dropping a member row keeps x feasible, so
        // restart the working set instead of patching indices.
        self.work.clear();
        self.cache.clear();
        self.cache_next = 0;
    }

    /// Orthonormalize the working-set rows (modified Gram–Schmidt with
    /// reorthogonalization). Returns flattened Q (column-major, d×k) and
    /// R (k×k upper triangular), or the index of a dependent working row
    /// to eject.
    fn working_qr(&self) -> std::result::Result<(Vec<f64>, Vec<f64>), usize> {
        let d = self.dim;
        let k = self.work.len();
        let mut q = vec![0.0; d * k];
        let mut r = vec![0.0; k * k];
        for c in 0..k {
            let row = &self.rows[self.work[c] * d..self.work[c] * d + d];
            let mut v: Vec<f64> = row.to_vec();
            for _pass in 0..2 {
                for j in 0..c {
                    let proj: f64 = (0..d).map(|t| q[j * d + t] * v[t]).sum();
                    r[j * k + c] += proj;
                    for t in 0..d {
                        v[t] -= proj * q[j * d + t];
                    }
                }
            }
            let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if norm < 1e-8 {
                return Err(c);
            }
            r[c * k + c] = norm;
            for t in 0..d {
                q[c * d + t] = v[t] / norm;
            }
        }
        Ok((q, r))
    }

    /// Maximize `aᵀx` over the member rows, skipping `skip_id` if given
    /// (used when the objective row is itself a member). When unbounded,
    /// returns `+∞` and a feasible point with objective above
    /// `needed_value`.
    fn maximize(
        &mut self,
        a: &DVector<f64>,
        needed_value: f64,
        skip_id: Option<usize>,
    ) -> Result<(f64, DVector<f64>)> {
        WALK_CALLS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let d = self.dim;
        if let Some(s) = skip_id {
            let ids = &self.ids;
            self.work.retain(|&w| ids[w] != s);
        }
        // Jump to the best cached vertex when it beats the current point.
        let mut best_cache: Option<usize> = None;
        let mut best_val = a.dot(&self.x);
        for (ci, e) in self.cache.iter().enumerate() {
            let v = a.dot(&e.x);
            if v > best_val + 1e-12 {
                best_val = v;
                best_cache = Some(ci);
            }
        }
        if let Some(ci) = best_cache {
            let e = &self.cache[ci];
            self.x.copy_from(&e.x);
            self.ax.copy_from_slice(&e.ax);
            let pos_of = &self.pos_of;
            let ids = &self.ids;
            self.work = e
                .work_ids
                .iter()
                .map(|&id| pos_of[id] as usize)
                .filter(|&w| skip_id != Some(ids[w]))
                .collect();
        }
        let mut bland = false;
        let mut stall = 0usize;
        let mut best = a.dot(&self.x);
        for _ in 0..MAX_WALK_ITERS {
            WALK_PIVOTS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let k = self.work.len();
            let (q, r) = match self.working_qr() {
                Ok(qr) => qr,
                Err(dep) => {
                    self.work.remove(dep);
                    stall += 1;
                    if stall > 300 {
                        break;
                    }
                    continue;
                }
            };
            // dir = a − Q Qᵀ a; multipliers from R λ = Qᵀ a.
            let mut qta = vec![0.0; k];
            let mut dir = a.clone();
            for c in 0..k {
                let proj: f64 = (0..d).map(|t| q[c * d + t] * a[t]).sum();
                qta[c] = proj;
                for t in 0..d {
                    dir[t] -= proj * q[c * d + t];
                }
            }
            if dir.norm() > WALK_TOL {
                // Ratio test over non-working member rows, recording the
                // step sizes so row·x products update in place.
                let nm = self.ids.len();
                self.s_buf.resize(nm, 0.0);
                let mut t_best = f64::INFINITY;
                let mut hit: Option<usize> = None;
                for pos in 0..nm {
                    let s = self.dot_row(pos, &dir);
                    self.s_buf[pos] = s;
                    if Some(self.ids[pos]) == skip_id || self.work.contains(&pos) {
                        continue;
                    }
                    if s > 1e-12 {
                        let slack = (self.rhs[pos] - self.ax[pos]).max(0.0);
                        let t = slack / s;
                        let better = if bland {
                            t < t_best - 1e-12
                                || (t < t_best + 1e-12
                                    && hit.map_or(true, |h| self.ids[pos] < self.ids[h]))
                        } else {
                            t < t_best
                        };
                        if better {
                            t_best = t;
                            hit = Some(pos);
                        }
                    }
                }
                match hit {
                    None => {
                        // Unbounded in this direction.
                        let aval = a.dot(&self.x);
                        let adir = a.dot(&dir).max(1e-12);
                        let t = ((needed_value - aval) / adir).max(1.0);
                        return Ok((f64::INFINITY, &self.x + &dir * t));
                    }
                    Some(pos) => {
                        if t_best > 0.0 {
                            self.x.axpy(t_best, &dir, 1.0);
                            for p2 in 0..nm {
                                self.ax[p2] += t_best * self.s_buf[p2];
                            }
                        }
                        self.work.push(pos);
                        if self.work.len() > d {
                            return Err(Error::Numerical(
                                "walker working set exceeded dimension".into(),
                            ));
                        }
                    }
                }
                let cur = a.dot(&self.x);
                if cur > best + 1e-12 {
                    best = cur;
                    stall = 0;
                } else {
                    stall += 1;
                }
            } else {
                // Solve R λ = Qᵀ a by back-substitution.
                let mut lambda = qta;
                for c in (0..k).rev() {
                    for j in c + 1..k {
                        let l = lambda[j];
                        lambda[c] -= r[c * k + j] * l;
                    }
                    lambda[c] /= r[c * k + c];
                }
                let mut drop_c: Option<usize> = None;
                if bland {
                    for (c, &w) in self.work.iter().enumerate() {
                        if lambda[c] < -WALK_TOL
                            && drop_c.map_or(true, |b| self.ids[w] < self.ids[self.work[b]])
                        {
                            drop_c = Some(c);
                        }
                    }
                } else {
                    let mut min_l = -WALK_TOL;
                    for c in 0..k {
                        if lambda[c] < min_l {
                            min_l = lambda[c];
                            drop_c = Some(c);
                        }
                    }
                }
                match drop_c {
                    None => {
                        self.store_vertex();
                        return Ok((a.dot(&self.x), self.x.clone()));
                    }
                    Some(c) => {
                        self.work.remove(c);
                        stall += 1;
                    }
                }
            }
            if stall > 60 {
                bland = true;
            }
            if stall > 300 {
                break;
            }
        }
        Err(Error::Numerical("active-set walk stalled".into()))
    }

    fn store_vertex(&mut self) {
        let entry = CacheEntry {
            x: self.x.clone(),
            work_ids: self.work.iter().map(|&w| self.ids[w]).collect(),
            ax: self.ax.clone(),
        };
        if self.cache.len() < VERTEX_CACHE {
            self.cache.push(entry);
        } else {
            self.cache[self.cache_next] = entry;
            self.cache_next = (self.cache_next + 1) % VERTEX_CACHE;
        }
    }
}


/// Exact reduction of `candidates` against each other using the
/// warm-started walker, with a cold-LP fallback per row on numerical
/// trouble. `center` must be strictly interior.
fn walk_reduce(p: &Polytope, mut kept: Vec<usize>, center: &DVector<f64>) -> Result<Vec<usize>> {
    kept.sort_by_cached_key(|&i| direction_key(p, i));
    let mut walker = Walker::new(p.dim(), center.clone(), p.num_rows());
    for &id in &kept {
        walker.add(p, id);
    }
    let mut i = 0usize;
    while i < kept.len() {
        let id = kept[i];
        let a = p.rows().row(id).transpose();
        let piv0 = WALK_PIVOTS.load(std::sync::atomic::Ordering::Relaxed);
        let val = match walker.maximize(&a, p.rhs()[id] + 1.0, Some(id)) {
            Ok((v, _)) => v,
            Err(_) => {
                WALK_FALLBACKS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                walker.reset();
                match max_row_over(p, &kept, id) {
                    Ok(v) => v,
                    // Degenerate row LP: redundancy unproven, keep the row.
                    Err(Error::Numerical(_)) => f64::INFINITY,
                    Err(e) => return Err(e),
                }
            }
        };
        POLISH_CALLS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        POLISH_PIVOTS.fetch_add(
            WALK_PIVOTS.load(std::sync::atomic::Ordering::Relaxed) - piv0,
            std::sync::atomic::Ordering::Relaxed,
        );
        if val <= p.rhs()[id] + REDUNDANCY_TOL {
            walker.remove(id);
            kept.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(kept)
}

/// Clarkson's output-sensitive reduction. Candidate rows are priced
/// against the known-essential set only; a violated candidate donates a
/// new essential row found by ray shooting from the interior point.
/// Candidates are visited grouped by direction so the walker's warm
/// start pays off.
fn clarkson_reduce(p: &Polytope, center: &DVector<f64>) -> Result<Vec<usize>> {
    let r = p.num_rows();
    let d = p.dim();
    let mut essential: Vec<usize> = Vec::new();
    let mut in_essential = vec![false; r];
    let mut decided = vec![false; r];
    let mut walker = Walker::new(d, center.clone(), r);

    // Precomputed rowᵀ·center, reused by every ray shot.
    let cdot: Vec<f64> = (0..r)
        .map(|j| (0..d).map(|c| p.rows()[(j, c)] * center[c]).sum())
        .collect();

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by_cached_key(|&i| direction_key(p, i));

    for &i in &order {
        if decided[i] {
            continue;
        }
        let a = p.rows().row(i).transpose();
        loop {
            if in_essential[i] {
                decided[i] = true;
                break;
            }
            let piv0 = WALK_PIVOTS.load(std::sync::atomic::Ordering::Relaxed);
            let solved = match walker.maximize(&a, p.rhs()[i] + 1.0, None) {
                Ok(res) => Some(res),
                Err(_) => {
                    WALK_FALLBACKS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    walker.reset();
                    match max_row_over_with_point(p, &essential, i) {
                        Ok(res) => Some(res),
                        // Degenerate row LP: redundancy unproven, keep the
                        // row as essential (sound: the set is unchanged).
                        Err(Error::Numerical(_)) => None,
                        Err(e) => return Err(e),
                    }
                }
            };
            let (val, point) = match solved {
                Some(res) => res,
                None => {
                    essential.push(i);
                    in_essential[i] = true;
                    decided[i] = true;
                    walker.add(p, i);
                    break;
                }
            };
            PRICE_CALLS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            PRICE_PIVOTS.fetch_add(
                WALK_PIVOTS.load(std::sync::atomic::Ordering::Relaxed) - piv0,
                std::sync::atomic::Ordering::Relaxed,
            );
            if val <= p.rhs()[i] + REDUNDANCY_TOL {
                decided[i] = true;
                break;
            }
            // The maximizer lies in the essential polytope but violates
            // row i; the first row hit by the ray center → maximizer is
            // supported there, hence essential. Rows already decided
            // cannot be hit first: essential rows hold at the maximizer,
            // and redundant rows contain the whole essential polytope.
            let dir = &point - center;
            let mut best_t = f64::INFINITY;
            let mut hit: Option<usize> = None;
            for j in 0..r {
                if decided[j] && j != i {
                    continue;
                }
                let denom: f64 = (0..d).map(|c| p.rows()[(j, c)] * dir[c]).sum();
                if denom > 1e-13 {
                    let t = (p.rhs()[j] - cdot[j]) / denom;
                    if t < best_t - 1e-12 {
                        best_t = t;
                        hit = Some(j);
                    }
                }
            }
            match hit {
                Some(j) => {
                    essential.push(j);
                    in_essential[j] = true;
                    decided[j] = true;
                    walker.add(p, j);
                    if j == i {
                        break;
                    }
                }
                None => {
                    // No constraint blocks the ray: row i is essential by
                    // the violation itself.
                    essential.push(i);
                    in_essential[i] = true;
                    decided[i] = true;
                    walker.add(p, i);
                    break;
                }
            }
        }
    }

    // Polish: rows that entered the essential set early can be made
    // redundant by later additions.
    essential.sort_unstable();
    walk_reduce(p, essential, center)
}
