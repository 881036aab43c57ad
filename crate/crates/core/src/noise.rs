//! Measurement-noise model and the data-driven outer bound on the system
//! matrices.
//!
//! Noise is a truncated zero-mean Gaussian supported on a compact
//! polytope; truncation is by rejection so the density shape is
//! preserved. The bound ρ̂ (and, alternatively, per-entry intervals) is
//! found by maximizing the norm of the noise-perturbed identified
//! matrices over admissible noise sequences with a multi-start coordinate
//! ascent; since any feasible evaluation lower-bounds the true maximum,
//! the result is inflated by a safety factor before use.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::hankel::{build_hankel, TrajectoryData, PINV_REL_TOL};

/// A rejection-sampling acceptance rate below 1/this is a model error.
const MAX_REJECTIONS: usize = 10_000;
/// Vertex-count guard for eager sign enumeration.
const VERTEX_GUARD: usize = 1 << 16;

#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub support: Polytope,
    /// Per-dimension Gaussian standard deviation before truncation.
    pub scale: DVector<f64>,
}

impl NoiseModel {
    pub fn new(support: Polytope, scale: DVector<f64>) -> Result<Self> {
        if scale.len() != support.dim() {
            return Err(Error::Dimension {
                context: "NoiseModel scale",
                expected: support.dim(),
                got: scale.len(),
            });
        }
        if scale.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::config("noise scale must be finite and nonnegative"));
        }
        let origin = DVector::zeros(support.dim());
        if !support.contains_with_tol(&origin, 0.0) {
            return Err(Error::config("noise support must contain the origin"));
        }
        for j in 0..support.dim() {
            let mut e = DVector::zeros(support.dim());
            e[j] = 1.0;
            let up = support.support(&e)?;
            e[j] = -1.0;
            let dn = support.support(&e)?;
            if !up.is_finite() || !dn.is_finite() {
                return Err(Error::config("noise support must be compact"));
            }
        }
        Ok(Self { support, scale })
    }

    /// Box support `‖ε‖∞ ≤ bound` with std `std_factor · bound` per
    /// dimension (default convention: 1/3, i.e. the bound at 3σ).
    pub fn box_model(dim: usize, bound: f64, std_factor: f64) -> Result<Self> {
        if bound < 0.0 || std_factor < 0.0 {
            return Err(Error::config("noise bound and std factor must be nonnegative"));
        }
        Self::new(
            Polytope::inf_ball(dim, bound),
            DVector::from_element(dim, std_factor * bound),
        )
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// Membership in the support with zero tolerance.
    pub fn in_support(&self, eps: &DVector<f64>) -> bool {
        self.support.contains_with_tol(eps, 0.0)
    }

    /// One truncated draw.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<DVector<f64>> {
        let d = self.dim();
        if self.scale.iter().all(|&s| s == 0.0) {
            return Ok(DVector::zeros(d));
        }
        let normals: Vec<Normal<f64>> = self
            .scale
            .iter()
            .map(|&s| Normal::new(0.0, s.max(f64::MIN_POSITIVE)).expect("valid normal"))
            .collect();
        for _ in 0..MAX_REJECTIONS {
            let draw = DVector::from_fn(d, |i, _| {
                if self.scale[i] == 0.0 {
                    0.0
                } else {
                    normals[i].sample(rng)
                }
            });
            if self.in_support(&draw) {
                return Ok(draw);
            }
        }
        Err(Error::config(
            "noise rejection sampling acceptance rate below 1e-4; scale and support mismatch",
        ))
    }

    /// Time-wise iid sequence.
    pub fn sample_sequence(&self, length: usize, rng: &mut impl Rng) -> Result<Vec<DVector<f64>>> {
        (0..length).map(|_| self.sample(rng)).collect()
    }
}

/// Which induced matrix norm bounds the identified matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Inf,
    One,
}

impl NormKind {
    pub fn apply(&self, m: &DMatrix<f64>) -> f64 {
        match self {
            // max absolute row sum
            NormKind::Inf => (0..m.nrows())
                .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            // max absolute column sum
            NormKind::One => (0..m.ncols())
                .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }
}

/// Exact identification from noise-free Hankel data:
/// `[A,B] = rows n..2n of H_x · pinv([rows 0..n of H_x; rows 0..m of H_u])`.
///
/// Test/bounding oracle only — the controller never sees its output.
pub fn identify_exact(
    h_x: &DMatrix<f64>,
    h_u: &DMatrix<f64>,
    n: usize,
    m: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if h_x.nrows() < 2 * n || h_u.nrows() < m || h_x.ncols() != h_u.ncols() {
        return Err(Error::input("identify_exact: Hankel blocks mismatched"));
    }
    let cols = h_x.ncols();
    let mut stacked = DMatrix::zeros(n + m, cols);
    stacked.view_mut((0, 0), (n, cols)).copy_from(&h_x.view((0, 0), (n, cols)));
    stacked.view_mut((n, 0), (m, cols)).copy_from(&h_u.view((0, 0), (m, cols)));
    let svd = stacked.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > PINV_REL_TOL * smax.max(f64::MIN_POSITIVE))
        .count();
    if rank < n + m {
        return Err(Error::RankDeficient(format!(
            "identification block rank {rank} < {}",
            n + m
        )));
    }
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for i in 0..(n + m) {
        sinv[(i, i)] = 1.0 / svd.singular_values[i];
    }
    let pinv = vt.transpose() * sinv * u.transpose();
    let ab = h_x.view((n, 0), (n, cols)) * pinv;
    Ok((
        ab.view((0, 0), (n, n)).into_owned(),
        ab.view((0, n), (n, m)).into_owned(),
    ))
}

/// Search configuration for the noise-perturbed identification bounds.
#[derive(Debug, Clone)]
pub struct RhoSearchConfig {
    pub starts: usize,
    pub sweeps: usize,
    /// Candidate values per coordinate per sweep.
    pub grid: usize,
    pub safety: f64,
}

impl Default for RhoSearchConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            sweeps: 3,
            grid: 5,
            safety: 1.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RhoEstimate {
    pub raw: f64,
    pub inflated: f64,
}

/// Identify `[A,B]` after subtracting the hypothesized noise sequence
/// from the recorded states. `None` when the perturbed block drops rank.
fn identify_with_noise(
    data: &TrajectoryData,
    noise: &[DVector<f64>],
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let denoised: Vec<DVector<f64>> = data
        .noisy_states
        .iter()
        .zip(noise.iter())
        .map(|(x, e)| x - e)
        .collect();
    let h_x = build_hankel(&denoised, 2).ok()?;
    let h_u = build_hankel(&data.inputs[..data.len() - 1], 1).ok()?;
    identify_exact(&h_x, &h_u, data.n, data.m).ok()
}

/// Per-dimension interval hull of the noise support (tight for the box
/// supports used in practice; an outer bound otherwise, which only makes
/// the search space larger).
fn support_intervals(model: &NoiseModel) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = model.dim();
    let mut lo = DVector::zeros(d);
    let mut hi = DVector::zeros(d);
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        hi[j] = model.support.support(&e)?;
        e[j] = -1.0;
        lo[j] = -model.support.support(&e)?;
    }
    Ok((lo, hi))
}

/// Maximize `objective` over admissible noise sequences by multi-start
/// coordinate ascent. Starts: the zero sequence, random support samples,
/// and random bound-vertex sign patterns; each coordinate is swept over a
/// grid within its interval hull, with candidates outside the support
/// clipped away. Returns the best value and its maximizer.
fn ascend_noise<F>(
    data: &TrajectoryData,
    model: &NoiseModel,
    cfg: &RhoSearchConfig,
    rng: &mut impl Rng,
    objective: F,
) -> Result<(f64, Vec<DVector<f64>>)>
where
    F: Fn(&[DVector<f64>]) -> Option<f64>,
{
    let (lo, hi) = support_intervals(model)?;
    let n = data.n;
    let len = data.len();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_seq: Option<Vec<DVector<f64>>> = None;

    for start in 0..cfg.starts.max(1) {
        let mut seq: Vec<DVector<f64>> = if start == 0 {
            (0..len).map(|_| DVector::zeros(n)).collect()
        } else if start % 2 == 1 {
            // Bound-vertex sign pattern.
            (0..len)
                .map(|_| {
                    DVector::from_fn(n, |j, _| if rng.gen::<bool>() { hi[j] } else { lo[j] })
                })
                .collect()
        } else {
            model.sample_sequence(len, rng)?
        };
        // Project onto the support (vertex patterns of a non-box support
        // may land outside).
        for e in seq.iter_mut() {
            if !model.in_support(e) {
                *e = DVector::zeros(n);
            }
        }
        let mut val = match objective(&seq) {
            Some(v) => v,
            None => continue,
        };
        for _ in 0..cfg.sweeps {
            let mut improved = false;
            for k in 0..len {
                for j in 0..n {
                    for g in 0..cfg.grid {
                        let cand = if cfg.grid == 1 {
                            lo[j]
                        } else {
                            lo[j] + (hi[j] - lo[j]) * g as f64 / (cfg.grid - 1) as f64
                        };
                        let prev = seq[k][j];
                        if cand == prev {
                            continue;
                        }
                        seq[k][j] = cand;
                        if !model.in_support(&seq[k]) {
                            seq[k][j] = prev;
                            continue;
                        }
                        match objective(&seq) {
                            Some(v) if v > val + 1e-12 => {
                                val = v;
                                improved = true;
                            }
                            _ => seq[k][j] = prev,
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        // Re-evaluate the final sequence (the sweep bookkeeping above is
        // conservative).
        if let Some(v) = objective(&seq) {
            if v > best_val {
                best_val = v;
                best_seq = Some(seq);
            }
        }
    }

    match best_seq {
        Some(seq) => Ok((best_val, seq)),
        None => Err(Error::RankDeficient(
            "all noise candidates were rank deficient".into(),
        )),
    }
}

/// Upper bound ρ̂ on the induced norm of the noise-perturbed identified
/// matrices `[A(ε̄), B(ε̄)]` over admissible noise sequences.
pub fn estimate_rho(
    data: &TrajectoryData,
    model: &NoiseModel,
    norm: NormKind,
    cfg: &RhoSearchConfig,
    rng: &mut impl Rng,
) -> Result<RhoEstimate> {
    let (raw, _) = ascend_noise(data, model, cfg, rng, |seq| {
        identify_with_noise(data, seq).map(|(a, b)| {
            let mut ab = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
            ab.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(&a);
            ab.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(&b);
            norm.apply(&ab)
        })
    })?;
    Ok(RhoEstimate {
        raw,
        inflated: raw * cfg.safety,
    })
}

/// Per-entry intervals of the noise-perturbed identified `[A,B]`,
/// inflated about the zero-noise identification by the safety factor.
pub fn estimate_entry_intervals(
    data: &TrajectoryData,
    model: &NoiseModel,
    cfg: &RhoSearchConfig,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = data.n;
    let m = data.m;
    let zero_seq: Vec<DVector<f64>> = (0..data.len()).map(|_| DVector::zeros(n)).collect();
    let (a0, b0) = identify_with_noise(data, &zero_seq)
        .ok_or_else(|| Error::RankDeficient("zero-noise identification failed".into()))?;
    let mut nominal = DMatrix::zeros(n, n + m);
    nominal.view_mut((0, 0), (n, n)).copy_from(&a0);
    nominal.view_mut((0, n), (n, m)).copy_from(&b0);

    let mut lo = DMatrix::zeros(n, n + m);
    let mut hi = DMatrix::zeros(n, n + m);
    for i in 0..n {
        for j in 0..(n + m) {
            let pick = |mats: &(DMatrix<f64>, DMatrix<f64>)| {
                if j < n {
                    mats.0[(i, j)]
                } else {
                    mats.1[(i, j - n)]
                }
            };
            let (max_v, _) = ascend_noise(data, model, cfg, rng, |seq| {
                identify_with_noise(data, seq).map(|ab| pick(&ab))
            })?;
            let (neg_min, _) = ascend_noise(data, model, cfg, rng, |seq| {
                identify_with_noise(data, seq).map(|ab| -pick(&ab))
            })?;
            let min_v = -neg_min;
            let c = nominal[(i, j)];
            lo[(i, j)] = c - cfg.safety * (c - min_v);
            hi[(i, j)] = c + cfg.safety * (max_v - c);
        }
    }
    Ok((lo, hi))
}

/// How the matrix box is stored/enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexMode {
    /// Eagerly enumerate all sign-pattern vertices (guarded at 2^16).
    FullBox,
    /// Store intervals only; enumerate on demand.
    Interval,
}

/// Entrywise box of admissible `[A,B]` pairs with its vertex list.
#[derive(Debug, Clone)]
pub struct SystemBound {
    pub rho_hat: f64,
    /// Entrywise lower bounds on `[A,B]`, `n × (n+m)`.
    pub lo: DMatrix<f64>,
    /// Entrywise upper bounds on `[A,B]`.
    pub hi: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    pub norm_kind: NormKind,
    vertices: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>>,
}

impl SystemBound {
    /// Uniform box `±rho_hat` per entry.
    pub fn from_rho(rho_hat: f64, n: usize, m: usize, mode: VertexMode, norm: NormKind) -> Result<Self> {
        if rho_hat < 0.0 {
            return Err(Error::input("rho_hat must be nonnegative"));
        }
        Self::from_intervals(
            DMatrix::from_element(n, n + m, -rho_hat),
            DMatrix::from_element(n, n + m, rho_hat),
            mode,
            norm,
        )
    }

    /// Entrywise interval box `lo ≤ [A,B] ≤ hi`.
    pub fn from_intervals(
        lo: DMatrix<f64>,
        hi: DMatrix<f64>,
        mode: VertexMode,
        norm: NormKind,
    ) -> Result<Self> {
        let n = lo.nrows();
        if hi.nrows() != n || lo.ncols() != hi.ncols() || lo.ncols() <= n {
            return Err(Error::input("SystemBound: interval shape mismatch"));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::input("SystemBound: lo exceeds hi"));
        }
        let m = lo.ncols() - n;
        let rho_hat = lo
            .iter()
            .chain(hi.iter())
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        let mut out = Self {
            rho_hat,
            lo,
            hi,
            n,
            m,
            norm_kind: norm,
            vertices: None,
        };
        if mode == VertexMode::FullBox {
            out.vertices = Some(out.enumerate_vertices()?);
        }
        Ok(out)
    }

    /// Number of entries with a genuine interval (lo < hi).
    fn free_entries(&self) -> Vec<(usize, usize)> {
        let mut free = Vec::new();
        for i in 0..self.n {
            for j in 0..(self.n + self.m) {
                if self.hi[(i, j)] > self.lo[(i, j)] {
                    free.push((i, j));
                }
            }
        }
        free
    }

    fn enumerate_vertices(&self) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        let free = self.free_entries();
        if free.len() >= 17 || (1usize << free.len()) > VERTEX_GUARD {
            return Err(Error::config(format!(
                "vertex enumeration would produce 2^{} vertices; use interval mode",
                free.len()
            )));
        }
        let count = 1usize << free.len();
        let mut out = Vec::with_capacity(count);
        for mask in 0..count {
            let mut ab = self.lo.clone();
            for (bit, &(i, j)) in free.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    ab[(i, j)] = self.hi[(i, j)];
                }
            }
            out.push((
                ab.view((0, 0), (self.n, self.n)).into_owned(),
                ab.view((0, self.n), (self.n, self.m)).into_owned(),
            ));
        }
        Ok(out)
    }

    /// Vertex list, computing it lazily in interval mode.
    pub fn vertices(&self) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        match &self.vertices {
            Some(v) => Ok(v.clone()),
            None => self.enumerate_vertices(),
        }
    }

    /// True when `[A,B]` lies in the box entrywise.
    pub fn contains(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
        if a.nrows() != self.n || a.ncols() != self.n || b.ncols() != self.m {
            return false;
        }
        for i in 0..self.n {
            for j in 0..self.n {
                if a[(i, j)] < self.lo[(i, j)] - 1e-12 || a[(i, j)] > self.hi[(i, j)] + 1e-12 {
                    return false;
                }
            }
            for j in 0..self.m {
                let (l, h) = (self.lo[(i, self.n + j)], self.hi[(i, self.n + j)]);
                if b[(i, j)] < l - 1e-12 || b[(i, j)] > h + 1e-12 {
                    return false;
                }
            }
        }
        true
    }
}
