//! Hankel-matrix data representation and the sample-parameterized
//! prediction matrix.
//!
//! One recorded noisy input/state trajectory is reshaped into Hankel
//! matrices; subtracting a hypothesized noise Hankel matrix and taking a
//! pseudo-right-inverse of the stacked (initial-state, input) block yields
//! a matrix `M` that maps `(x̂_k − ε_k; u_k..u_{k+L})` to a predicted
//! state trajectory of length `L+1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value threshold for the prediction pseudo-inverse.
pub const PINV_REL_TOL: f64 = 1e-10;
/// Default relative rank tolerance for persistency-of-excitation checks.
pub const PE_RANK_TOL: f64 = 1e-9;

/// One recorded input/state trajectory of length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub inputs: Vec<DVector<f64>>,
    pub noisy_states: Vec<DVector<f64>>,
    pub n: usize,
    pub m: usize,
}

impl TrajectoryData {
    pub fn new(inputs: Vec<DVector<f64>>, noisy_states: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != noisy_states.len() {
            return Err(Error::input(format!(
                "trajectory: need equal nonzero input/state counts, got {}/{}",
                inputs.len(),
                noisy_states.len()
            )));
        }
        let m = inputs[0].len();
        let n = noisy_states[0].len();
        if n == 0 || m == 0 {
            return Err(Error::input("trajectory: zero-dimensional signals"));
        }
        if inputs.iter().any(|u| u.len() != m) || noisy_states.iter().any(|x| x.len() != n) {
            return Err(Error::input("trajectory: inconsistent signal dimensions"));
        }
        Ok(Self {
            inputs,
            noisy_states,
            n,
            m,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Check the rank precondition `N − L ≥ n + (L+1)m` for horizon `L`.
    pub fn supports_horizon(&self, horizon: usize) -> bool {
        self.len() >= horizon && self.len() - horizon >= self.n + (horizon + 1) * self.m
    }

    /// CSV with header `k,u_1..u_m,xhat_1..xhat_n`, doubles printed with
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("k");
        for j in 1..=self.m {
            header.push_str(&format!(",u_{j}"));
        }
        for j in 1..=self.n {
            header.push_str(&format!(",xhat_{j}"));
        }
        let mut out = header;
        out.push('\n');
        for k in 0..self.len() {
            out.push_str(&k.to_string());
            for v in self.inputs[k].iter() {
                out.push_str(&format!(",{v:.16e}"));
            }
            for v in self.noisy_states[k].iter() {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("trajectory csv: empty".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"k") {
            return Err(Error::Parse("trajectory csv: header must start with k".into()));
        }
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let n = cols.iter().filter(|c| c.starts_with("xhat_")).count();
        if m == 0 || n == 0 || cols.len() != 1 + m + n {
            return Err(Error::Parse("trajectory csv: malformed header".into()));
        }
        let mut inputs = Vec::new();
        let mut states = Vec::new();
        for (i, line) in lines.enumerate() {
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != 1 + m + n {
                return Err(Error::Parse(format!(
                    "trajectory csv row {i}: expected {} fields, got {}",
                    1 + m + n,
                    vals.len()
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("trajectory csv row {i}: {e}")))
            };
            let u: Vec<f64> = vals[1..1 + m]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<_>>()?;
            let x: Vec<f64> = vals[1 + m..]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<_>>()?;
            inputs.push(DVector::from_vec(u));
            states.push(DVector::from_vec(x));
        }
        Self::new(inputs, states)
    }
}

/// Hankel matrix of `seq` with `order` stacked block-rows:
/// column `j` is `seq[j..j+order]` stacked.
pub fn build_hankel(seq: &[DVector<f64>], order: usize) -> Result<DMatrix<f64>> {
    if seq.is_empty() {
        return Err(Error::input("build_hankel: empty sequence"));
    }
    let n = seq.len();
    if order == 0 || order > n {
        return Err(Error::Dimension {
            context: "build_hankel order",
            expected: n,
            got: order,
        });
    }
    let d = seq[0].len();
    let cols = n - order + 1;
    let mut h = DMatrix::zeros(order * d, cols);
    for j in 0..cols {
        for b in 0..order {
            h.view_mut((b * d, j), (d, 1)).copy_from(&seq[j + b]);
        }
    }
    Ok(h)
}

/// Persistency of excitation of the given order: the Hankel matrix has
/// full row rank, with numerical rank at relative tolerance `rank_tol`.
pub fn check_pe(seq: &[DVector<f64>], order: usize, rank_tol: f64) -> Result<bool> {
    if seq.is_empty() {
        return Err(Error::input("check_pe: empty sequence"));
    }
    let d = seq[0].len();
    let n = seq.len();
    if order > n || order * d > n - order + 1 {
        return Ok(false);
    }
    let h = build_hankel(seq, order)?;
    let sv = h.singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return Ok(false);
    }
    let rank = sv.iter().filter(|&&s| s > rank_tol * smax).count();
    Ok(rank == order * d)
}

/// The two fixed Hankel matrices of a trajectory for prediction order `L+1`.
#[derive(Debug, Clone)]
pub struct HankelBundle {
    pub h_u: DMatrix<f64>,
    pub h_xhat: DMatrix<f64>,
    pub order: usize,
    pub n: usize,
    pub m: usize,
    pub data_len: usize,
}

impl HankelBundle {
    /// Build from a trajectory with prediction horizon `L` (order `L+1`).
    pub fn new(data: &TrajectoryData, horizon: usize) -> Result<Self> {
        if !data.supports_horizon(horizon) {
            return Err(Error::input(format!(
                "trajectory too short: N={} does not satisfy N-L >= n+(L+1)m for L={}",
                data.len(),
                horizon
            )));
        }
        let order = horizon + 1;
        Ok(Self {
            h_u: build_hankel(&data.inputs, order)?,
            h_xhat: build_hankel(&data.noisy_states, order)?,
            order,
            n: data.n,
            m: data.m,
            data_len: data.len(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.order - 1
    }

    pub fn num_columns(&self) -> usize {
        self.h_u.ncols()
    }
}

/// One noise sample's prediction matrix, cached for reuse.
#[derive(Debug, Clone)]
pub struct PredictionSample {
    pub h_eps: DMatrix<f64>,
    pub eps0: DVector<f64>,
    pub m_mat: DMatrix<f64>,
}

impl PredictionSample {
    pub fn new(bundle: &HankelBundle, h_eps: DMatrix<f64>, eps0: DVector<f64>) -> Result<Self> {
        if eps0.len() != bundle.n {
            return Err(Error::Dimension {
                context: "PredictionSample eps0",
                expected: bundle.n,
                got: eps0.len(),
            });
        }
        let m_mat = build_prediction_matrix(bundle, &h_eps)?;
        Ok(Self { h_eps, eps0, m_mat })
    }
}

/// `M = (H_x̂ − H_ε) · pinv([first n rows of (H_x̂ − H_ε); H_u])`.
///
/// The pseudo-inverse is taken by SVD; singular values below
/// `PINV_REL_TOL` relative to the largest are rank deficiency and the
/// sample is rejected.
pub fn build_prediction_matrix(bundle: &HankelBundle, h_eps: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows_x, cols) = (bundle.h_xhat.nrows(), bundle.h_xhat.ncols());
    if h_eps.nrows() != rows_x || h_eps.ncols() != cols {
        return Err(Error::Dimension {
            context: "build_prediction_matrix H_eps",
            expected: rows_x * cols,
            got: h_eps.nrows() * h_eps.ncols(),
        });
    }
    let n = bundle.n;
    let clean = &bundle.h_xhat - h_eps;
    let stacked_rows = n + bundle.h_u.nrows();
    let mut stacked = DMatrix::zeros(stacked_rows, cols);
    stacked.view_mut((0, 0), (n, cols)).copy_from(&clean.view((0, 0), (n, cols)));
    stacked
        .view_mut((n, 0), (bundle.h_u.nrows(), cols))
        .copy_from(&bundle.h_u);

    let svd = stacked.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > PINV_REL_TOL * smax.max(f64::MIN_POSITIVE))
        .count();
    if rank < stacked_rows {
        return Err(Error::RankDeficient(format!(
            "stacked (x0,input) Hankel block: rank {rank} < {stacked_rows} \
             (non-PE data or pathological noise sample)"
        )));
    }
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    // pinv = V Σ⁻¹ Uᵀ, full row rank so Σ has stacked_rows nonzero values.
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for i in 0..stacked_rows {
        sinv[(i, i)] = 1.0 / svd.singular_values[i];
    }
    let pinv = vt.transpose() * sinv * u.transpose();
    Ok(clean * pinv)
}

/// `M·(x_meas − eps0; U)`: predicted state trajectory stacked over `L+1`
/// steps (the first block reproduces the denoised current state).
pub fn predict_trajectory(
    sample: &PredictionSample,
    x_meas: &DVector<f64>,
    u_seq: &DVector<f64>,
) -> DVector<f64> {
    let n = sample.eps0.len();
    assert_eq!(x_meas.len(), n, "predict_trajectory: state dimension");
    assert_eq!(
        n + u_seq.len(),
        sample.m_mat.ncols(),
        "predict_trajectory: input dimension"
    );
    let mut z = DVector::zeros(sample.m_mat.ncols());
    z.rows_mut(0, n).copy_from(&(x_meas - &sample.eps0));
    z.rows_mut(n, u_seq.len()).copy_from(u_seq);
    &sample.m_mat * z
}
