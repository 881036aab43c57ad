//! Ground-truth LTI plant for data collection and closed-loop
//! evaluation.
//!
//! This module is the knowledge boundary: its `A`/`B` matrices are never
//! handed to controller-side code except inside test oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::hankel::{check_pe, TrajectoryData, PE_RANK_TOL};
use crate::noise::NoiseModel;

/// Maximum fresh input draws before giving up on persistency of
/// excitation.
const MAX_PE_RETRIES: usize = 20;

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub noise: NoiseModel,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, noise: NoiseModel) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::input("plant: A must be square and B row-conformant"));
        }
        if noise.dim() != n {
            return Err(Error::Dimension {
                context: "plant noise",
                expected: n,
                got: noise.dim(),
            });
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::input("plant: matrices must be finite"));
        }
        Ok(Self { a, b, noise })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// One step of `x⁺ = Ax + Bu` with a noisy measurement of `x⁺`.
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut impl Rng,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let x_next = &self.a * x + &self.b * u;
        let meas = &x_next + self.noise.sample(rng)?;
        Ok((x_next, meas))
    }

    /// Noise-free rollout: returns `inputs.len() + 1` states starting at
    /// `x0`.
    pub fn rollout_exact(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut xs = Vec::with_capacity(inputs.len() + 1);
        xs.push(x0.clone());
        for u in inputs {
            let next = &self.a * xs.last().unwrap() + &self.b * u;
            xs.push(next);
        }
        xs
    }
}

/// The §-style two-state benchmark plant.
pub fn paper_plant(noise_bound: f64, std_factor: f64) -> Result<PlantModel> {
    PlantModel::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.013, -0.080, 0.996]),
        DMatrix::from_row_slice(2, 1, &[4.798, 0.064]),
        NoiseModel::box_model(2, noise_bound, std_factor)?,
    )
}

/// Open-loop data collection: uniform random inputs over the input set,
/// retried (fresh draw, max 20) until the input sequence is persistently
/// exciting of order `n + L + 1`. Returns the noisy trajectory and the
/// retry count. Measurements carry noise at every step including `k = 0`.
pub fn collect_data(
    plant: &PlantModel,
    n_steps: usize,
    input_set: &Polytope,
    horizon: usize,
    x0: &DVector<f64>,
    rng: &mut impl Rng,
) -> Result<(TrajectoryData, usize)> {
    let n = plant.n();
    let m = plant.m();
    if input_set.dim() != m {
        return Err(Error::Dimension {
            context: "collect_data input set",
            expected: m,
            got: input_set.dim(),
        });
    }
    let pe_order = n + horizon + 1;
    if n_steps < pe_order {
        return Err(Error::input(format!(
            "collect_data: N={n_steps} below the PE order n+L+1={pe_order}"
        )));
    }
    // Interval hull of the input set for uniform proposal draws.
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        hi[j] = input_set.support(&e)?;
        e[j] = -1.0;
        lo[j] = -input_set.support(&e)?;
        if !hi[j].is_finite() || !lo[j].is_finite() {
            return Err(Error::input("collect_data: input set must be bounded"));
        }
    }

    for retry in 0..MAX_PE_RETRIES {
        let mut inputs = Vec::with_capacity(n_steps);
        while inputs.len() < n_steps {
            let cand = DVector::from_fn(m, |j, _| rng.gen_range(lo[j]..=hi[j]));
            if input_set.contains(&cand) {
                inputs.push(cand);
            }
        }
        if !check_pe(&inputs, pe_order, PE_RANK_TOL)? {
            continue;
        }
        let mut states = Vec::with_capacity(n_steps);
        let mut x = x0.clone();
        states.push(&x + plant.noise.sample(rng)?);
        for u in inputs.iter().take(n_steps - 1) {
            let (next, meas) = plant.step(&x, u, rng)?;
            x = next;
            states.push(meas);
        }
        let data = TrajectoryData::new(inputs, states)?;
        return Ok((data, retry));
    }
    Err(Error::input(format!(
        "collect_data: inputs not persistently exciting of order {pe_order} \
         after {MAX_PE_RETRIES} draws; increase N"
    )))
}
