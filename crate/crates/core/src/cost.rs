//! Sample-average approximation of the expected quadratic cost.
//!
//! The finite-horizon cost over the random prediction matrix reduces to
//! a deterministic quadratic `(x̂;U)ᵀS(x̂;U) + γᵀ(x̂;U) + c` whose
//! parameters are expectations over the noise distribution; they are
//! estimated here by averaging over independently drawn noise samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hankel::HankelBundle;
use crate::noise::NoiseModel;
use crate::scenario::draw_ensemble_counted;

/// Stage, terminal, and input weights for the horizon-`L` cost.
#[derive(Debug, Clone)]
pub struct CostWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p: DMatrix<f64>,
    horizon: usize,
}

fn check_pd(mat: &DMatrix<f64>, name: &str) -> Result<()> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::input(format!("{name} must be square")));
    }
    if (mat - mat.transpose()).amax() > 1e-12 * (1.0 + mat.amax()) {
        return Err(Error::input(format!("{name} must be symmetric")));
    }
    let eig = mat.clone().symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::input(format!("{name} must be positive definite")));
    }
    Ok(())
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, p: DMatrix<f64>, horizon: usize) -> Result<Self> {
        check_pd(&q, "Q")?;
        check_pd(&r, "R")?;
        check_pd(&p, "P")?;
        if p.nrows() != q.nrows() {
            return Err(Error::Dimension {
                context: "CostWeights P",
                expected: q.nrows(),
                got: p.nrows(),
            });
        }
        if horizon == 0 {
            return Err(Error::input("CostWeights: horizon must be at least 1"));
        }
        Ok(Self { q, r, p, horizon })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `Q̃ = diag(Q, …, Q, P)` over the stacked states `x_0..x_L`.
    pub fn q_tilde(&self) -> DMatrix<f64> {
        let n = self.q.nrows();
        let l = self.horizon;
        let mut qt = DMatrix::zeros(n * (l + 1), n * (l + 1));
        for b in 0..l {
            qt.view_mut((b * n, b * n), (n, n)).copy_from(&self.q);
        }
        qt.view_mut((l * n, l * n), (n, n)).copy_from(&self.p);
        qt
    }

    /// `R̃ = diag(0_n, R, …, R, 0_m)` over the decision `(x̂, u_0..u_L)`.
    pub fn r_tilde(&self, n: usize, m: usize) -> DMatrix<f64> {
        let l = self.horizon;
        let dim = n + (l + 1) * m;
        let mut rt = DMatrix::zeros(dim, dim);
        for b in 0..l {
            rt.view_mut((n + b * m, n + b * m), (m, m)).copy_from(&self.r);
        }
        rt
    }

    /// One step's contribution `eᵀQe + uᵀRu` (used by the closed-loop
    /// trajectory cost).
    pub fn stage_cost(&self, e: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (e.transpose() * &self.q * e)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }
}

/// The quadratic cost data over the stacked decision vector `(x̂, U)`,
/// together with the averaged cross moments needed to re-center the cost
/// on a reference state.
#[derive(Debug, Clone)]
pub struct CostForm {
    pub s: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub c: f64,
    pub saa_count: usize,
    pub redraws: usize,
    /// `E[MᵀQ̃]`, for shifting γ to a reference.
    e_mtq: DMatrix<f64>,
    /// `E[wᵀMᵀQ̃]` with `w = (ε̃; 0)`, for shifting c to a reference.
    e_wmtq: DVector<f64>,
    q_tilde: DMatrix<f64>,
    n: usize,
    m: usize,
    horizon: usize,
}

impl CostForm {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Re-center the state cost on a constant reference `x_ref`: with
    /// `Xr` the stacked reference, expanding
    /// `E[(M(z−w) − Xr)ᵀQ̃(M(z−w) − Xr)]` adds `−2E[MᵀQ̃]Xr` to γ and
    /// `2E[wᵀMᵀQ̃]Xr + XrᵀQ̃Xr` to c; S is unchanged.
    pub fn with_reference(&self, x_ref: &DVector<f64>) -> Result<CostForm> {
        if x_ref.len() != self.n {
            return Err(Error::Dimension {
                context: "with_reference x_ref",
                expected: self.n,
                got: x_ref.len(),
            });
        }
        let reps = self.horizon + 1;
        let mut xr = DVector::zeros(self.n * reps);
        for b in 0..reps {
            xr.rows_mut(b * self.n, self.n).copy_from(x_ref);
        }
        let mut out = self.clone();
        out.gamma = &self.gamma - 2.0 * (&self.e_mtq * &xr);
        out.c = self.c
            + 2.0 * self.e_wmtq.dot(&xr)
            + (xr.transpose() * &self.q_tilde * &xr)[(0, 0)];
        Ok(out)
    }

    pub fn e_mtq(&self) -> &DMatrix<f64> {
        &self.e_mtq
    }

    pub fn e_wmtq(&self) -> &DVector<f64> {
        &self.e_wmtq
    }

    pub fn q_tilde_ref(&self) -> &DMatrix<f64> {
        &self.q_tilde
    }

    /// Reassemble a form from stored parts (artifact deserialization).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        s: DMatrix<f64>,
        gamma: DVector<f64>,
        c: f64,
        saa_count: usize,
        redraws: usize,
        e_mtq: DMatrix<f64>,
        e_wmtq: DVector<f64>,
        q_tilde: DMatrix<f64>,
        n: usize,
        m: usize,
        horizon: usize,
    ) -> Result<CostForm> {
        let dec_dim = n + (horizon + 1) * m;
        let lifted = (horizon + 1) * n;
        if s.nrows() != dec_dim
            || s.ncols() != dec_dim
            || gamma.len() != dec_dim
            || e_mtq.nrows() != dec_dim
            || e_mtq.ncols() != lifted
            || e_wmtq.len() != lifted
            || q_tilde.nrows() != lifted
            || q_tilde.ncols() != lifted
        {
            return Err(Error::input("CostForm::from_parts: inconsistent dimensions"));
        }
        Ok(CostForm {
            s,
            gamma,
            c,
            saa_count,
            redraws,
            e_mtq,
            e_wmtq,
            q_tilde,
            n,
            m,
            horizon,
        })
    }
}

/// Estimate `S = E[MᵀQ̃M] + R̃`, `γ = −2E[MᵀQ̃Mw]`, `c = E[wᵀMᵀQ̃Mw]`
/// with `w = (ε̃; 0)` by averaging over `saa_count` independently drawn
/// noise samples. Samples whose prediction matrix is rank deficient are
/// redrawn (at most 50% of the budget).
pub fn estimate_cost_form(
    bundle: &HankelBundle,
    model: &NoiseModel,
    weights: &CostWeights,
    saa_count: usize,
    rng: &mut impl Rng,
) -> Result<CostForm> {
    if saa_count == 0 {
        return Err(Error::input("estimate_cost_form: saa_count must be ≥ 1"));
    }
    if weights.horizon() != bundle.horizon() {
        return Err(Error::Dimension {
            context: "estimate_cost_form horizon",
            expected: bundle.horizon(),
            got: weights.horizon(),
        });
    }
    if weights.q.nrows() != bundle.n || weights.r.nrows() != bundle.m {
        return Err(Error::input("estimate_cost_form: weight dims do not match data"));
    }
    let (n, m, l) = (bundle.n, bundle.m, bundle.horizon());
    let dim = n + (l + 1) * m;
    let qt = weights.q_tilde();
    let (ensemble, redraws) = draw_ensemble_counted(bundle, model, saa_count, rng)?;

    // Per-sample terms, then a pairwise tree sum for reproducibility.
    let mut s_terms: Vec<DMatrix<f64>> = Vec::with_capacity(saa_count);
    let mut g_terms: Vec<DVector<f64>> = Vec::with_capacity(saa_count);
    let mut c_terms: Vec<f64> = Vec::with_capacity(saa_count);
    let mut mtq_terms: Vec<DMatrix<f64>> = Vec::with_capacity(saa_count);
    let mut wmtq_terms: Vec<DVector<f64>> = Vec::with_capacity(saa_count);
    for sample in &ensemble {
        let mtq = sample.m_mat.transpose() * &qt;
        let mtqm = &mtq * &sample.m_mat;
        let mut w = DVector::zeros(dim);
        w.rows_mut(0, n).copy_from(&sample.eps0);
        let mtqmw = &mtqm * &w;
        c_terms.push(w.dot(&mtqmw));
        g_terms.push(-2.0 * mtqmw);
        wmtq_terms.push(mtq.transpose() * &w);
        mtq_terms.push(mtq);
        s_terms.push(mtqm);
    }
    let count = saa_count as f64;
    let s_sum = pairwise_mat(&mut s_terms);
    let g_sum = pairwise_vec(&mut g_terms);
    let c_sum = pairwise_f64(&mut c_terms);
    let mtq_sum = pairwise_mat(&mut mtq_terms);
    let wmtq_sum = pairwise_vec(&mut wmtq_terms);

    let mut s = s_sum / count + weights.r_tilde(n, m);
    s = (&s + s.transpose()) * 0.5;
    Ok(CostForm {
        s,
        gamma: g_sum / count,
        c: c_sum / count,
        saa_count,
        redraws,
        e_mtq: mtq_sum / count,
        e_wmtq: wmtq_sum / count,
        q_tilde: qt,
        n,
        m,
        horizon: l,
    })
}

fn pairwise_mat(items: &mut Vec<DMatrix<f64>>) -> DMatrix<f64> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len() / 2 + 1);
        let mut i = 0;
        while i + 1 < items.len() {
            next.push(&items[i] + &items[i + 1]);
            i += 2;
        }
        if i < items.len() {
            next.push(items[i].clone());
        }
        *items = next;
    }
    items.pop().unwrap()
}

fn pairwise_vec(items: &mut Vec<DVector<f64>>) -> DVector<f64> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len() / 2 + 1);
        let mut i = 0;
        while i + 1 < items.len() {
            next.push(&items[i] + &items[i + 1]);
            i += 2;
        }
        if i < items.len() {
            next.push(items[i].clone());
        }
        *items = next;
    }
    items.pop().unwrap()
}

fn pairwise_f64(items: &mut Vec<f64>) -> f64 {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len() / 2 + 1);
        let mut i = 0;
        while i + 1 < items.len() {
            next.push(items[i] + items[i + 1]);
            i += 2;
        }
        if i < items.len() {
            next.push(items[i]);
        }
        *items = next;
    }
    items.pop().unwrap()
}

/// `(x̂;U)ᵀS(x̂;U) + γᵀ(x̂;U) + c`.
pub fn evaluate_cost(form: &CostForm, x_meas: &DVector<f64>, u_seq: &DVector<f64>) -> Result<f64> {
    let dim = form.n + (form.horizon + 1) * form.m;
    if x_meas.len() != form.n || u_seq.len() != (form.horizon + 1) * form.m {
        return Err(Error::Dimension {
            context: "evaluate_cost decision",
            expected: dim,
            got: x_meas.len() + u_seq.len(),
        });
    }
    let mut z = DVector::zeros(dim);
    z.rows_mut(0, form.n).copy_from(x_meas);
    z.rows_mut(form.n, u_seq.len()).copy_from(u_seq);
    Ok((z.transpose() * &form.s * &z)[(0, 0)] + form.gamma.dot(&z) + form.c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::TrajectoryData;
    use crate::rng::stream;
    use rand::Rng;

    fn paper_ab() -> (DMatrix<f64>, DMatrix<f64>) {
        (
            DMatrix::from_row_slice(2, 2, &[1.0, 0.013, -0.080, 0.996]),
            DMatrix::from_row_slice(2, 1, &[4.798, 0.064]),
        )
    }

    fn clean_bundle(horizon: usize) -> HankelBundle {
        let (a, b) = paper_ab();
        let mut rng = stream(70, 0);
        let inputs: Vec<DVector<f64>> = (0..30)
            .map(|_| DVector::from_element(1, rng.gen_range(-0.2..0.2)))
            .collect();
        let mut states = vec![DVector::zeros(2)];
        for u in &inputs {
            let next = &a * states.last().unwrap() + &b * u;
            states.push(next);
        }
        states.truncate(30);
        let data = TrajectoryData::new(inputs, states).unwrap();
        HankelBundle::new(&data, horizon).unwrap()
    }

    fn weights(l: usize) -> CostWeights {
        CostWeights::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 10.0])),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 10.0])),
            l,
        )
        .unwrap()
    }

    fn rollout_cost(
        w: &CostWeights,
        x0: &DVector<f64>,
        u: &[DVector<f64>],
        x_ref: &DVector<f64>,
    ) -> f64 {
        let (a, b) = paper_ab();
        let l = w.horizon();
        let mut x = x0.clone();
        let mut total = 0.0;
        for step in u.iter().take(l) {
            let e = &x - x_ref;
            total += w.stage_cost(&e, step);
            x = &a * &x + &b * step;
        }
        let e = &x - x_ref;
        total += (e.transpose() * w.p() * &e)[(0, 0)];
        total
    }

    #[test]
    fn weights_reject_indefinite() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]);
        assert!(CostWeights::new(
            bad,
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            3
        )
        .is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostWeights::new(
            asym,
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            3
        )
        .is_err());
    }

    #[test]
    fn zero_noise_matches_rollout_oracle() {
        let l = 6;
        let bundle = clean_bundle(l);
        let w = weights(l);
        let model = NoiseModel::box_model(2, 0.0, 1.0 / 3.0).unwrap();
        let form = estimate_cost_form(&bundle, &model, &w, 1, &mut stream(71, 0)).unwrap();
        assert!(form.gamma.amax() < 1e-9);
        assert!(form.c.abs() < 1e-12);
        let mut rng = stream(71, 1);
        for _ in 0..100 {
            let x0 = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let u: Vec<DVector<f64>> = (0..=l)
                .map(|_| DVector::from_fn(1, |_, _| rng.gen_range(-0.2..0.2)))
                .collect();
            let u_stacked = DVector::from_iterator(l + 1, u.iter().map(|v| v[0]));
            let expect = rollout_cost(&w, &x0, &u, &DVector::zeros(2));
            let got = evaluate_cost(&form, &x0, &u_stacked).unwrap();
            assert!(
                (got - expect).abs() <= 1e-8 * (1.0 + expect.abs()),
                "got {got}, expect {expect}"
            );
        }
    }

    #[test]
    fn zero_noise_reference_matches_rollout_oracle() {
        let l = 6;
        let bundle = clean_bundle(l);
        let w = weights(l);
        let model = NoiseModel::box_model(2, 0.0, 1.0 / 3.0).unwrap();
        let form = estimate_cost_form(&bundle, &model, &w, 1, &mut stream(72, 0)).unwrap();
        let x_ref = DVector::from_column_slice(&[0.0, 2.8]);
        let tracked = form.with_reference(&x_ref).unwrap();
        let mut rng = stream(72, 1);
        for _ in 0..50 {
            let x0 = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let u: Vec<DVector<f64>> = (0..=l)
                .map(|_| DVector::from_fn(1, |_, _| rng.gen_range(-0.2..0.2)))
                .collect();
            let u_stacked = DVector::from_iterator(l + 1, u.iter().map(|v| v[0]));
            let expect = rollout_cost(&w, &x0, &u, &x_ref);
            let got = evaluate_cost(&tracked, &x0, &u_stacked).unwrap();
            assert!(
                (got - expect).abs() <= 1e-8 * (1.0 + expect.abs()),
                "got {got}, expect {expect}"
            );
        }
    }

    #[test]
    fn constant_term_is_nonnegative() {
        let l = 6;
        let bundle = clean_bundle(l);
        let w = weights(l);
        let model = NoiseModel::box_model(2, 0.01, 1.0 / 3.0).unwrap();
        let form = estimate_cost_form(&bundle, &model, &w, 200, &mut stream(73, 0)).unwrap();
        assert!(form.c >= 0.0);
    }

    #[test]
    fn saa_estimates_agree_within_pooled_error() {
        let l = 6;
        let bundle = clean_bundle(l);
        let w = weights(l);
        let model = NoiseModel::box_model(2, 0.002, 1.0 / 3.0).unwrap();
        let subs: Vec<CostForm> = (0..10)
            .map(|i| estimate_cost_form(&bundle, &model, &w, 300, &mut stream(74, i)).unwrap())
            .collect();
        let dim = subs[0].s.nrows();
        let mean = subs.iter().fold(DMatrix::zeros(dim, dim), |acc, f| acc + &f.s) / 10.0;
        let var = subs
            .iter()
            .fold(DMatrix::zeros(dim, dim), |acc, f| {
                acc + (&f.s - &mean).map(|v| v * v)
            })
            / 9.0;
        let a = (&subs[0].s + &subs[1].s + &subs[2].s + &subs[3].s + &subs[4].s) / 5.0;
        let b = (&subs[5].s + &subs[6].s + &subs[7].s + &subs[8].s + &subs[9].s) / 5.0;
        for i in 0..dim {
            for j in 0..dim {
                let se = (var[(i, j)] * 2.0 / 5.0).sqrt();
                assert!(
                    (a[(i, j)] - b[(i, j)]).abs() <= 5.0 * se + 1e-12,
                    "entry ({i},{j}) disagrees beyond pooled error"
                );
            }
        }
    }

    #[test]
    fn reduced_hessian_is_positive_definite() {
        let l = 6;
        let bundle = clean_bundle(l);
        let w = weights(l);
        let model = NoiseModel::box_model(2, 0.002, 1.0 / 3.0).unwrap();
        let form = estimate_cost_form(&bundle, &model, &w, 200, &mut stream(75, 0)).unwrap();
        // Pin u_L = 0 and restrict to the input block: the reduced
        // Hessian over u_0..u_{L-1} must be strictly positive definite.
        let reduced = form.s.view((2, 2), (l, l)).into_owned();
        let eig = reduced.symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn mismatched_horizon_rejected() {
        let bundle = clean_bundle(6);
        let w = weights(5);
        let model = NoiseModel::box_model(2, 0.0, 1.0 / 3.0).unwrap();
        assert!(estimate_cost_form(&bundle, &model, &w, 1, &mut stream(76, 0)).is_err());
    }
}
