//! A-optimal objective and its derivatives from a frozen QR factorization.
//!
//! With `L_w = R diag(w~) R^T + I` (where `w~` repeats `w` over the `m_obs`
//! blocks) the objective is `tr C0 - tr C^ + tr(L_w^{-1} C^)`. All kernels
//! below cost `O(l^2 m m_obs + l^3)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Execution;
use crate::lowrank::QRModel;
use crate::model::noise::DiagonalNoise;
use crate::model::prior::PriorModel;

/// Default size limit for the assembled `m x m` Hessian.
pub const DENSE_HESSIAN_LIMIT: usize = 1000;
/// Default size limit for pointwise variance fields.
pub const VARIANCE_LIMIT: usize = 5000;

/// Frozen, design-independent data that determine `J` and its derivatives.
#[derive(Clone, Debug)]
pub struct LowRankObjective {
    r: DMatrix<f64>,
    chat: DMatrix<f64>,
    chat_half: DMatrix<f64>,
    trace_c0: f64,
    trace_chat: f64,
    m: usize,
    m_obs: usize,
}

/// Sensor weights with the budget they were produced for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub w: Vec<f64>,
    pub m0: usize,
}

impl Design {
    pub fn new(w: Vec<f64>, m0: usize) -> Self {
        Self { w, m0 }
    }

    /// Membership in `{0 <= w <= 1, sum w <= m0}` up to `tol`.
    pub fn check_feasible(&self, tol: f64) -> Result<()> {
        check_feasible(&self.w, self.m0, tol)
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Indices with weight at least one half, used for binary designs.
    pub fn support(&self) -> Vec<usize> {
        self.w.iter().enumerate().filter(|(_, &v)| v >= 0.5).map(|(k, _)| k).collect()
    }
}

pub(crate) fn check_feasible(w: &[f64], m0: usize, tol: f64) -> Result<()> {
    if let Some(k) = w.iter().position(|v| !v.is_finite() || *v < -tol || *v > 1.0 + tol) {
        return Err(Error::InfeasibleDesign(format!("weight {k} = {} outside [0, 1]", w[k])));
    }
    let s: f64 = w.iter().sum();
    if s > m0 as f64 + tol {
        return Err(Error::InfeasibleDesign(format!("sum of weights {s} exceeds budget m0 = {m0}")));
    }
    Ok(())
}

/// Which Lipschitz constant feeds the a-priori classification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzVariant {
    /// `2 m_obs l^2 |C^| |RR^T|^2`: the factor two from the Hessian and one
    /// `m_obs` from summing the observation blocks.
    #[default]
    Conservative,
    /// `l^2 |C^| |RR^T|^2`, with neither factor.
    Literal,
}

/// `(L0, L1, L2)` for the a-priori classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub l: f64,
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
}

impl LowRankObjective {
    /// Forms `C^ = Q^T M^{1/2} C0 M^{-1/2} Q` by `l` prior applications.
    pub fn assemble(qr: &QRModel, prior: &PriorModel, exec: Execution) -> Result<Self> {
        check_dim("QR rows vs prior dimension", prior.dim(), qr.n())?;
        let l = qr.rank();
        let cols = exec.map(l, |j| prior.whitened_cov_apply(qr.q.column(j).as_slice()));
        let gq = DMatrix::from_fn(qr.n(), l, |i, j| cols[j][i]);
        let chat = qr.q.transpose() * gq;
        Self::from_parts(qr.r.clone(), chat, prior.trace_c0(), qr.m_obs)
    }

    /// Builds the objective from an explicit `C^`. The matrix is symmetrized and
    /// its square root taken spectrally, clipping round-off negativity.
    pub fn from_parts(r: DMatrix<f64>, chat: DMatrix<f64>, trace_c0: f64, m_obs: usize) -> Result<Self> {
        let l = r.nrows();
        check_dim("C^ rows", l, chat.nrows())?;
        check_dim("C^ columns", l, chat.ncols())?;
        if m_obs == 0 || r.ncols() % m_obs != 0 {
            return Err(Error::InvalidModel(format!(
                "R has {} columns, not a multiple of m_obs = {m_obs}",
                r.ncols()
            )));
        }
        let sym = (&chat + chat.transpose()) * 0.5;
        let (chat_half, trace_chat) = if l == 0 {
            (DMatrix::zeros(0, 0), 0.0)
        } else {
            let eig = SymmetricEigen::new(sym.clone());
            let norm = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let most_negative = eig.eigenvalues.min();
            if most_negative < -1e-6 * norm {
                return Err(Error::IndefinitePrior {
                    clipped: -most_negative,
                    norm,
                });
            }
            let half = DMatrix::from_fn(l, l, |i, j| eig.eigenvalues[i].max(0.0).sqrt() * eig.eigenvectors[(j, i)]);
            (half, sym.trace())
        };
        Ok(Self {
            m: r.ncols() / m_obs,
            r,
            chat: sym,
            chat_half,
            trace_c0,
            trace_chat,
            m_obs,
        })
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn chat(&self) -> &DMatrix<f64> {
        &self.chat
    }

    /// `S` with `C^ = S^T S`.
    pub fn chat_half(&self) -> &DMatrix<f64> {
        &self.chat_half
    }

    pub fn trace_c0(&self) -> f64 {
        self.trace_c0
    }

    pub fn trace_chat(&self) -> f64 {
        self.trace_chat
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn m_obs(&self) -> usize {
        self.m_obs
    }

    pub fn rank(&self) -> usize {
        self.r.nrows()
    }

    /// Repeats a per-sensor vector over the observation blocks.
    pub fn expand(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.m, "design length");
        (0..self.m * self.m_obs).map(|i| w[i % self.m]).collect()
    }

    /// Sums each `m`-th entry across the observation blocks.
    pub fn collapse(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (i, v) in g.iter().enumerate() {
            out[i % self.m] += v;
        }
        out
    }

    /// Factors `L_w` for repeated evaluations at one design.
    pub fn workspace(&self, w: &[f64]) -> Workspace<'_> {
        Workspace::new(self, w)
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        self.workspace(w).objective()
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.workspace(w).gradient()
    }

    pub fn hessian_matvec(&self, w: &[f64], v: &[f64]) -> Vec<f64> {
        self.workspace(w).hessian_matvec(v)
    }

    pub fn hessian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        self.workspace(w).hessian(DENSE_HESSIAN_LIMIT)
    }

    /// Spectral norms `(|C^|, |R R^T|)`.
    pub fn norms(&self) -> (f64, f64) {
        if self.rank() == 0 {
            return (0.0, 0.0);
        }
        let spectral = |a: DMatrix<f64>| SymmetricEigen::new(a).eigenvalues.iter().fold(0.0f64, |x, v| x.max(v.abs()));
        (spectral(self.chat.clone()), spectral(&self.r * self.r.transpose()))
    }

    /// `|H| <= 2 m_obs |C^| |RR^T|^2`. The collapse `S^T X S` has `|S|^2 = m_obs`,
    /// so without that factor the bound only holds for a single observation.
    pub fn hessian_norm_bound(&self) -> f64 {
        let (c, rr) = self.norms();
        2.0 * self.m_obs as f64 * c * rr * rr
    }

    pub fn lipschitz_constants(&self, m0: usize, variant: LipschitzVariant) -> Result<LipschitzConstants> {
        if m0 > self.m {
            return Err(Error::InvalidArgument(format!("m0 = {m0} exceeds m = {}", self.m)));
        }
        let (c, rr) = self.norms();
        let l2 = (self.rank() * self.rank()) as f64;
        let factor = match variant {
            LipschitzVariant::Conservative => 2.0 * self.m_obs as f64,
            LipschitzVariant::Literal => 1.0,
        };
        let l = factor * l2 * c * rr * rr;
        Ok(LipschitzConstants {
            l,
            l0: (m0 as f64).sqrt() * l,
            l1: ((self.m - m0) as f64).sqrt() * l,
            l2: ((2 * m0) as f64).sqrt() * l,
        })
    }
}

/// Per-design state: the Cholesky factor of `L_w` and, once a Hessian product
/// has been taken, the cached `L_w^{-1} R`.
pub struct Workspace<'a> {
    obj: &'a LowRankObjective,
    w_expanded: Vec<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    l_inv_r: Option<DMatrix<f64>>,
}

impl<'a> Workspace<'a> {
    pub fn new(obj: &'a LowRankObjective, w: &[f64]) -> Self {
        let w_expanded = obj.expand(w);
        let chol = if obj.rank() == 0 {
            None
        } else {
            let mut rw = obj.r.clone();
            for (j, mut col) in rw.column_iter_mut().enumerate() {
                col *= w_expanded[j];
            }
            let mut l = rw * obj.r.transpose();
            for i in 0..obj.rank() {
                l[(i, i)] += 1.0;
            }
            // symmetrize against round-off before factoring
            let l = (&l + l.transpose()) * 0.5;
            Some(Cholesky::new(l).expect("L_w = R W R^T + I is positive definite for w >= 0"))
        };
        Self {
            obj,
            w_expanded,
            chol,
            l_inv_r: None,
        }
    }

    /// The factored `L_w`, reassembled (for diagnostics).
    pub fn l_matrix(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => {
                let f = c.l();
                &f * f.transpose()
            }
            None => DMatrix::zeros(0, 0),
        }
    }

    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.solve(b),
            None => b.clone(),
        }
    }

    fn ensure_l_inv_r(&mut self) -> &DMatrix<f64> {
        if self.l_inv_r.is_none() {
            self.l_inv_r = Some(self.solve(&self.obj.r));
        }
        self.l_inv_r.as_ref().expect("just set")
    }

    pub fn has_cached_product(&self) -> bool {
        self.l_inv_r.is_some()
    }

    pub fn objective(&self) -> f64 {
        let o = self.obj;
        if o.rank() == 0 {
            return o.trace_c0;
        }
        // tr(L^{-1} S^T S) = tr(S X) with X = L^{-1} S^T
        let x = self.solve(&o.chat_half.transpose());
        let tr = (&o.chat_half * x).trace();
        o.trace_c0 - o.trace_chat + tr
    }

    /// Squared column norms of `S L^{-1} R`, negated, one per output channel.
    fn channel_gradient(&self) -> Vec<f64> {
        let o = self.obj;
        if o.rank() == 0 {
            return vec![0.0; o.m * o.m_obs];
        }
        let g = match &self.l_inv_r {
            Some(a) => &o.chat_half * a,
            None => self.solve(&o.chat_half.transpose()).transpose() * &o.r,
        };
        g.column_iter().map(|c| -c.norm_squared()).collect()
    }

    /// Gradient with respect to the `m` sensor weights. Reuses `L^{-1} R` when
    /// a Hessian product has already been computed at this design.
    pub fn gradient(&self) -> Vec<f64> {
        self.obj.collapse(&self.channel_gradient())
    }

    /// Per-observation contributions (`m x m_obs`), summing to the gradient.
    pub fn gradient_blocks(&self) -> DMatrix<f64> {
        let g = self.channel_gradient();
        DMatrix::from_vec(self.obj.m, self.obj.m_obs, g)
    }

    /// `H v` without forming `H`:
    /// `2 collapse(sum_rows[(C^ A diag(v~) R^T)^T A] . A)` with `A = L^{-1} R`.
    pub fn hessian_matvec(&mut self, v: &[f64]) -> Vec<f64> {
        let o = self.obj;
        assert_eq!(v.len(), o.m, "direction length");
        if o.rank() == 0 {
            return vec![0.0; o.m];
        }
        let ve = o.expand(v);
        let a = self.ensure_l_inv_r().clone();
        let mut av = a.clone();
        for (j, mut col) in av.column_iter_mut().enumerate() {
            col *= ve[j];
        }
        let y = av * o.r.transpose();
        let w = &o.chat * y;
        let b = w.transpose() * &a;
        let rows: Vec<f64> = b
            .column_iter()
            .zip(a.column_iter())
            .map(|(bc, ac)| 2.0 * bc.dot(&ac))
            .collect();
        o.collapse(&rows)
    }

    /// Assembled `m x m` Hessian, refused above `limit` sensors.
    pub fn hessian(&mut self, limit: usize) -> Result<DMatrix<f64>> {
        let o = self.obj;
        if o.m > limit {
            return Err(Error::LimitExceeded {
                what: "dense Hessian (use hessian_matvec)",
                size: o.m,
                limit,
            });
        }
        if o.rank() == 0 {
            return Ok(DMatrix::zeros(o.m, o.m));
        }
        let a = self.ensure_l_inv_r().clone();
        let big1 = a.transpose() * (&o.chat * &a);
        let big2 = o.r.transpose() * &a;
        let mut h = DMatrix::zeros(o.m, o.m);
        for j in 0..big1.ncols() {
            for i in 0..big1.nrows() {
                h[(i % o.m, j % o.m)] += 2.0 * big1[(i, j)] * big2[(i, j)];
            }
        }
        Ok(h)
    }

    /// Eigenvalues of `L_w^{-1}`.
    pub fn l_inverse_eigenvalues(&self) -> Vec<f64> {
        let l = self.l_matrix();
        if l.nrows() == 0 {
            return Vec::new();
        }
        SymmetricEigen::new(l).eigenvalues.iter().map(|v| 1.0 / v).collect()
    }

    /// Posterior mean for data `g` (already masked by the caller) and prior
    /// mean `m0`: `T [Q L^{-1} R W Gamma^{-1/2} g + (I - QQ^T + Q L^{-1} Q^T) T^{-1} m0]`
    /// with `T = C0^{1/2} M^{-1/2}`.
    pub fn posterior_mean(
        &self,
        qr: &QRModel,
        prior: &PriorModel,
        noise: &DiagonalNoise,
        g: &[f64],
        prior_mean: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let o = self.obj;
        check_dim("posterior data length", o.m * o.m_obs, g.len())?;
        check_dim("noise length", g.len(), noise.len())?;
        check_dim("QR rows vs prior dimension", prior.dim(), qr.n())?;
        let d: Vec<f64> = noise
            .whiten(g)
            .iter()
            .zip(&self.w_expanded)
            .map(|(a, w)| a * w)
            .collect();
        let rd = &o.r * DVector::from_vec(d);
        let mut u = &qr.q * self.solve(&DMatrix::from_column_slice(rd.len(), 1, rd.as_slice()));
        if let Some(mean) = prior_mean {
            check_dim("prior mean length", prior.dim(), mean.len())?;
            let u0 = DVector::from_vec(prior.whitened_sqrt_inverse(mean));
            let qtu0 = qr.q.transpose() * &u0;
            let l_inv = self.solve(&DMatrix::from_column_slice(qtu0.len(), 1, qtu0.as_slice()));
            let corr = &u0 - &qr.q * qtu0 + &qr.q * l_inv;
            u += corr;
        }
        Ok(prior.whitened_sqrt(u.as_slice()))
    }

    /// Diagonal of the posterior covariance (as a matrix acting on nodal
    /// coefficients): `var_i = |t_i|^2 - |Q^T t_i|^2 + (Q^T t_i)^T L^{-1} Q^T t_i`
    /// with `t_i = T^T e_i`. Weighted by the lumped mass it sums to `J(w)`.
    pub fn posterior_pointwise_variance(
        &self,
        qr: &QRModel,
        prior: &PriorModel,
        limit: usize,
        exec: Execution,
    ) -> Result<Vec<f64>> {
        let n = prior.dim();
        check_dim("QR rows vs prior dimension", n, qr.n())?;
        if n > limit {
            return Err(Error::LimitExceeded {
                what: "pointwise variance",
                size: n,
                limit,
            });
        }
        let t_cols = exec.map(n, |i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            prior.whitened_sqrt_transpose(&e)
        });
        let t = DMatrix::from_fn(n, n, |r, c| t_cols[c][r]);
        let qt = qr.q.transpose() * &t;
        let lq = self.solve(&qt);
        Ok((0..n)
            .map(|i| {
                let full = t.column(i).norm_squared();
                let proj = qt.column(i).norm_squared();
                full - proj + qt.column(i).dot(&lq.column(i))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::exact_qr;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_objective(l: usize, m: usize, m_obs: usize, seed: u64) -> LowRankObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = DMatrix::from_fn(l, m * m_obs, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(l, l, |_, _| rng.random::<f64>() - 0.5);
        let chat = &b * b.transpose() + DMatrix::identity(l, l) * 0.1;
        let tr = chat.trace() * 1.5;
        LowRankObjective::from_parts(r, chat, tr, m_obs).unwrap()
    }

    fn random_design(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..m).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn zero_design_gives_prior_trace() {
        let o = random_objective(5, 8, 2, 1);
        assert!((o.objective(&[0.0; 8]) - o.trace_c0()).abs() < 1e-12 * o.trace_c0());
    }

    #[test]
    fn identity_prior_gives_identity_chat() {
        let a = DMatrix::from_fn(6, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let qr = exact_qr(&a, 1).unwrap();
        let o = LowRankObjective::assemble(&qr, &PriorModel::identity(6), Execution::default()).unwrap();
        let l = qr.rank();
        assert!((o.chat() - DMatrix::<f64>::identity(l, l)).abs().max() < 1e-12);
        assert!((o.trace_chat() - l as f64).abs() < 1e-12);
    }

    #[test]
    fn zero_column_gives_zero_gradient() {
        let mut o = random_objective(4, 6, 3, 2);
        for b in 0..3 {
            o.r.column_mut(b * 6 + 2).fill(0.0);
        }
        let g = o.gradient(&[0.3; 6]);
        assert_eq!(g[2], 0.0);
        assert!(g.iter().enumerate().all(|(k, &v)| k == 2 || v < 0.0));
    }

    #[test]
    fn warm_and_cold_gradients_agree() {
        let o = random_objective(7, 10, 2, 3);
        let w = vec![0.4; 10];
        let cold = o.gradient(&w);
        let mut ws = o.workspace(&w);
        ws.hessian_matvec(&[1.0; 10]);
        assert!(ws.has_cached_product());
        let warm = ws.gradient();
        for (a, b) in cold.iter().zip(&warm) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn matvec_matches_assembled_hessian() {
        let o = random_objective(6, 12, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_design(12, &mut rng);
        let v = random_design(12, &mut rng);
        let mut ws = o.workspace(&w);
        let h = ws.hessian(100).unwrap();
        let hv = h * DVector::from_column_slice(&v);
        let mv = ws.hessian_matvec(&v);
        let scale = hv.norm();
        for (a, b) in hv.iter().zip(&mv) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
        assert!(ws.hessian_matvec(&[0.0; 12]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hessian_limit_is_enforced() {
        let o = random_objective(2, 5, 1, 1);
        assert!(matches!(o.workspace(&[0.0; 5]).hessian(4), Err(Error::LimitExceeded { .. })));
    }

    #[test]
    fn gradient_blocks_sum_to_gradient() {
        let o = random_objective(5, 7, 4, 6);
        let ws = o.workspace(&[0.2, 0.9, 0.1, 0.5, 0.0, 1.0, 0.3]);
        let blocks = ws.gradient_blocks();
        let g = ws.gradient();
        for k in 0..7 {
            let s: f64 = blocks.row(k).sum();
            assert!((s - g[k]).abs() <= 1e-12 * g[k].abs());
        }
    }

    #[test]
    fn lipschitz_constants_scale_linearly() {
        let o = random_objective(4, 9, 1, 7);
        let c = o.lipschitz_constants(3, LipschitzVariant::Conservative).unwrap();
        let scaled = LowRankObjective::from_parts(o.r().clone(), o.chat() * 3.0, o.trace_c0(), 1).unwrap();
        let c3 = scaled.lipschitz_constants(3, LipschitzVariant::Conservative).unwrap();
        assert!((c3.l0 - 3.0 * c.l0).abs() < 1e-10 * c3.l0);
        let lit = o.lipschitz_constants(3, LipschitzVariant::Literal).unwrap();
        assert!((2.0 * lit.l - c.l).abs() < 1e-12 * c.l);
        assert!((c.l2 - (6.0f64).sqrt() * c.l).abs() < 1e-12 * c.l2);
        let zero = LowRankObjective::from_parts(o.r().clone(), DMatrix::zeros(4, 4), 1.0, 1).unwrap();
        let z = zero.lipschitz_constants(3, LipschitzVariant::Conservative).unwrap();
        assert_eq!((z.l0, z.l1, z.l2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn norm_bound_needs_the_block_factor() {
        // one sensor, two orthogonal observations: |H(0)| = 4 = 2 m_obs |C^| |RR^T|^2
        let o = LowRankObjective::from_parts(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 3.0, 2).unwrap();
        let h = o.hessian(&[0.0]).unwrap();
        assert!((h[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((o.hessian_norm_bound() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_chat_is_rejected() {
        let chat = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        let r = LowRankObjective::from_parts(DMatrix::zeros(2, 3), chat, 2.0, 1);
        assert!(matches!(r, Err(Error::IndefinitePrior { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn monotone_under_componentwise_increase(seed in 0u64..10_000) {
            let o = random_objective(5, 8, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
            let v = random_design(8, &mut rng);
            let w: Vec<f64> = v.iter().map(|x| x + (1.0 - x) * rng.random::<f64>()).collect();
            prop_assert!(o.objective(&w) <= o.objective(&v) + 1e-12 * o.trace_c0());
        }

        #[test]
        fn l_inverse_spectrum_in_unit_interval(seed in 0u64..10_000) {
            let o = random_objective(6, 5, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_design(5, &mut rng);
            for ev in o.workspace(&w).l_inverse_eigenvalues() {
                prop_assert!(ev > 0.0 && ev <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn objective_bounded_below_by_floor(seed in 0u64..10_000) {
            let o = random_objective(4, 6, 1, seed);
            let floor = o.trace_c0() - o.trace_chat();
            prop_assert!(o.objective(&[1.0; 6]) >= floor);
        }

        #[test]
        fn hessian_matvec_is_symmetric(seed in 0u64..10_000) {
            let o = random_objective(5, 9, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_design(9, &mut rng);
            let u: Vec<f64> = (0..9).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..9).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut ws = o.workspace(&w);
            let hu = ws.hessian_matvec(&u);
            let hv = ws.hessian_matvec(&v);
            let a: f64 = hv.iter().zip(&u).map(|(x, y)| x * y).sum();
            let b: f64 = hu.iter().zip(&v).map(|(x, y)| x * y).sum();
            let scale = hu.iter().map(|x| x * x).sum::<f64>().sqrt() * v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }
}
