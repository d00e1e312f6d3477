//! Brute-force references. Nothing here calls into the low-rank kernels: the
//! dense formulas work on explicit `n x n` matrices built from the raw forward
//! map, stiffness, mass and noise.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// Largest parameter dimension accepted by the dense formulas.
pub const DENSE_LIMIT: usize = 500;
/// Largest number of binary designs enumerated.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// Explicit inverse problem: raw forward `F` (`m*m_obs x n`), noise standard
/// deviations, stiffness `K` and lumped mass `M`, with `C0 = K^{-1} M K^{-1} M`.
#[derive(Clone, Debug)]
pub struct DenseInstance {
    pub forward: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub stiffness: DMatrix<f64>,
    pub mass: Vec<f64>,
    pub m_obs: usize,
}

impl DenseInstance {
    pub fn new(forward: DMatrix<f64>, sigma: Vec<f64>, stiffness: DMatrix<f64>, mass: Vec<f64>, m_obs: usize) -> Result<Self> {
        let n = stiffness.nrows();
        if forward.ncols() != n || mass.len() != n || sigma.len() != forward.nrows() || stiffness.ncols() != n {
            return Err(Error::InvalidModel("dense instance dimensions disagree".into()));
        }
        if m_obs == 0 || forward.nrows() % m_obs != 0 {
            return Err(Error::InvalidModel("forward rows are not a multiple of m_obs".into()));
        }
        if n > DENSE_LIMIT {
            return Err(Error::LimitExceeded {
                what: "dense oracle dimension",
                size: n,
                limit: DENSE_LIMIT,
            });
        }
        Ok(Self {
            forward,
            sigma,
            stiffness,
            mass,
            m_obs,
        })
    }

    /// Random well-conditioned instance: `K = B B^T / n + I`, mass in
    /// `[0.5, 1.5]`, Gaussian `F`, noise in `[0.5, 1.5]`.
    pub fn random(n: usize, m: usize, m_obs: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let b = DMatrix::from_fn(n, n, |_, _| normal());
        let k = &b * b.transpose() / n as f64 + DMatrix::identity(n, n);
        let k = (&k + k.transpose()) * 0.5;
        let forward = DMatrix::from_fn(m * m_obs, n, |_, _| normal());
        let mut uniform = |lo: f64| lo + normal().abs().min(1.0);
        let mass = (0..n).map(|_| uniform(0.5)).collect();
        let sigma = (0..m * m_obs).map(|_| uniform(0.5)).collect();
        Self::new(forward, sigma, k, mass, m_obs)
    }

    pub fn n(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn m(&self) -> usize {
        self.forward.nrows() / self.m_obs
    }

    fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.mass))
    }

    fn k_inverse(&self) -> DMatrix<f64> {
        self.stiffness.clone().try_inverse().expect("stiffness is invertible")
    }

    /// `C0 = K^{-1} M K^{-1} M`.
    pub fn c0(&self) -> DMatrix<f64> {
        let ki = self.k_inverse();
        let m = self.mass_matrix();
        &ki * &m * &ki * &m
    }

    /// `diag(w~) Gamma^{-1}` over all output channels.
    fn weights(&self, w: &[f64]) -> Result<Vec<f64>> {
        let m = self.m();
        if w.len() != m {
            return Err(Error::Dimension {
                context: "oracle design length",
                expected: m,
                actual: w.len(),
            });
        }
        Ok((0..m * self.m_obs).map(|i| w[i % m] / (self.sigma[i] * self.sigma[i])).collect())
    }

    /// Whitened operator `Gamma^{-1/2} F C0^{1/2} M^{-1/2}` with `C0^{1/2} = K^{-1} M`.
    pub fn whitened_forward(&self) -> DMatrix<f64> {
        let ki = self.k_inverse();
        let half = DMatrix::from_diagonal(&DVector::from_iterator(self.n(), self.mass.iter().map(|v| v.sqrt())));
        let mut f = &self.forward * ki * half;
        for (i, mut row) in f.row_iter_mut().enumerate() {
            row /= self.sigma[i];
        }
        f
    }
}

/// Posterior covariance `(M^{-1} F^T W Gamma^{-1} F + C0^{-1})^{-1}`.
fn posterior_covariance(inst: &DenseInstance, w: &[f64]) -> Result<DMatrix<f64>> {
    let wt = inst.weights(w)?;
    let mut wf = inst.forward.clone();
    for (i, mut row) in wf.row_iter_mut().enumerate() {
        row *= wt[i];
    }
    let mut misfit = inst.forward.transpose() * wf;
    for (i, mut row) in misfit.row_iter_mut().enumerate() {
        row /= inst.mass[i];
    }
    let c0_inv = inst.c0().try_inverse().ok_or_else(|| Error::Factorization("C0 is singular".into()))?;
    (misfit + c0_inv)
        .try_inverse()
        .ok_or_else(|| Error::Factorization("posterior precision is singular".into()))
}

/// `tr C_post(w)` from the undecomposed posterior covariance.
pub fn dense_objective(inst: &DenseInstance, w: &[f64]) -> Result<f64> {
    Ok(posterior_covariance(inst, w)?.trace())
}

/// Same trace via `(F^T W F + I)^{-1} M^{1/2} C0 M^{-1/2}` on the whitened operator.
pub fn dense_objective_whitened(inst: &DenseInstance, w: &[f64]) -> Result<f64> {
    let f = inst.whitened_forward();
    let m = inst.m();
    let mut wf = f.clone();
    for (i, mut row) in wf.row_iter_mut().enumerate() {
        row *= w[i % m];
    }
    let n = inst.n();
    let h = f.transpose() * wf + DMatrix::identity(n, n);
    let c = whitened_c0(inst);
    let x = h.lu().solve(&c).ok_or_else(|| Error::Factorization("misfit Hessian is singular".into()))?;
    Ok(x.trace())
}

/// Same trace via Sherman-Morrison-Woodbury in data space:
/// `(I + F^T W F)^{-1} = I - F^T W^{1/2} (I + W^{1/2} F F^T W^{1/2})^{-1} W^{1/2} F`.
pub fn dense_objective_woodbury(inst: &DenseInstance, w: &[f64]) -> Result<f64> {
    let f = inst.whitened_forward();
    let m = inst.m();
    let mut sf = f.clone();
    for (i, mut row) in sf.row_iter_mut().enumerate() {
        row *= w[i % m].sqrt();
    }
    let k = sf.nrows();
    let inner = &sf * sf.transpose() + DMatrix::identity(k, k);
    let c = whitened_c0(inst);
    let sfc = &sf * &c;
    let solved = inner.lu().solve(&sfc).ok_or_else(|| Error::Factorization("Woodbury core is singular".into()))?;
    Ok(c.trace() - (sf.transpose() * solved).trace())
}

fn whitened_c0(inst: &DenseInstance) -> DMatrix<f64> {
    let c0 = inst.c0();
    let n = inst.n();
    DMatrix::from_fn(n, n, |i, j| inst.mass[i].sqrt() * c0[(i, j)] / inst.mass[j].sqrt())
}

/// Posterior mean and covariance, literally:
/// `C_post = (M^{-1} F^T W Gamma^{-1} F + C0^{-1})^{-1}`,
/// `m_post = m_0 + C_post M^{-1} F^T W Gamma^{-1} (g - F m_0)`.
pub fn dense_posterior(
    inst: &DenseInstance,
    w: &[f64],
    g: &[f64],
    prior_mean: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if g.len() != inst.forward.nrows() || prior_mean.len() != inst.n() {
        return Err(Error::InvalidArgument("data or prior mean length".into()));
    }
    let cov = posterior_covariance(inst, w)?;
    let wt = inst.weights(w)?;
    let m0 = DVector::from_column_slice(prior_mean);
    let resid = DVector::from_column_slice(g) - &inst.forward * &m0;
    let weighted = DVector::from_iterator(resid.len(), resid.iter().zip(&wt).map(|(r, t)| r * t));
    let mut back = inst.forward.transpose() * weighted;
    for (i, v) in back.iter_mut().enumerate() {
        *v /= inst.mass[i];
    }
    let mean = m0 + &cov * back;
    Ok((mean.as_slice().to_vec(), cov))
}

/// `D_j = M^{-1} sum_i f_i f_i^T / sigma_i^2` over the output rows `i` of sensor `j`.
fn sensor_precisions(inst: &DenseInstance) -> Vec<DMatrix<f64>> {
    let (n, m) = (inst.n(), inst.m());
    (0..m)
        .map(|j| {
            let mut d = DMatrix::zeros(n, n);
            for b in 0..inst.m_obs {
                let i = b * m + j;
                let f = inst.forward.row(i).transpose();
                d += &f * f.transpose() / (inst.sigma[i] * inst.sigma[i]);
            }
            for (a, mut row) in d.row_iter_mut().enumerate() {
                row /= inst.mass[a];
            }
            d
        })
        .collect()
}

/// `dJ/dw_j = -tr(C D_j C)` with `C` the dense posterior covariance.
pub fn dense_gradient(inst: &DenseInstance, w: &[f64]) -> Result<Vec<f64>> {
    let c = posterior_covariance(inst, w)?;
    Ok(sensor_precisions(inst)
        .iter()
        .map(|d| -(&c * d * &c).trace())
        .collect())
}

/// `d^2J/dw_j dw_k = 2 tr(C D_j C D_k C)`.
pub fn dense_hessian(inst: &DenseInstance, w: &[f64]) -> Result<DMatrix<f64>> {
    let c = posterior_covariance(inst, w)?;
    let left: Vec<DMatrix<f64>> = sensor_precisions(inst).iter().map(|d| &c * d).collect();
    let right: Vec<DMatrix<f64>> = left.iter().map(|e| e * &c).collect();
    let m = inst.m();
    Ok(DMatrix::from_fn(m, m, |j, k| 2.0 * left[j].component_mul(&right[k].transpose()).sum()))
}

/// `C(m, k)` saturating at `usize::MAX`.
pub fn binomial(m: usize, k: usize) -> usize {
    if k > m {
        return 0;
    }
    let k = k.min(m - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (m - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// The `rank`-th `k`-subset of `0..m` in lexicographic order.
fn unrank_combination(m: usize, k: usize, mut rank: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let mut c = next;
        loop {
            let count = binomial(m - c - 1, k - slot - 1);
            if rank < count {
                break;
            }
            rank -= count;
            c += 1;
        }
        out.push(c);
        next = c + 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedDesign {
    pub support: Vec<usize>,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationTable {
    pub m: usize,
    pub m0: usize,
    /// Every design with exactly `m0` sensors, ascending in `J`, ties in
    /// lexicographic order of the support.
    pub rows: Vec<EnumeratedDesign>,
    /// Best design with at most `m0` sensors.
    pub best_at_most: EnumeratedDesign,
}

impl EnumerationTable {
    pub fn best(&self) -> &EnumeratedDesign {
        &self.rows[0]
    }

    /// 1-based rank of `value` among the exact-budget designs (ties favour it).
    pub fn rank_of(&self, value: f64, tol: f64) -> usize {
        1 + self.rows.iter().filter(|r| r.objective < value - tol).count()
    }
}

fn indicator(m: usize, support: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; m];
    for &k in support {
        w[k] = 1.0;
    }
    w
}

/// Evaluates `eval` on every binary design with exactly `m0` ones, and on all
/// smaller designs for the at-most-`m0` optimum.
pub fn enumerate_binary<F>(eval: F, m: usize, m0: usize, exec: Execution) -> Result<EnumerationTable>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if m0 > m {
        return Err(Error::InvalidArgument(format!("m0 = {m0} exceeds m = {m}")));
    }
    let total: usize = (0..=m0).map(|k| binomial(m, k)).fold(0usize, |a, b| a.saturating_add(b));
    if total > ENUMERATION_LIMIT {
        return Err(Error::LimitExceeded {
            what: "binary enumeration",
            size: total,
            limit: ENUMERATION_LIMIT,
        });
    }
    let eval_size = |k: usize| {
        exec.map(binomial(m, k), |r| {
            let support = unrank_combination(m, k, r);
            let objective = eval(&indicator(m, &support));
            EnumeratedDesign { support, objective }
        })
    };
    let mut rows = eval_size(m0);
    rows.sort_by(|a, b| a.objective.total_cmp(&b.objective).then_with(|| a.support.cmp(&b.support)));
    let mut best_at_most = rows[0].clone();
    for k in 0..m0 {
        for d in eval_size(k) {
            if d.objective < best_at_most.objective {
                best_at_most = d;
            }
        }
    }
    Ok(EnumerationTable {
        m,
        m0,
        rows,
        best_at_most,
    })
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, w: &[f64], h: f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|k| {
            x[k] = w[k] + h;
            let fp = f(&x);
            x[k] = w[k] - h;
            let fm = f(&x);
            x[k] = w[k];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference directional derivative of a gradient map.
pub fn fd_hvp<G: Fn(&[f64]) -> Vec<f64>>(grad: G, w: &[f64], v: &[f64], h: f64) -> Vec<f64> {
    let plus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - h * b).collect();
    grad(&plus)
        .iter()
        .zip(grad(&minus))
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect()
}

/// Summary of objective values over random binary designs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub m0: usize,
    pub count: usize,
    pub seed: u64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `(level, value)` pairs for levels 0.05, 0.25, 0.5, 0.75, 0.95.
    pub quantiles: Vec<(f64, f64)>,
    pub values: Vec<f64>,
    pub supports: Vec<Vec<usize>>,
}

impl BaselineStats {
    /// Fraction of samples with `J` strictly above `value`.
    pub fn fraction_beaten_by(&self, value: f64) -> f64 {
        self.values.iter().filter(|&&v| v > value).count() as f64 / self.count as f64
    }
}

/// `count` uniformly random designs with exactly `m0` sensors. Design `i`
/// draws from ChaCha stream `i` of `seed`.
pub fn random_designs<F>(eval: F, m: usize, m0: usize, count: usize, seed: u64, exec: Execution) -> Result<BaselineStats>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if count == 0 {
        return Err(Error::InvalidArgument("baseline needs at least one design".into()));
    }
    if m0 > m {
        return Err(Error::InvalidArgument(format!("m0 = {m0} exceeds m = {m}")));
    }
    let samples = exec.map(count, |i| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut support = sample(&mut rng, m, m0).into_vec();
        support.sort_unstable();
        let value = eval(&indicator(m, &support));
        (support, value)
    });
    let (supports, values): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (count - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    Ok(BaselineStats {
        m0,
        count,
        seed,
        min: sorted[0],
        max: sorted[count - 1],
        mean: values.iter().sum::<f64>() / count as f64,
        quantiles: [0.05, 0.25, 0.5, 0.75, 0.95].iter().map(|&q| (q, quantile(q))).collect(),
        values,
        supports,
    })
}

/// Projection onto `{0 <= z <= 1, sum z <= m0}` with fixed sets by exhaustive
/// KKT face enumeration: every coordinate at its lower bound, upper bound or
/// free, with the budget either active or slack. Exponential; `m <= 10`.
pub fn qp_projection(v: &[f64], m0: usize, fixed_ones: &[usize], fixed_zeros: &[usize]) -> Option<Vec<f64>> {
    let m = v.len();
    assert!(m <= 10, "face enumeration is exponential");
    let mut best: Option<(f64, Vec<f64>)> = None;
    let faces = 3usize.pow(m as u32);
    for code in 0..faces {
        let mut c = code;
        let state: Vec<u8> = (0..m)
            .map(|_| {
                let s = (c % 3) as u8;
                c /= 3;
                s
            })
            .collect();
        if fixed_ones.iter().any(|&k| state[k] != 1) || fixed_zeros.iter().any(|&k| state[k] != 0) {
            continue;
        }
        let free: Vec<usize> = (0..m).filter(|&k| state[k] == 2).collect();
        let uppers = state.iter().filter(|&&s| s == 1).count() as f64;
        let mut candidates = vec![0.0];
        if !free.is_empty() {
            let shift = (free.iter().map(|&k| v[k]).sum::<f64>() + uppers - m0 as f64) / free.len() as f64;
            candidates.push(shift);
        }
        for shift in candidates {
            let z: Vec<f64> = (0..m)
                .map(|k| match state[k] {
                    0 => 0.0,
                    1 => 1.0,
                    _ => v[k] - shift,
                })
                .collect();
            let feasible = z.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x))
                && z.iter().sum::<f64>() <= m0 as f64 + 1e-12
                && shift >= -1e-12;
            if !feasible {
                continue;
            }
            let d: f64 = z.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, z));
            }
        }
    }
    best.map(|(_, z)| z)
}
