use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};

/// Gaussian prior `C0 = K^{-1} M K^{-1} M` on the mass-weighted space `R^n_M`,
/// with symmetric positive definite stiffness `K` and lumped (diagonal) mass `M`.
///
/// The square root used throughout is `C0^{1/2} = K^{-1} M`.
#[derive(Clone, Debug)]
pub struct PriorModel {
    stiffness: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    mass: DVector<f64>,
    mass_sqrt: DVector<f64>,
    trace_c0: f64,
    alpha: f64,
    beta: f64,
}

/// Node of a uniform grid restricted to a subdomain, in integer grid coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridNode {
    pub i: usize,
    pub j: usize,
}

/// Default Robin coefficient for a given bilaplacian scale.
pub fn default_robin(alpha: f64) -> f64 {
    alpha.sqrt() / 1.42
}

impl PriorModel {
    /// Builds a prior from an explicit stiffness matrix and lumped mass.
    pub fn from_stiffness(stiffness: DMatrix<f64>, mass: DVector<f64>, alpha: f64, beta: f64) -> Result<Self> {
        let n = stiffness.nrows();
        check_dim("prior stiffness columns", n, stiffness.ncols())?;
        check_dim("prior mass", n, mass.len())?;
        if let Some(bad) = mass.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidModel(format!(
                "mass entry {bad} is not strictly positive ({})",
                mass[bad]
            )));
        }
        let asym = (&stiffness - stiffness.transpose()).abs().max();
        if asym > 1e-12 * stiffness.abs().max().max(1.0) {
            return Err(Error::InvalidModel(format!("stiffness is not symmetric (defect {asym:.3e})")));
        }
        let chol = Cholesky::new(stiffness.clone())
            .ok_or_else(|| Error::InvalidModel("stiffness is not positive definite".into()))?;
        let mass_sqrt = mass.map(f64::sqrt);
        let mut prior = Self {
            stiffness,
            chol,
            mass,
            mass_sqrt,
            trace_c0: 0.0,
            alpha,
            beta,
        };
        prior.trace_c0 = prior.exact_trace();
        if !(prior.trace_c0 > 0.0) {
            return Err(Error::InvalidModel("prior trace is not positive".into()));
        }
        Ok(prior)
    }

    /// `K = M = I`, so that `C0 = I`.
    pub fn identity(n: usize) -> Self {
        Self::from_stiffness(DMatrix::identity(n, n), DVector::from_element(n, 1.0), 0.0, 0.0)
            .expect("identity prior is valid")
    }

    /// Finite-volume discretization of `-alpha * Laplace + I` on the node set
    /// `nodes` (4-neighbour connectivity, spacing `h`) with Robin coefficient
    /// `beta` on faces that leave the node set.
    pub fn bilaplacian(nodes: &[GridNode], h: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta >= 0.0) || !(h > 0.0) {
            return Err(Error::InvalidModel(format!(
                "bilaplacian needs alpha > 0, beta >= 0, h > 0 (got {alpha}, {beta}, {h})"
            )));
        }
        let n = nodes.len();
        if n == 0 {
            return Err(Error::InvalidModel("empty source subdomain".into()));
        }
        let index: std::collections::HashMap<(usize, usize), usize> =
            nodes.iter().enumerate().map(|(p, g)| ((g.i, g.j), p)).collect();
        let cell = h * h;
        let mut k = DMatrix::zeros(n, n);
        for (p, g) in nodes.iter().enumerate() {
            let neighbours = [
                g.i.checked_sub(1).map(|i| (i, g.j)),
                Some((g.i + 1, g.j)),
                g.j.checked_sub(1).map(|j| (g.i, j)),
                Some((g.i, g.j + 1)),
            ];
            let mut open_faces = 0usize;
            for nb in neighbours {
                match nb.and_then(|key| index.get(&key)) {
                    Some(&q) => {
                        k[(p, p)] += alpha;
                        k[(p, q)] -= alpha;
                    }
                    None => open_faces += 1,
                }
            }
            k[(p, p)] += cell + beta * h * open_faces as f64;
        }
        let mass = DVector::from_element(n, cell);
        Self::from_stiffness(k, mass, alpha, beta)
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mass_diag(&self) -> &DVector<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    /// `tr(C0)`, computed exactly at construction.
    pub fn trace_c0(&self) -> f64 {
        self.trace_c0
    }

    /// `K^{-1} x`.
    pub fn stiffness_solve(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "stiffness_solve input length");
        self.chol.solve(&DVector::from_column_slice(x)).data.into()
    }

    /// `C0^{1/2} x = K^{-1} M x`.
    pub fn sqrt_apply(&self, x: &[f64]) -> Vec<f64> {
        let mx: Vec<f64> = x.iter().zip(self.mass.iter()).map(|(a, m)| a * m).collect();
        self.stiffness_solve(&mx)
    }

    /// `C0 x`.
    pub fn cov_apply(&self, x: &[f64]) -> Vec<f64> {
        self.sqrt_apply(&self.sqrt_apply(x))
    }

    /// `C0^{1/2} M^{-1/2} x = K^{-1} M^{1/2} x`, the map from whitened
    /// coordinates to the discretization.
    pub fn whitened_sqrt(&self, x: &[f64]) -> Vec<f64> {
        let v: Vec<f64> = x.iter().zip(self.mass_sqrt.iter()).map(|(a, m)| a * m).collect();
        self.stiffness_solve(&v)
    }

    /// Euclidean transpose of [`PriorModel::whitened_sqrt`]: `M^{1/2} K^{-1} y`.
    pub fn whitened_sqrt_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut v = self.stiffness_solve(y);
        v.iter_mut().zip(self.mass_sqrt.iter()).for_each(|(a, m)| *a *= m);
        v
    }

    /// Inverse of [`PriorModel::whitened_sqrt`]: `M^{-1/2} K x`.
    pub fn whitened_sqrt_inverse(&self, x: &[f64]) -> Vec<f64> {
        let kx = &self.stiffness * DVector::from_column_slice(x);
        kx.iter().zip(self.mass_sqrt.iter()).map(|(a, m)| a / m).collect()
    }

    /// `M^{1/2} C0 M^{-1/2} x = T^T M T x` with `T` the whitened square root;
    /// symmetric positive definite on `R^n`.
    pub fn whitened_cov_apply(&self, x: &[f64]) -> Vec<f64> {
        let mut t = self.whitened_sqrt(x);
        t.iter_mut().zip(self.mass.iter()).for_each(|(a, m)| *a *= m);
        self.whitened_sqrt_transpose(&t)
    }

    /// `<x, y>_M`.
    pub fn mass_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).zip(self.mass.iter()).map(|((a, b), m)| a * b * m).sum()
    }

    /// Sum over the `M`-orthonormal basis `e_i / sqrt(m_i)` of `<C0 e, e>_M`.
    fn exact_trace(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0 / self.mass_sqrt[i];
                let c = self.cov_apply(&e);
                self.mass_inner(&c, &e)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk_nodes(r: usize) -> Vec<GridNode> {
        let c = r as i64;
        let mut out = Vec::new();
        for j in 0..=2 * r {
            for i in 0..=2 * r {
                let (di, dj) = (i as i64 - c, j as i64 - c);
                if di * di + dj * dj <= c * c {
                    out.push(GridNode { i, j });
                }
            }
        }
        out
    }

    #[test]
    fn identity_prior_is_identity() {
        let p = PriorModel::identity(4);
        assert_eq!(p.trace_c0(), 4.0);
        assert_eq!(p.sqrt_apply(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn covariance_is_mass_symmetric() {
        let nodes = disk_nodes(5);
        let p = PriorModel::bilaplacian(&nodes, 0.05, 0.01125, default_robin(0.01125)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..p.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
            let a = p.mass_inner(&p.cov_apply(&x), &y);
            let b = p.mass_inner(&x, &p.cov_apply(&y));
            assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()));
            assert!(p.mass_inner(&p.cov_apply(&x), &x) > 0.0);
        }
    }

    #[test]
    fn trace_matches_dense_formula() {
        let nodes = disk_nodes(4);
        let h = 0.05;
        let p = PriorModel::bilaplacian(&nodes, h, 0.02, 0.1).unwrap();
        let kinv = p.stiffness().clone().try_inverse().unwrap();
        let m = DMatrix::from_diagonal(p.mass_diag());
        let c0 = &kinv * &m * &kinv * &m;
        let tr = c0.trace();
        assert!((tr - p.trace_c0()).abs() <= 1e-8 * tr, "{tr} vs {}", p.trace_c0());
    }

    #[test]
    fn whitened_sqrt_round_trip() {
        let nodes = disk_nodes(3);
        let p = PriorModel::bilaplacian(&nodes, 0.1, 0.03, 0.05).unwrap();
        let x: Vec<f64> = (0..p.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = p.whitened_sqrt_inverse(&p.whitened_sqrt(&x));
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn whitened_covariance_is_similarity_transform_of_c0() {
        let nodes = disk_nodes(3);
        let p = PriorModel::bilaplacian(&nodes, 0.1, 0.03, 0.05).unwrap();
        let x: Vec<f64> = (0..p.dim()).map(|i| (i as f64 * 0.91).cos()).collect();
        let scaled: Vec<f64> = x.iter().zip(p.mass_diag().iter()).map(|(a, m)| a / m.sqrt()).collect();
        let expected: Vec<f64> =
            p.cov_apply(&scaled).iter().zip(p.mass_diag().iter()).map(|(a, m)| a * m.sqrt()).collect();
        for (a, b) in p.whitened_cov_apply(&x).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_nonpositive_mass() {
        let err = PriorModel::from_stiffness(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0]), 0.0, 0.0);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }
}
