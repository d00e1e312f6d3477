use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::exec::Execution;

/// A real linear map `R^n_in -> R^n_out` together with its Euclidean transpose.
///
/// Implementations are immutable after construction, so applies may run
/// concurrently.
pub trait LinearMap: Send + Sync {
    fn n_in(&self) -> usize;
    fn n_out(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

impl<T: LinearMap + ?Sized> LinearMap for Arc<T> {
    fn n_in(&self) -> usize {
        (**self).n_in()
    }
    fn n_out(&self) -> usize {
        (**self).n_out()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_adjoint(y)
    }
}

impl<T: LinearMap + ?Sized> LinearMap for &T {
    fn n_in(&self) -> usize {
        (**self).n_in()
    }
    fn n_out(&self) -> usize {
        (**self).n_out()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (**self).apply(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (**self).apply_adjoint(y)
    }
}

/// Explicit matrix.
#[derive(Clone, Debug)]
pub struct DenseMap {
    matrix: DMatrix<f64>,
}

impl DenseMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearMap for DenseMap {
    fn n_in(&self) -> usize {
        self.matrix.ncols()
    }
    fn n_out(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_in(), "DenseMap::apply input length");
        let m = &self.matrix;
        let mut out = vec![0.0; m.nrows()];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (o, a) in out.iter_mut().zip(m.column(j).iter()) {
                    *o += a * xj;
                }
            }
        }
        out
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_out(), "DenseMap::apply_adjoint input length");
        self.matrix
            .column_iter()
            .map(|col| col.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// The transpose of another map.
pub struct Transposed<M>(pub M);

impl<M: LinearMap> LinearMap for Transposed<M> {
    fn n_in(&self) -> usize {
        self.0.n_out()
    }
    fn n_out(&self) -> usize {
        self.0.n_in()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.apply_adjoint(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.0.apply(y)
    }
}

/// Applies `map` to every column of `x`, fanning out over columns.
pub fn apply_columns<M: LinearMap + ?Sized>(map: &M, x: &DMatrix<f64>, exec: Execution) -> DMatrix<f64> {
    assert_eq!(x.nrows(), map.n_in(), "apply_columns row count");
    let cols = exec.map(x.ncols(), |j| map.apply(x.column(j).as_slice()));
    columns_to_matrix(map.n_out(), cols)
}

/// Applies the transpose of `map` to every column of `y`.
pub fn apply_adjoint_columns<M: LinearMap + ?Sized>(
    map: &M,
    y: &DMatrix<f64>,
    exec: Execution,
) -> DMatrix<f64> {
    assert_eq!(y.nrows(), map.n_out(), "apply_adjoint_columns row count");
    let cols = exec.map(y.ncols(), |j| map.apply_adjoint(y.column(j).as_slice()));
    columns_to_matrix(map.n_in(), cols)
}

fn columns_to_matrix(nrows: usize, cols: Vec<Vec<f64>>) -> DMatrix<f64> {
    let ncols = cols.len();
    let mut data = Vec::with_capacity(nrows * ncols);
    for c in cols {
        debug_assert_eq!(c.len(), nrows);
        data.extend(c);
    }
    DMatrix::from_vec(nrows, ncols, data)
}

/// Dense `n_out x n_in` snapshot of a map, built from unit-vector applies.
pub fn materialize<M: LinearMap + ?Sized>(map: &M, exec: Execution) -> DMatrix<f64> {
    let n = map.n_in();
    let cols = exec.map(n, |j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        map.apply(&e)
    });
    columns_to_matrix(map.n_out(), cols)
}

/// Randomized adjoint consistency check.
///
/// Returns the largest value over `trials` Gaussian pairs of
/// `|<Ax, y> - <x, A^T y>| / (|Ax||y| + |x||A^T y|)`.
pub fn adjoint_defect<M: LinearMap + ?Sized>(map: &M, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x: Vec<f64> = (0..map.n_in()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..map.n_out()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ax = map.apply(&x);
        let aty = map.apply_adjoint(&y);
        let lhs = dot(&ax, &y);
        let rhs = dot(&x, &aty);
        let scale = norm(&ax) * norm(&y) + norm(&x) * norm(&aty);
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    worst
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_map_adjoint_and_linearity() {
        let a = DMatrix::from_fn(7, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let map = DenseMap::new(a);
        assert!(adjoint_defect(&map, 20, 1) < 1e-14);
        let x = [1.0, -2.0, 0.5, 3.0];
        let z = [0.0, 1.0, 1.0, -1.0];
        let combo: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let lhs = map.apply(&combo);
        let (ax, az) = (map.apply(&x), map.apply(&z));
        for i in 0..7 {
            assert!((lhs[i] - (2.0 * ax[i] - 3.0 * az[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn materialize_recovers_matrix() {
        let a = DMatrix::from_fn(5, 3, |i, j| (i as f64) - 2.0 * j as f64);
        let map = DenseMap::new(a.clone());
        assert_eq!(materialize(&map, Execution::default()), a);
        let t = Transposed(&map);
        assert_eq!(materialize(&t, Execution::Sequential), a.transpose());
    }
}
