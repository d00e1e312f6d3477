//! Banded LU factorization with partial pivoting for complex systems.
//!
//! Storage follows the LAPACK `gbtrf` layout idea: every row keeps a window of
//! `2*kl + ku + 1` entries starting at column `row - kl`, which leaves room for
//! the fill-in produced by row interchanges.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A square banded matrix under assembly.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![Complex64::new(0.0, 0.0); n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        // column j lives at offset j - (i - kl) inside row i's window
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    /// Adds `value` to entry `(i, j)`; the entry must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, value: Complex64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return Complex64::new(0.0, 0.0);
        }
        self.data[self.slot(i, j)]
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z = z.conj());
        out
    }

    /// Dense matrix-vector product, used for residual checks.
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Factorizes in place. Fails when a pivot column is exactly zero.
    pub fn factorize(mut self) -> Result<BandLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].norm();
            for r in k + 1..=last {
                let v = self.data[self.slot(r, k)].norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Factorization(format!("zero pivot in column {k}")));
            }
            pivots[k] = p;
            let col_end = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=col_end {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for r in k + 1..=last {
                let s = self.slot(r, k);
                let factor = self.data[s] / pivot;
                self.data[s] = factor;
                if factor == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in k + 1..=col_end {
                    let u = self.data[self.slot(k, j)];
                    let t = self.slot(r, j);
                    self.data[t] -= factor * u;
                }
            }
        }
        Ok(BandLu {
            band: self,
            pivots,
        })
    }
}

/// Result of [`BandMatrix::factorize`].
#[derive(Clone, Debug)]
pub struct BandLu {
    band: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.band.n
    }

    pub fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [Complex64]) {
        let b = &self.band;
        let n = b.n;
        assert_eq!(x.len(), n, "right-hand side length");
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk == Complex64::new(0.0, 0.0) {
                continue;
            }
            let last = (k + b.kl).min(n - 1);
            for r in k + 1..=last {
                x[r] -= b.data[b.slot(r, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let col_end = (k + b.kl + b.ku).min(n - 1);
            let mut acc = x[k];
            for j in k + 1..=col_end {
                acc -= b.data[b.slot(k, j)] * x[j];
            }
            x[k] = acc / b.data[b.slot(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn solves_random_banded_system_needing_pivots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, kl, ku) = (60, 4, 3);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal forces row interchanges
                let scale = if i == j { 0.01 } else { 1.0 };
                a.add(i, j, c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale);
            }
        }
        let x: Vec<Complex64> = (0..n).map(|i| c(i as f64, 1.0 - i as f64 * 0.5)).collect();
        let b = a.matvec(&x);
        let lu = a.clone().factorize().unwrap();
        let got = lu.solve(&b);
        let err: f64 = got.iter().zip(&x).map(|(g, e)| (g - e).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "max error {err}");
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let a = BandMatrix::zeros(5, 1, 1);
        assert!(matches!(a.factorize(), Err(Error::Factorization(_))));
    }

    #[test]
    fn conj_conjugates_entries() {
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.add(0, 1, c(1.0, 2.0));
        assert_eq!(a.conj().get(0, 1), c(1.0, -2.0));
    }
}
