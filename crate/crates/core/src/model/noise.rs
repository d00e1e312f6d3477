use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::linear_map::{apply_columns, LinearMap};
use super::prior::PriorModel;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Uncorrelated Gaussian noise with per-channel standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalNoise {
    sigma: Vec<f64>,
}

impl DiagonalNoise {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(k) = sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidModel(format!(
                "noise standard deviation {k} must be positive, got {}",
                sigma[k]
            )));
        }
        Ok(Self { sigma })
    }

    pub fn uniform(len: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![sigma; len])
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `Gamma^{-1/2} y`.
    pub fn whiten(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.sigma).map(|(v, s)| v / s).collect()
    }
}

/// Where the calibration samples come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSampleSource {
    /// Unit Gaussians pushed through `C0^{1/2} M^{-1/2}` before the forward map,
    /// i.e. data generated from prior draws.
    #[default]
    Prior,
    /// Unit Gaussians fed directly to the forward map.
    White,
}

/// `sigma^2 = fraction^2 / n_samples * sum_i |F s_i|^2` with i.i.d. standard
/// Gaussian `s_i`. Sample `i` is drawn from its own ChaCha stream, so the value
/// does not depend on the execution policy.
pub fn calibrate_noise<M: LinearMap + ?Sized>(
    map: &M,
    n_samples: usize,
    fraction: f64,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("noise calibration needs at least one sample".into()));
    }
    if !(fraction > 0.0) {
        return Err(Error::InvalidArgument(format!("noise fraction must be positive, got {fraction}")));
    }
    let n = map.n_in();
    let cols = exec.map(n_samples, |i| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
    });
    let samples = DMatrix::from_vec(n, n_samples, cols.concat());
    let images = apply_columns(map, &samples, exec);
    let energy: f64 = images.iter().map(|v| v * v).sum();
    Ok(fraction * fraction / n_samples as f64 * energy)
}

/// Raw forward map preceded by the prior square root in whitened coordinates.
struct PriorPushForward<'a, M: ?Sized> {
    forward: &'a M,
    prior: &'a PriorModel,
}

impl<M: LinearMap + ?Sized> LinearMap for PriorPushForward<'_, M> {
    fn n_in(&self) -> usize {
        self.prior.dim()
    }
    fn n_out(&self) -> usize {
        self.forward.n_out()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward.apply(&self.prior.whitened_sqrt(x))
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.prior.whitened_sqrt_transpose(&self.forward.apply_adjoint(y))
    }
}

/// Calibrates a scalar noise variance for the raw forward map `forward`.
pub fn calibrate_noise_for<M: LinearMap + ?Sized>(
    forward: &M,
    prior: &PriorModel,
    source: NoiseSampleSource,
    n_samples: usize,
    fraction: f64,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    match source {
        NoiseSampleSource::Prior => {
            let push = PriorPushForward { forward, prior };
            calibrate_noise(&push, n_samples, fraction, seed, exec)
        }
        NoiseSampleSource::White => calibrate_noise(forward, n_samples, fraction, seed, exec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linear_map::DenseMap;

    #[test]
    fn zero_map_gives_zero_variance() {
        let map = DenseMap::new(DMatrix::zeros(4, 3));
        assert_eq!(calibrate_noise(&map, 10, 0.01, 1, Execution::default()).unwrap(), 0.0);
    }

    #[test]
    fn identity_map_matches_law_of_large_numbers() {
        let m = 30;
        let map = DenseMap::identity(m);
        let s2 = calibrate_noise(&map, 1000, 0.01, 7, Execution::default()).unwrap();
        let expected = 0.01f64.powi(2) * m as f64;
        assert!((s2 / expected - 1.0).abs() < 0.1, "{s2} vs {expected}");
    }

    #[test]
    fn deterministic_under_seed_and_policy() {
        let map = DenseMap::new(DMatrix::from_fn(5, 4, |i, j| (i + 2 * j) as f64));
        let a = calibrate_noise(&map, 50, 0.01, 3, Execution::Sequential).unwrap();
        let b = calibrate_noise(&map, 50, 0.01, 3, Execution::Parallel).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(DiagonalNoise::new(vec![1.0, -1.0]).is_err());
        assert!(DiagonalNoise::new(vec![1.0, f64::NAN]).is_err());
    }
}
