//! Forward maps, prior and noise, and the prior-preconditioned operator.

pub mod banded;
pub mod helmholtz;
pub mod linear_map;
pub mod noise;
pub mod prior;

use std::sync::Arc;

pub use helmholtz::{build_forward_stack, HelmholtzConfig, HelmholtzModel, HelmholtzStack, SensorRing};
pub use linear_map::{adjoint_defect, apply_adjoint_columns, apply_columns, materialize, DenseMap, LinearMap, Transposed};
pub use noise::{calibrate_noise, calibrate_noise_for, DiagonalNoise, NoiseSampleSource};
pub use prior::{default_robin, GridNode, PriorModel};

use crate::error::{check_dim, Result};

/// `x -> Gamma^{-1/2} F C0^{1/2} M^{-1/2} x`, kept as a composition of actions.
pub struct PreconditionedMap<M> {
    forward: M,
    prior: Arc<PriorModel>,
    noise: DiagonalNoise,
}

/// Composes the whitened operator from a raw forward map, prior and noise.
pub fn preconditioned_operator<M: LinearMap>(
    forward: M,
    prior: Arc<PriorModel>,
    noise: DiagonalNoise,
) -> Result<PreconditionedMap<M>> {
    check_dim("forward input vs prior", prior.dim(), forward.n_in())?;
    check_dim("forward output vs noise", noise.len(), forward.n_out())?;
    Ok(PreconditionedMap { forward, prior, noise })
}

impl<M> PreconditionedMap<M> {
    pub fn forward(&self) -> &M {
        &self.forward
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn noise(&self) -> &DiagonalNoise {
        &self.noise
    }
}

impl<M: LinearMap> LinearMap for PreconditionedMap<M> {
    fn n_in(&self) -> usize {
        self.forward.n_in()
    }

    fn n_out(&self) -> usize {
        self.forward.n_out()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.noise.whiten(&self.forward.apply(&self.prior.whitened_sqrt(x)))
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let z = self.forward.apply_adjoint(&self.noise.whiten(y));
        self.prior.whitened_sqrt_transpose(&z)
    }
}
