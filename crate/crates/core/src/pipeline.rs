//! Experiment configuration and the end-to-end build: forward model, prior,
//! noise calibration, frozen QR and the assembled objective.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aoptimal::LowRankObjective;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lowrank::{exact_qr, materialize_transpose, randomized_qr, QRModel, RandomizedQrConfig};
use crate::model::{
    build_forward_stack, calibrate_noise_for, default_robin, preconditioned_operator, DenseMap, DiagonalNoise,
    HelmholtzConfig, HelmholtzModel, LinearMap, NoiseSampleSource, PriorModel, Transposed,
};
use crate::oracle::DenseInstance;
use crate::solve::SolverConfig;

/// Random dense forward map with a random SPD stiffness, for quick studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub m: usize,
    #[serde(default = "one")]
    pub m_obs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Helmholtz(HelmholtzConfig),
    Synthetic(SyntheticConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha: f64,
    /// Robin coefficient; `sqrt(alpha) / 1.42` when absent.
    pub beta: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01125,
            beta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Fixed standard deviation; skips calibration when present.
    pub sigma: Option<f64>,
    pub fraction: f64,
    pub samples: usize,
    pub source: NoiseSampleSource,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            fraction: 0.01,
            samples: 1000,
            source: NoiseSampleSource::Prior,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QrMethod {
    #[default]
    Randomized,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowRankConfig {
    pub method: QrMethod,
    /// Target rank for the randomized build; `min(n, m * m_obs)` when absent.
    pub rank: Option<usize>,
    pub power_iters: usize,
    pub drop_tol: f64,
}

impl Default for LowRankConfig {
    fn default() -> Self {
        Self {
            method: QrMethod::Randomized,
            rank: None,
            power_iters: 2,
            drop_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub lowrank: LowRankConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    /// The desk-scale Helmholtz setup with every default.
    pub fn desk_helmholtz() -> Self {
        Self {
            model: ModelConfig::Helmholtz(HelmholtzConfig::default()),
            prior: PriorConfig::default(),
            noise: NoiseConfig::default(),
            lowrank: LowRankConfig::default(),
            seed: 0,
            solver: SolverConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior.alpha > 0.0) {
            return Err(Error::InvalidModel(format!("prior.alpha must be positive, got {}", self.prior.alpha)));
        }
        if let Some(b) = self.prior.beta {
            if !(b >= 0.0) {
                return Err(Error::InvalidModel(format!("prior.beta must be non-negative, got {b}")));
            }
        }
        if let Some(s) = self.noise.sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidModel(format!("noise.sigma must be positive, got {s}")));
            }
        } else if !(self.noise.fraction > 0.0) || self.noise.samples == 0 {
            return Err(Error::InvalidModel("noise.fraction must be positive and noise.samples at least 1".into()));
        }
        if !(self.lowrank.drop_tol >= 0.0 && self.lowrank.drop_tol < 1.0) {
            return Err(Error::InvalidModel("lowrank.drop_tol must lie in [0, 1)".into()));
        }
        if let ModelConfig::Synthetic(s) = &self.model {
            if s.n == 0 || s.m == 0 || s.m_obs == 0 {
                return Err(Error::InvalidModel("synthetic model needs n, m, m_obs >= 1".into()));
            }
        }
        self.solver.validate()
    }
}

/// Wall-clock seconds per build stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildTimings {
    pub model: f64,
    pub noise: f64,
    pub qr: f64,
    pub assemble: f64,
}

/// Everything derived from an [`ExperimentConfig`].
pub struct Problem {
    pub config: ExperimentConfig,
    pub forward: Arc<dyn LinearMap>,
    pub prior: Arc<PriorModel>,
    pub noise: DiagonalNoise,
    pub qr: QRModel,
    pub objective: LowRankObjective,
    pub helmholtz: Option<Arc<HelmholtzModel>>,
    pub timings: BuildTimings,
}

impl Problem {
    pub fn m(&self) -> usize {
        self.objective.m()
    }

    pub fn n(&self) -> usize {
        self.prior.dim()
    }

    /// Coordinates of the parameter dofs, when the model has a geometry.
    pub fn source_coords(&self) -> Option<Vec<(f64, f64)>> {
        self.helmholtz.as_ref().map(|h| h.source_coords())
    }

    pub fn sensor_coords(&self) -> Option<Vec<(f64, f64)>> {
        self.helmholtz.as_ref().map(|h| h.sensor_coords())
    }
}

/// The forward map and prior for a configuration, before noise and QR.
pub fn build_model(config: &ExperimentConfig) -> Result<(Arc<dyn LinearMap>, Arc<PriorModel>, Option<Arc<HelmholtzModel>>)> {
    match &config.model {
        ModelConfig::Helmholtz(h) => {
            let model = Arc::new(HelmholtzModel::new(h.clone())?);
            let beta = config.prior.beta.unwrap_or_else(|| default_robin(config.prior.alpha));
            let prior = PriorModel::bilaplacian(&model.source_grid_nodes(), model.spacing(), config.prior.alpha, beta)?;
            let forward: Arc<dyn LinearMap> = Arc::new(build_forward_stack(model.clone()));
            Ok((forward, Arc::new(prior), Some(model)))
        }
        ModelConfig::Synthetic(s) => {
            let inst = DenseInstance::random(s.n, s.m, s.m_obs, s.seed)?;
            let prior = PriorModel::from_stiffness(
                inst.stiffness.clone(),
                nalgebra::DVector::from_vec(inst.mass.clone()),
                config.prior.alpha,
                config.prior.beta.unwrap_or(0.0),
            )?;
            Ok((Arc::new(DenseMap::new(inst.forward)), Arc::new(prior), None))
        }
    }
}

fn m_obs_of(config: &ExperimentConfig) -> usize {
    match &config.model {
        ModelConfig::Helmholtz(h) => 2 * h.wavenumbers.len(),
        ModelConfig::Synthetic(s) => s.m_obs,
    }
}

/// Builds the full problem. Seeds: noise calibration uses `seed`, the
/// randomized QR `seed + 1`.
pub fn build_problem(config: &ExperimentConfig, exec: Execution) -> Result<Problem> {
    config.validate()?;
    let t = Instant::now();
    let (forward, prior, helmholtz) = build_model(config)?;
    let t_model = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let outputs = forward.n_out();
    let sigma = match config.noise.sigma {
        Some(s) => s,
        None => {
            let s2 = calibrate_noise_for(
                &*forward,
                &prior,
                config.noise.source,
                config.noise.samples,
                config.noise.fraction,
                config.seed,
                exec,
            )?;
            if !(s2 > 0.0) {
                return Err(Error::InvalidModel("calibrated noise variance is zero; the forward map vanishes".into()));
            }
            s2.sqrt()
        }
    };
    let noise = DiagonalNoise::uniform(outputs, sigma)?;
    let t_noise = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let m_obs = m_obs_of(config);
    let whitened = preconditioned_operator(forward.clone(), prior.clone(), noise.clone())?;
    let qr = match config.lowrank.method {
        QrMethod::Exact => exact_qr(&materialize_transpose(&whitened, exec), m_obs)?,
        QrMethod::Randomized => {
            let rank = config.lowrank.rank.unwrap_or(prior.dim().min(outputs));
            let cfg = RandomizedQrConfig {
                rank,
                power_iters: config.lowrank.power_iters,
                drop_tol: config.lowrank.drop_tol,
            };
            randomized_qr(&Transposed(&whitened), m_obs, &cfg, config.seed.wrapping_add(1), exec)?
        }
    };
    let t_qr = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let objective = LowRankObjective::assemble(&qr, &prior, exec)?;
    let t_assemble = t.elapsed().as_secs_f64();
    log::info!(
        "built problem: n = {}, m = {}, m_obs = {m_obs}, rank = {}, sigma = {sigma:.3e}",
        prior.dim(),
        objective.m(),
        qr.rank()
    );
    Ok(Problem {
        config: config.clone(),
        forward,
        prior,
        noise,
        qr,
        objective,
        helmholtz,
        timings: BuildTimings {
            model: t_model,
            noise: t_noise,
            qr: t_qr,
            assemble: t_assemble,
        },
    })
}

/// Four alternating Gaussian bumps on a circle of radius `0.35 / 3` around the
/// domain centre: `sum_i (-1)^i exp(-800 |x - c_i|^2)`.
pub fn f_ground(coords: &[(f64, f64)]) -> Vec<f64> {
    let r = 0.35 / 3.0;
    let centres: Vec<(f64, f64)> = (0..4)
        .map(|i| {
            let th = std::f64::consts::FRAC_PI_2 * i as f64;
            (0.5 + r * th.cos(), 0.5 + r * th.sin())
        })
        .collect();
    coords
        .iter()
        .map(|&(x, y)| {
            centres
                .iter()
                .enumerate()
                .map(|(i, &(cx, cy))| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (-800.0 * ((x - cx).powi(2) + (y - cy).powi(2))).exp()
                })
                .sum()
        })
        .collect()
}
