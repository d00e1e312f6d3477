//! Desk-scale Helmholtz source problem on the unit square.
//!
//! The field solves `-Laplace u - k^2 u = f` with the impedance condition
//! `du/dn = i k u` on the outer boundary. The discretization is the
//! cell-vertex finite-volume form of the 5-point stencil: interior faces carry
//! weight 1, faces running along the boundary weight 1/2, control volumes are
//! `h^2` (interior), `h^2/2` (edge) and `h^2/4` (corner). The resulting matrix is
//! complex symmetric, so its Hermitian transpose is the same operator with the
//! conjugated impedance sign.

use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::banded::{BandLu, BandMatrix};
use super::linear_map::LinearMap;
use super::prior::GridNode;
use crate::error::{Error, Result};

/// One ring of candidate sensors around the domain centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorRing {
    pub radius: f64,
    pub count: usize,
    /// Angular offset of the first sensor, in radians.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelmholtzConfig {
    /// Grid nodes per side of the unit square.
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_wavenumbers")]
    pub wavenumbers: Vec<f64>,
    /// Radius of the circular source subdomain centred at (0.5, 0.5).
    #[serde(default = "default_source_radius")]
    pub source_radius: f64,
    #[serde(default = "default_rings")]
    pub sensor_rings: Vec<SensorRing>,
}

fn default_grid_size() -> usize {
    41
}

fn default_wavenumbers() -> Vec<f64> {
    vec![8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0]
}

fn default_source_radius() -> f64 {
    0.2
}

fn default_rings() -> Vec<SensorRing> {
    [0.27, 0.33, 0.39, 0.45]
        .iter()
        .enumerate()
        .map(|(r, &radius)| SensorRing {
            radius,
            count: 12,
            phase: if r % 2 == 0 { 0.0 } else { PI / 12.0 },
        })
        .collect()
}

impl Default for HelmholtzConfig {
    fn default() -> Self {
        Self {
            grid_size: default_grid_size(),
            wavenumbers: default_wavenumbers(),
            source_radius: default_source_radius(),
            sensor_rings: default_rings(),
        }
    }
}

const CENTER: (f64, f64) = (0.5, 0.5);

struct Factorized {
    k: f64,
    forward: BandLu,
    adjoint: BandLu,
}

/// Immutable Helmholtz model: grid, source mask, sensors and one pair of
/// factorizations (forward, conjugated-boundary adjoint) per wavenumber.
pub struct HelmholtzModel {
    config: HelmholtzConfig,
    n_side: usize,
    h: f64,
    source_nodes: Vec<usize>,
    sensor_nodes: Vec<usize>,
    volumes: Vec<f64>,
    solvers: Vec<Factorized>,
}

impl std::fmt::Debug for HelmholtzModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HelmholtzModel")
            .field("n_side", &self.n_side)
            .field("n_source", &self.source_nodes.len())
            .field("n_sensors", &self.sensor_nodes.len())
            .field("wavenumbers", &self.config.wavenumbers)
            .finish()
    }
}

impl HelmholtzModel {
    pub fn new(config: HelmholtzConfig) -> Result<Self> {
        let n_side = config.grid_size;
        if n_side < 3 {
            return Err(Error::InvalidModel(format!("grid_size must be at least 3, got {n_side}")));
        }
        if config.wavenumbers.is_empty() {
            return Err(Error::InvalidModel("at least one wavenumber is required".into()));
        }
        if let Some(&k) = config.wavenumbers.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidModel(format!("wavenumbers must be positive, got {k}")));
        }
        if !(config.source_radius > 0.0 && config.source_radius < 0.5) {
            return Err(Error::InvalidModel(format!(
                "source_radius must lie in (0, 0.5), got {}",
                config.source_radius
            )));
        }
        let h = 1.0 / (n_side - 1) as f64;
        let node = |i: usize, j: usize| j * n_side + i;

        let mut source_nodes = Vec::new();
        for j in 0..n_side {
            for i in 0..n_side {
                let (x, y) = (i as f64 * h - CENTER.0, j as f64 * h - CENTER.1);
                if (x * x + y * y).sqrt() <= config.source_radius + 1e-12 {
                    source_nodes.push(node(i, j));
                }
            }
        }
        if source_nodes.is_empty() {
            return Err(Error::InvalidModel("source subdomain contains no grid node".into()));
        }
        let source_set: HashSet<usize> = source_nodes.iter().copied().collect();

        let mut sensor_nodes = Vec::new();
        let mut seen = HashSet::new();
        for ring in &config.sensor_rings {
            for s in 0..ring.count {
                let theta = ring.phase + 2.0 * PI * s as f64 / ring.count as f64;
                let (x, y) = (CENTER.0 + ring.radius * theta.cos(), CENTER.1 + ring.radius * theta.sin());
                if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                    return Err(Error::InvalidModel(format!(
                        "sensor at ({x:.4}, {y:.4}) on ring r = {} leaves the unit square",
                        ring.radius
                    )));
                }
                let (i, j) = ((x / h).round() as usize, (y / h).round() as usize);
                let id = node(i, j);
                if source_set.contains(&id) {
                    return Err(Error::InvalidModel(format!(
                        "sensor on ring r = {} snaps into the source subdomain",
                        ring.radius
                    )));
                }
                if !seen.insert(id) {
                    return Err(Error::InvalidModel(format!(
                        "two sensors snap to grid node ({i}, {j}); refine the grid or spread the rings"
                    )));
                }
                sensor_nodes.push(id);
            }
        }
        if sensor_nodes.is_empty() {
            return Err(Error::InvalidModel("no sensors configured".into()));
        }

        let volumes = (0..n_side * n_side)
            .map(|p| {
                let (i, j) = (p % n_side, p / n_side);
                let fx = if i == 0 || i == n_side - 1 { 0.5 } else { 1.0 };
                let fy = if j == 0 || j == n_side - 1 { 0.5 } else { 1.0 };
                fx * fy * h * h
            })
            .collect();

        let mut model = Self {
            config,
            n_side,
            h,
            source_nodes,
            sensor_nodes,
            volumes,
            solvers: Vec::new(),
        };
        for &k in &model.config.wavenumbers.clone() {
            let a = model.assemble(k);
            let adjoint = a.conj().factorize().map_err(|_| Error::SingularOperator { k })?;
            let forward = a.factorize().map_err(|_| Error::SingularOperator { k })?;
            model.solvers.push(Factorized { k, forward, adjoint });
        }
        Ok(model)
    }

    /// Assembles `S - i k B - k^2 V` on the full grid.
    fn assemble(&self, k: f64) -> BandMatrix {
        let n = self.n_side;
        let mut a = BandMatrix::zeros(n * n, n, n);
        let on_edge = |t: usize| t == 0 || t == n - 1;
        let link = |a: &mut BandMatrix, p: usize, q: usize, w: f64| {
            a.add(p, p, Complex64::new(w, 0.0));
            a.add(q, q, Complex64::new(w, 0.0));
            a.add(p, q, Complex64::new(-w, 0.0));
            a.add(q, p, Complex64::new(-w, 0.0));
        };
        for j in 0..n {
            for i in 0..n {
                let p = j * n + i;
                if i + 1 < n {
                    // horizontal face, halved when it runs along the bottom or top edge
                    let w = if on_edge(j) { 0.5 } else { 1.0 };
                    link(&mut a, p, p + 1, w);
                }
                if j + 1 < n {
                    let w = if on_edge(i) { 0.5 } else { 1.0 };
                    link(&mut a, p, p + n, w);
                }
                let mut boundary = 0.0;
                if on_edge(i) {
                    boundary += 0.5 * self.h;
                    if j > 0 && j < n - 1 {
                        boundary += 0.5 * self.h;
                    }
                }
                if on_edge(j) {
                    boundary += 0.5 * self.h;
                    if i > 0 && i < n - 1 {
                        boundary += 0.5 * self.h;
                    }
                }
                let diag = Complex64::new(-k * k * self.volumes[p], -k * boundary);
                a.add(p, p, diag);
            }
        }
        a
    }

    pub fn config(&self) -> &HelmholtzConfig {
        &self.config
    }

    pub fn grid_size(&self) -> usize {
        self.n_side
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.config.wavenumbers
    }

    pub fn n_source(&self) -> usize {
        self.source_nodes.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_nodes.len()
    }

    /// Grid index of every source dof.
    pub fn source_nodes(&self) -> &[usize] {
        &self.source_nodes
    }

    /// Grid index of every (snapped) sensor.
    pub fn sensor_nodes(&self) -> &[usize] {
        &self.sensor_nodes
    }

    /// Source dofs in integer grid coordinates, for the prior assembly.
    pub fn source_grid_nodes(&self) -> Vec<GridNode> {
        self.source_nodes
            .iter()
            .map(|&p| GridNode {
                i: p % self.n_side,
                j: p / self.n_side,
            })
            .collect()
    }

    pub fn node_coords(&self, p: usize) -> (f64, f64) {
        ((p % self.n_side) as f64 * self.h, (p / self.n_side) as f64 * self.h)
    }

    pub fn sensor_coords(&self) -> Vec<(f64, f64)> {
        self.sensor_nodes.iter().map(|&p| self.node_coords(p)).collect()
    }

    pub fn source_coords(&self) -> Vec<(f64, f64)> {
        self.source_nodes.iter().map(|&p| self.node_coords(p)).collect()
    }

    fn solver(&self, k: f64) -> Result<&Factorized> {
        self.solvers
            .iter()
            .find(|s| (s.k - k).abs() <= 1e-12 * k.abs().max(1.0))
            .ok_or(Error::UnknownWavenumber(k))
    }

    fn solver_at(&self, index: usize) -> &Factorized {
        &self.solvers[index]
    }

    /// Extends a source vector by zero and weights it by the control volumes.
    fn source_rhs(&self, f: &[f64]) -> Vec<Complex64> {
        assert_eq!(f.len(), self.n_source(), "source vector length");
        let mut rhs = vec![Complex64::new(0.0, 0.0); self.n_side * self.n_side];
        for (&p, &v) in self.source_nodes.iter().zip(f) {
            rhs[p] = Complex64::new(v * self.volumes[p], 0.0);
        }
        rhs
    }

    /// Complex field on the full grid for the source `f` given on source dofs.
    pub fn helmholtz_solve(&self, k: f64, f: &[f64]) -> Result<Vec<Complex64>> {
        let s = self.solver(k)?;
        Ok(s.forward.solve(&self.source_rhs(f)))
    }

    /// Solves the conjugated-impedance problem with point data `v` at the
    /// sensors and returns the volume-weighted real part on the source dofs.
    /// This is the Euclidean transpose of `f -> O(S_k f)` with complex data
    /// paired through `Re <z, v>`.
    pub fn helmholtz_adjoint_solve(&self, k: f64, v: &[Complex64]) -> Result<Vec<f64>> {
        let s = self.solver(k)?;
        Ok(self.adjoint_with(&s.adjoint, v))
    }

    /// Same quantity as [`HelmholtzModel::helmholtz_adjoint_solve`], computed as
    /// `conj(A^{-1} conj(O^T v))` from the forward factorization.
    pub fn adjoint_via_conjugation(&self, k: f64, v: &[Complex64]) -> Result<Vec<f64>> {
        let s = self.solver(k)?;
        let conj_v: Vec<Complex64> = v.iter().map(|z| z.conj()).collect();
        let mut rhs = self.scatter_sensors(&conj_v);
        s.forward.solve_in_place(&mut rhs);
        Ok(self
            .source_nodes
            .iter()
            .map(|&p| rhs[p].conj().re * self.volumes[p])
            .collect())
    }

    fn scatter_sensors(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.n_sensors(), "sensor data length");
        let mut rhs = vec![Complex64::new(0.0, 0.0); self.n_side * self.n_side];
        for (&p, &z) in self.sensor_nodes.iter().zip(v) {
            rhs[p] += z;
        }
        rhs
    }

    fn adjoint_with(&self, lu: &BandLu, v: &[Complex64]) -> Vec<f64> {
        let mut rhs = self.scatter_sensors(v);
        lu.solve_in_place(&mut rhs);
        self.source_nodes.iter().map(|&p| rhs[p].re * self.volumes[p]).collect()
    }

    /// Field values at the sensors.
    pub fn observe(&self, u: &[Complex64]) -> Vec<Complex64> {
        self.sensor_nodes.iter().map(|&p| u[p]).collect()
    }
}

/// `[Re O S_k1; Im O S_k1; ...; Re O S_kK; Im O S_kK]`, wavenumber-major with
/// the real block first. Output index `block * m + sensor`.
#[derive(Clone, Debug)]
pub struct HelmholtzStack {
    model: std::sync::Arc<HelmholtzModel>,
}

/// Builds the real source-to-multiple-observables map of `model`.
pub fn build_forward_stack(model: std::sync::Arc<HelmholtzModel>) -> HelmholtzStack {
    HelmholtzStack { model }
}

impl HelmholtzStack {
    pub fn model(&self) -> &HelmholtzModel {
        &self.model
    }

    /// Observations per sensor: two (real, imaginary) per wavenumber.
    pub fn m_obs(&self) -> usize {
        2 * self.model.wavenumbers().len()
    }
}

impl LinearMap for HelmholtzStack {
    fn n_in(&self) -> usize {
        self.model.n_source()
    }

    fn n_out(&self) -> usize {
        self.model.n_sensors() * self.m_obs()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = self.model.n_sensors();
        let rhs = self.model.source_rhs(x);
        let mut out = vec![0.0; self.n_out()];
        for w in 0..self.model.wavenumbers().len() {
            let u = self.model.solver_at(w).forward.solve(&rhs);
            for (s, z) in self.model.observe(&u).into_iter().enumerate() {
                out[2 * w * m + s] = z.re;
                out[(2 * w + 1) * m + s] = z.im;
            }
        }
        out
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_out(), "HelmholtzStack::apply_adjoint input length");
        let m = self.model.n_sensors();
        let mut out = vec![0.0; self.n_in()];
        for w in 0..self.model.wavenumbers().len() {
            let v: Vec<Complex64> = (0..m)
                .map(|s| Complex64::new(y[2 * w * m + s], y[(2 * w + 1) * m + s]))
                .collect();
            let part = self.model.adjoint_with(&self.model.solver_at(w).adjoint, &v);
            out.iter_mut().zip(part).for_each(|(o, p)| *o += p);
        }
        out
    }
}

/// One-dimensional analogue of the same discretization on `[0, 1]` with
/// `n_nodes` nodes and impedance conditions at both ends. `f` holds nodal
/// source values.
pub fn helmholtz_solve_1d(n_nodes: usize, k: f64, f: &[f64]) -> Result<Vec<Complex64>> {
    if n_nodes < 3 || f.len() != n_nodes {
        return Err(Error::InvalidArgument("1D solve needs n_nodes >= 3 and matching f".into()));
    }
    let h = 1.0 / (n_nodes - 1) as f64;
    let mut a = BandMatrix::zeros(n_nodes, 1, 1);
    let mut rhs = vec![Complex64::new(0.0, 0.0); n_nodes];
    for p in 0..n_nodes {
        let vol = if p == 0 || p == n_nodes - 1 { 0.5 * h } else { h };
        let mut diag = Complex64::new(-k * k * vol, 0.0);
        if p == 0 || p == n_nodes - 1 {
            diag -= Complex64::new(0.0, k);
        }
        a.add(p, p, diag);
        if p + 1 < n_nodes {
            let w = 1.0 / h;
            a.add(p, p, Complex64::new(w, 0.0));
            a.add(p + 1, p + 1, Complex64::new(w, 0.0));
            a.add(p, p + 1, Complex64::new(-w, 0.0));
            a.add(p + 1, p, Complex64::new(-w, 0.0));
        }
        rhs[p] = Complex64::new(f[p] * vol, 0.0);
    }
    let lu = a.factorize().map_err(|_| Error::SingularOperator { k })?;
    Ok(lu.solve(&rhs))
}
