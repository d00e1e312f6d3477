//! Capped-simplex projection, the convex solve, the p-step and the
//! p-continuation binarization.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::aoptimal::{Design, LowRankObjective, DENSE_HESSIAN_LIMIT};
use crate::error::{Error, Result};
use crate::optimality::{fw_gap, verify_global, Classification, OptimalityReport};

/// Euclidean projection onto `{0 <= z <= 1, sum z <= m0}` with `z = 1` on
/// `fixed_ones` and `z = 0` on `fixed_zeros`.
///
/// The free block is `clip(v - tau, 0, 1)` with the smallest `tau >= 0`
/// meeting the budget; `tau` is found by sweeping the sorted breakpoints
/// `v_i - 1` and `v_i` of the piecewise-linear budget function.
pub fn project_capped_simplex(v: &[f64], m0: usize, fixed_ones: &[usize], fixed_zeros: &[usize]) -> Result<Vec<f64>> {
    let m = v.len();
    let mut status = vec![0u8; m];
    for &k in fixed_ones {
        if k >= m {
            return Err(Error::InvalidArgument(format!("fixed index {k} out of range")));
        }
        status[k] = 1;
    }
    for &k in fixed_zeros {
        if k >= m {
            return Err(Error::InvalidArgument(format!("fixed index {k} out of range")));
        }
        if status[k] == 1 {
            return Err(Error::InfeasibleDesign(format!("index {k} fixed to both 0 and 1")));
        }
        status[k] = 2;
    }
    let ones = status.iter().filter(|&&s| s == 1).count();
    if ones > m0 {
        return Err(Error::InfeasibleDesign(format!("{ones} indices fixed to one exceed budget m0 = {m0}")));
    }
    let budget = (m0 - ones) as f64;
    let free: Vec<usize> = (0..m).filter(|&k| status[k] == 0).collect();
    let vf: Vec<f64> = free.iter().map(|&k| v[k]).collect();
    let tau = capped_threshold(&vf, budget);
    let mut z = vec![0.0; m];
    for (k, s) in status.iter().enumerate() {
        if *s == 1 {
            z[k] = 1.0;
        }
    }
    for (&k, &x) in free.iter().zip(&vf) {
        z[k] = (x - tau).clamp(0.0, 1.0);
    }
    Ok(z)
}

/// Smallest `tau >= 0` with `sum clip(v - tau, 0, 1) <= budget`.
fn capped_threshold(v: &[f64], budget: f64) -> f64 {
    let mass = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, 1.0)).sum::<f64>();
    let mut s = mass(0.0);
    if s <= budget {
        return 0.0;
    }
    // slope of the budget function just right of tau = 0
    let mut slope = -(v.iter().filter(|&&x| x - 1.0 <= 0.0 && x > 0.0).count() as f64);
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * v.len());
    for &x in v {
        if x - 1.0 > 0.0 {
            events.push((x - 1.0, -1.0));
        }
        if x > 0.0 {
            events.push((x, 1.0));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut tau = 0.0;
    for (t, delta) in events {
        if t > tau {
            let next = s + slope * (t - tau);
            if next <= budget && slope < 0.0 {
                return tau + (s - budget) / (-slope);
            }
            s = next;
            tau = t;
        }
        slope += delta;
    }
    tau
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// Barzilai-Borwein trial step, then monotone Armijo backtracking along
    /// the projection arc.
    Armijo { c1: f64, shrink: f64, max_backtracks: usize },
    Fixed { step: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Armijo {
            c1: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Convex solve stops at `fw_gap <= gap_tol`; the p-step at a projected
    /// gradient norm below it.
    pub gap_tol: f64,
    pub step_rule: StepRule,
    pub projection_tol: f64,
    /// Weights within this distance of 0 or 1 count as binary.
    pub binary_threshold: f64,
    /// Continuation gives up below this power.
    pub p_floor: f64,
    /// Tolerance for weight comparisons in the optimality check.
    pub verify_tol: f64,
    /// Iteration cap for each inner p-step.
    pub p_step_max_iters: usize,
    /// Negative-curvature steps allowed per p-step once the projected
    /// gradient has converged; 0 stops at first-order points, saddles included.
    pub saddle_escapes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            gap_tol: 1e-10,
            step_rule: StepRule::default(),
            projection_tol: 1e-12,
            binary_threshold: 1e-3,
            p_floor: 1e-3,
            verify_tol: 1e-6,
            p_step_max_iters: 2_000,
            saddle_escapes: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) || self.max_iters == 0 || self.p_step_max_iters == 0 {
            return Err(Error::InvalidArgument("solver needs gap_tol > 0 and positive iteration caps".into()));
        }
        if !(self.binary_threshold > 0.0 && self.binary_threshold < 0.5) {
            return Err(Error::InvalidArgument("binary_threshold must lie in (0, 0.5)".into()));
        }
        if !(self.p_floor > 0.0 && self.p_floor < 1.0) {
            return Err(Error::InvalidArgument("p_floor must lie in (0, 1)".into()));
        }
        match self.step_rule {
            StepRule::Armijo { c1, shrink, .. } if !(c1 > 0.0 && c1 < 1.0 && shrink > 0.0 && shrink < 1.0) => {
                Err(Error::InvalidArgument("Armijo parameters must lie in (0, 1)".into()))
            }
            StepRule::Fixed { step } if !(step > 0.0) => Err(Error::InvalidArgument("fixed step must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// One accepted iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    /// FW gap (convex solve) or projected-gradient norm (p-step).
    pub stationarity: f64,
    pub step: f64,
    pub p: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stop {
    FwGap,
    ProjectedGradient,
}

struct PgOutcome {
    z: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    stationarity: f64,
    converged: bool,
    trace: Vec<IterRecord>,
}

const ROUNDOFF: f64 = 1e-14;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Face<'a> {
    m0: usize,
    ones: &'a [usize],
    zeros: &'a [usize],
}

impl Face<'_> {
    fn project(&self, v: &[f64]) -> Vec<f64> {
        project_capped_simplex(v, self.m0, self.ones, self.zeros).expect("fixed sets validated before the solve")
    }

    fn stationarity(&self, rule: Stop, z: &[f64], g: &[f64]) -> f64 {
        match rule {
            Stop::FwGap => fw_gap(z, g, self.m0).max(0.0),
            Stop::ProjectedGradient => {
                let trial: Vec<f64> = z.iter().zip(g).map(|(a, b)| a - b).collect();
                let p = self.project(&trial);
                p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
        }
    }
}

fn projected_gradient<F>(
    eval: F,
    z0: Vec<f64>,
    face: &Face<'_>,
    cfg: &SolverConfig,
    max_iters: usize,
    rule: Stop,
    p: f64,
) -> PgOutcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut z = face.project(&z0);
    let (mut f, mut g) = eval(&z);
    let mut stat = face.stationarity(rule, &z, &g);
    let mut trace = vec![IterRecord {
        iter: 0,
        objective: f,
        stationarity: stat,
        step: 0.0,
        p,
    }];
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut step = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
    let mut converged = stat <= cfg.gap_tol;
    let mut iter = 0;
    while !converged && iter < max_iters {
        iter += 1;
        let (mut trial_step, c1, shrink, max_bt) = match cfg.step_rule {
            StepRule::Armijo {
                c1,
                shrink,
                max_backtracks,
            } => (step, c1, shrink, max_backtracks),
            StepRule::Fixed { step } => (step, 0.0, 1.0, 0),
        };
        let mut accepted = None;
        for bt in 0..=max_bt {
            let trial: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - trial_step * b).collect();
            let zn = face.project(&trial);
            let d: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &d);
            if d.iter().all(|&x| x == 0.0) {
                break;
            }
            let (fn_, gn) = eval(&zn);
            let fixed = matches!(cfg.step_rule, StepRule::Fixed { .. });
            // once J no longer resolves the decrease, accept round-off level changes
            let flat = fn_ - f <= ROUNDOFF * f.abs().max(f64::MIN_POSITIVE);
            if fixed || fn_ <= f + c1 * decrease || flat {
                accepted = Some((zn, fn_, gn, d));
                break;
            }
            if bt < max_bt {
                trial_step *= shrink;
            }
        }
        let Some((zn, fn_, gn, s)) = accepted else {
            // no descent left at working precision
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (trial_step * 2.0).min(1e12) };
        z = zn;
        f = fn_;
        g = gn;
        stat = face.stationarity(rule, &z, &g);
        converged = stat <= cfg.gap_tol;
        trace.push(IterRecord {
            iter,
            objective: f,
            stationarity: stat,
            step: trial_step,
            p,
        });
    }
    PgOutcome {
        z,
        value: f,
        grad: g,
        stationarity: stat,
        converged,
        trace,
    }
}

/// Result of [`solve_convex`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexSolution {
    pub design: Design,
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub report: OptimalityReport,
    /// False when `max_iters` ran out (or no descent was possible) before the
    /// gap dropped below `gap_tol`.
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<IterRecord>,
}

/// Projected-gradient minimization of `J` over the capped simplex, started
/// from `(m0/m) 1`, stopped on the Frank-Wolfe gap.
pub fn solve_convex(obj: &LowRankObjective, m0: usize, config: &SolverConfig) -> Result<ConvexSolution> {
    config.validate()?;
    let m = obj.m();
    if m0 > m {
        return Err(Error::InvalidArgument(format!("m0 = {m0} exceeds m = {m}")));
    }
    let eval = |w: &[f64]| {
        let ws = obj.workspace(w);
        (ws.objective(), ws.gradient())
    };
    let start = if m == 0 { Vec::new() } else { vec![m0 as f64 / m as f64; m] };
    let face = Face {
        m0,
        ones: &[],
        zeros: &[],
    };
    let out = projected_gradient(eval, start, &face, config, config.max_iters, Stop::FwGap, 1.0);
    if !out.converged {
        log::warn!(
            "convex solve stopped after {} iterations with gap {:.3e} > {:.3e}",
            out.trace.len() - 1,
            out.stationarity,
            config.gap_tol
        );
    }
    let mut report = verify_global(&out.z, &out.grad, m0, config.verify_tol, None)?;
    if !out.converged {
        report.is_global = false;
    }
    Ok(ConvexSolution {
        iterations: out.trace.len() - 1,
        design: Design::new(out.z, m0),
        objective: out.value,
        gradient: out.grad,
        report,
        converged: out.converged,
        trace: out.trace,
    })
}

/// `J^p(z) = J(z^{1/p})` and its gradient `(1/p) grad J(z^{1/p}) z^{1/p - 1}`.
pub fn p_objective(obj: &LowRankObjective, z: &[f64], p: f64) -> (f64, Vec<f64>) {
    let w: Vec<f64> = z.iter().map(|&v| v.max(0.0).powf(1.0 / p)).collect();
    let ws = obj.workspace(&w);
    let g = ws.gradient();
    let grad = g
        .iter()
        .zip(z)
        .map(|(gk, &zk)| if zk > 0.0 { gk * zk.powf(1.0 / p - 1.0) / p } else { 0.0 })
        .collect();
    (ws.objective(), grad)
}

/// Steps off a first-order point of `J^p` along the most negative curvature
/// direction of its Hessian restricted to the free face, or `None` when that
/// restricted Hessian is numerically positive semidefinite or no step lowers
/// the objective.
///
/// With `w = z^{1/p}`: `hess J^p = D H D + diag(g * phi'')` where
/// `D = diag(phi')`, `phi' = z^{1/p-1}/p`, `phi'' = (1/p)(1/p-1) z^{1/p-2}`.
fn escape_saddle(obj: &LowRankObjective, face: &Face<'_>, z: &[f64], value: f64, p: f64) -> Option<Vec<f64>> {
    const INTERIOR: f64 = 1e-9;
    let fixed: BTreeSet<usize> = face.ones.iter().chain(face.zeros).copied().collect();
    let free: Vec<usize> = (0..z.len())
        .filter(|k| !fixed.contains(k) && z[*k] > INTERIOR && z[*k] < 1.0 - INTERIOR)
        .collect();
    if free.len() < 2 {
        return None;
    }
    let w: Vec<f64> = z.iter().map(|&v| v.max(0.0).powf(1.0 / p)).collect();
    let mut ws = obj.workspace(&w);
    let g = ws.gradient();
    let h = ws.hessian(DENSE_HESSIAN_LIMIT).ok()?;
    let k = free.len();
    let d1 = |i: usize| z[i].powf(1.0 / p - 1.0) / p;
    let mut hf = DMatrix::from_fn(k, k, |a, b| d1(free[a]) * h[(free[a], free[b])] * d1(free[b]));
    for (a, &i) in free.iter().enumerate() {
        hf[(a, a)] += g[i] * (1.0 / p) * (1.0 / p - 1.0) * z[i].powf(1.0 / p - 2.0);
    }
    let budget_active = z.iter().sum::<f64>() >= face.m0 as f64 - INTERIOR;
    if budget_active {
        // restrict to sum d = 0
        let c = DMatrix::from_element(k, k, 1.0 / k as f64);
        let proj = DMatrix::identity(k, k) - c;
        hf = &proj * hf * &proj;
    }
    let eig = SymmetricEigen::new((&hf + hf.transpose()) * 0.5);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (idx, lmin) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if !(lmin < -1e-8 * scale) {
        return None;
    }
    let v = eig.eigenvectors.column(idx);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for sign in [1.0, -1.0] {
        let mut t = 1.0;
        for _ in 0..40 {
            let mut trial = z.to_vec();
            for (a, &i) in free.iter().enumerate() {
                trial[i] += sign * t * v[a];
            }
            let zn = face.project(&trial);
            let (fv, _) = p_objective(obj, &zn, p);
            if fv < value - ROUNDOFF * value.abs() {
                if best.as_ref().is_none_or(|b| fv < b.0) {
                    best = Some((fv, zn));
                }
                break;
            }
            t *= 0.5;
        }
    }
    best.map(|b| b.1)
}

/// Result of [`solve_p_step`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PStepResult {
    /// `w = z^{1/p}`.
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub objective: f64,
    pub stationarity: f64,
    pub converged: bool,
    pub trace: Vec<IterRecord>,
}

/// Local minimization of `J^p` over `{0 <= z <= 1, sum z <= m0}` with the
/// fixed sets held.
pub fn solve_p_step(
    obj: &LowRankObjective,
    m0: usize,
    p: f64,
    z_init: &[f64],
    fixed_ones: &[usize],
    fixed_zeros: &[usize],
    config: &SolverConfig,
) -> Result<PStepResult> {
    config.validate()?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {p}")));
    }
    if z_init.len() != obj.m() {
        return Err(Error::Dimension {
            context: "p-step start",
            expected: obj.m(),
            actual: z_init.len(),
        });
    }
    // validates the fixed sets
    project_capped_simplex(z_init, m0, fixed_ones, fixed_zeros)?;
    let face = Face {
        m0,
        ones: fixed_ones,
        zeros: fixed_zeros,
    };
    let eval = |z: &[f64]| p_objective(obj, z, p);
    let mut out = projected_gradient(
        eval,
        z_init.to_vec(),
        &face,
        config,
        config.p_step_max_iters,
        Stop::ProjectedGradient,
        p,
    );
    let escapes = if obj.m() <= DENSE_HESSIAN_LIMIT { config.saddle_escapes } else { 0 };
    for _ in 0..escapes {
        let Some(z) = escape_saddle(obj, &face, &out.z, out.value, p) else {
            break;
        };
        let mut next = projected_gradient(
            eval,
            z,
            &face,
            config,
            config.p_step_max_iters,
            Stop::ProjectedGradient,
            p,
        );
        let offset = out.trace.len();
        for r in &mut next.trace {
            r.iter += offset;
        }
        out.trace.append(&mut next.trace);
        next.trace = std::mem::take(&mut out.trace);
        out = next;
    }
    Ok(PStepResult {
        w: out.z.iter().map(|&v| v.powf(1.0 / p)).collect(),
        z: out.z,
        objective: out.value,
        stationarity: out.stationarity,
        converged: out.converged,
        trace: out.trace,
    })
}

/// One outer continuation step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationStep {
    pub outer: usize,
    pub p: f64,
    pub w: Vec<f64>,
    pub objective: f64,
    /// Weights within `binary_threshold` of 0 or 1.
    pub n_binary: usize,
    pub inner_iterations: usize,
}

/// Result of [`p_continuation`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationResult {
    /// Exactly binary, feasible, with `sum w = min(m0, m)`.
    pub design: Design,
    pub objective: f64,
    /// Iterate before rounding.
    pub last_iterate: Vec<f64>,
    /// True when every weight reached `binary_threshold` before `p_floor`.
    pub binary_converged: bool,
    /// Indices added greedily after rounding left budget unused.
    pub filled: Vec<usize>,
    pub fixed_ones: Vec<usize>,
    pub fixed_zeros: Vec<usize>,
    pub convex: ConvexSolution,
    pub classification: Classification,
    pub steps: Vec<ContinuationStep>,
    /// Inner iterations of every p-step, concatenated.
    pub inner_trace: Vec<IterRecord>,
}

fn count_binary(w: &[f64], thr: f64) -> usize {
    w.iter().filter(|&&v| v <= thr || v >= 1.0 - thr).count()
}

/// Binarizes the convex optimum by solving a sequence of p-relaxed problems
/// with `p <- (1 - delta) p`, keeping dominant and redundant indices fixed.
pub fn p_continuation(obj: &LowRankObjective, m0: usize, delta: f64, config: &SolverConfig) -> Result<ContinuationResult> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let convex = solve_convex(obj, m0, config)?;
    let classification = convex.report.classification.clone();
    let fixed_ones = classification.dominant.clone();
    let fixed_zeros = classification.redundant.clone();
    let mut w = convex.design.w.clone();
    for &k in &fixed_ones {
        w[k] = 1.0;
    }
    for &k in &fixed_zeros {
        w[k] = 0.0;
    }
    let thr = config.binary_threshold;
    let mut steps = vec![ContinuationStep {
        outer: 0,
        p: 1.0,
        objective: obj.objective(&w),
        n_binary: count_binary(&w, thr),
        w: w.clone(),
        inner_iterations: convex.iterations,
    }];
    let mut inner_trace = Vec::new();
    let mut p = 1.0;
    let mut binary_converged = count_binary(&w, thr) == w.len();
    let mut outer = 0;
    while !binary_converged {
        p *= 1.0 - delta;
        if p < config.p_floor {
            log::warn!("p-continuation reached p = {p:.3e} without a binary design");
            break;
        }
        outer += 1;
        // warm start z = w^p, projected since sum w^p can exceed m0 as p drops
        let z0: Vec<f64> = w.iter().map(|&v| if v > 0.0 { v.powf(p) } else { 0.0 }).collect();
        let z0 = project_capped_simplex(&z0, m0, &fixed_ones, &fixed_zeros)?;
        let step = solve_p_step(obj, m0, p, &z0, &fixed_ones, &fixed_zeros, config)?;
        w = step.w;
        let n_binary = count_binary(&w, thr);
        steps.push(ContinuationStep {
            outer,
            p,
            objective: step.objective,
            n_binary,
            w: w.clone(),
            inner_iterations: step.trace.len() - 1,
        });
        inner_trace.extend(step.trace);
        binary_converged = n_binary == w.len();
    }
    let (design, filled) = round_and_fill(obj, &w, m0);
    let objective = obj.objective(&design.w);
    Ok(ContinuationResult {
        design,
        objective,
        last_iterate: w,
        binary_converged,
        filled,
        fixed_ones,
        fixed_zeros,
        convex,
        classification,
        steps,
        inner_trace,
    })
}

/// Rounds to {0, 1}, trims to the budget by largest gradient if needed, then
/// fills unused budget greedily with the most negative gradient entries.
fn round_and_fill(obj: &LowRankObjective, w: &[f64], m0: usize) -> (Design, Vec<usize>) {
    let mut b: Vec<f64> = w.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    let target = m0.min(w.len());
    let mut on: BTreeSet<usize> = (0..b.len()).filter(|&k| b[k] == 1.0).collect();
    while on.len() > target {
        let g = obj.gradient(&b);
        let worst = *on
            .iter()
            .max_by(|&&a, &&c| g[a].total_cmp(&g[c]).then(c.cmp(&a)))
            .expect("non-empty");
        on.remove(&worst);
        b[worst] = 0.0;
    }
    let mut filled = Vec::new();
    while on.len() < target {
        let g = obj.gradient(&b);
        let best = (0..b.len())
            .filter(|k| !on.contains(k))
            .min_by(|&a, &c| g[a].total_cmp(&g[c]).then(a.cmp(&c)))
            .expect("budget below m");
        on.insert(best);
        b[best] = 1.0;
        filled.push(best);
    }
    (Design::new(b, m0), filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_objective(l: usize, m: usize, seed: u64) -> LowRankObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = DMatrix::from_fn(l, m, |_, _| rng.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(l, l, |_, _| rng.random::<f64>() - 0.5);
        let chat = &b * b.transpose() + DMatrix::identity(l, l) * 0.05;
        let tr = chat.trace() * 1.2;
        LowRankObjective::from_parts(r * 3.0, chat, tr, 1).unwrap()
    }

    #[test]
    fn feasible_point_is_unchanged() {
        let v = [0.2, 0.5, 0.0, 1.0];
        assert_eq!(project_capped_simplex(&v, 2, &[], &[]).unwrap(), v.to_vec());
    }

    #[test]
    fn symmetric_point_projects_to_symmetric_point() {
        let z = project_capped_simplex(&[2.0, 2.0, 2.0], 2, &[], &[]).unwrap();
        for v in z {
            assert!((v - 2.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn fixed_sets_are_honoured_and_checked() {
        let z = project_capped_simplex(&[0.9, 0.9, 0.9, 0.9], 2, &[3], &[0]).unwrap();
        assert_eq!((z[0], z[3]), (0.0, 1.0));
        assert!((z[1] + z[2] - 1.0).abs() < 1e-14);
        assert!(project_capped_simplex(&[0.0; 3], 1, &[0, 1], &[]).is_err());
        assert!(project_capped_simplex(&[0.0; 3], 1, &[0], &[0]).is_err());
    }

    #[test]
    fn convex_solve_certifies() {
        let obj = random_objective(6, 15, 3);
        let sol = solve_convex(&obj, 4, &SolverConfig::default()).unwrap();
        assert!(sol.converged, "gap {}", sol.report.fw_gap);
        assert!(sol.report.is_global, "{:?}", sol.report.violations);
        assert!((sol.design.sum() - 4.0).abs() < 1e-8);
        let objs: Vec<f64> = sol.trace.iter().map(|t| t.objective).collect();
        assert!(objs.windows(2).all(|w| w[1] <= w[0] + 1e-14 * w[0].abs()));
    }

    #[test]
    fn p_gradient_matches_finite_differences() {
        let obj = random_objective(5, 8, 4);
        let p = 0.6;
        let z: Vec<f64> = (0..8).map(|k| 0.2 + 0.07 * k as f64).collect();
        let (_, g) = p_objective(&obj, &z, p);
        let h = 1e-5;
        for k in 0..8 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let fd = (p_objective(&obj, &zp, p).0 - p_objective(&obj, &zm, p).0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs(), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn zeros_are_absorbing() {
        let obj = random_objective(5, 8, 5);
        let z0 = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let r = solve_p_step(&obj, 3, 0.5, &z0, &[], &[], &SolverConfig::default()).unwrap();
        for k in [1, 3, 4, 5, 6, 7] {
            assert_eq!(r.w[k], 0.0);
        }
    }

    #[test]
    fn p_near_one_barely_moves_convex_optimum() {
        let obj = random_objective(6, 10, 6);
        let cfg = SolverConfig::default();
        let sol = solve_convex(&obj, 3, &cfg).unwrap();
        let p = 0.999;
        let z0: Vec<f64> = sol.design.w.iter().map(|v| v.powf(p)).collect();
        let z0 = project_capped_simplex(&z0, 3, &[], &[]).unwrap();
        let single = SolverConfig {
            p_step_max_iters: 1,
            ..cfg
        };
        let r = solve_p_step(&obj, 3, p, &z0, &[], &[], &single).unwrap();
        let moved: f64 = r.w.iter().zip(&sol.design.w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(moved <= 1e-2, "moved {moved}");
    }

    #[test]
    fn full_budget_selects_everything() {
        let obj = random_objective(4, 6, 7);
        let r = p_continuation(&obj, 6, 0.05, &SolverConfig::default()).unwrap();
        assert_eq!(r.design.w, vec![1.0; 6]);
        assert_eq!(r.steps.len(), 1);
    }

    #[test]
    fn continuation_returns_feasible_binary_design() {
        let obj = random_objective(5, 12, 8);
        let r = p_continuation(&obj, 3, 0.05, &SolverConfig::default()).unwrap();
        assert!(r.design.w.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(r.design.sum(), 3.0);
        assert!(r.objective >= r.convex.objective - 1e-9);
        for s in &r.steps {
            let total: f64 = s.w.iter().sum();
            assert!(total <= 3.0 + 1e-9);
            for &k in &r.fixed_ones {
                assert_eq!(s.w[k], 1.0);
            }
            for &k in &r.fixed_zeros {
                assert_eq!(s.w[k], 0.0);
            }
        }
    }

    #[test]
    fn p_step_leaves_a_symmetric_saddle() {
        // two identical sensors and one slot: the even split is stationary by
        // symmetry, and for small p a saddle of J^p on the budget face
        let r = DMatrix::from_column_slice(1, 2, &[2.0, 2.0]);
        let obj = LowRankObjective::from_parts(r, DMatrix::identity(1, 1), 2.0, 1).unwrap();
        let mut cfg = SolverConfig::default();
        let p = 0.3;
        let stuck = {
            cfg.saddle_escapes = 0;
            solve_p_step(&obj, 1, p, &[0.5, 0.5], &[], &[], &cfg).unwrap()
        };
        assert!((stuck.z[0] - 0.5).abs() < 1e-12);
        cfg.saddle_escapes = 5;
        let moved = solve_p_step(&obj, 1, p, &[0.5, 0.5], &[], &[], &cfg).unwrap();
        assert!(moved.objective < stuck.objective);
        let mut z = moved.z.clone();
        z.sort_by(f64::total_cmp);
        assert!(z[0] < 1e-9 && (z[1] - 1.0).abs() < 1e-9, "{z:?}");
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let obj = random_objective(3, 4, 9);
        let cfg = SolverConfig::default();
        assert!(p_continuation(&obj, 2, 1.5, &cfg).is_err());
        assert!(solve_p_step(&obj, 2, 1.0, &[0.5; 4], &[], &[], &cfg).is_err());
        assert!(solve_convex(&obj, 5, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(v in proptest::collection::vec(-2.0f64..3.0, 1..30), frac in 0.0f64..1.0) {
            let m0 = ((v.len() as f64) * frac) as usize;
            let z = project_capped_simplex(&v, m0, &[], &[]).unwrap();
            prop_assert!(z.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!(z.iter().sum::<f64>() <= m0 as f64 + 1e-9);
            let again = project_capped_simplex(&z, m0, &[], &[]).unwrap();
            for (a, b) in again.iter().zip(&z) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
