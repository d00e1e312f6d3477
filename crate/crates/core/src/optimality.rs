//! Global optimality certificate and dominant/redundant/free classification
//! for the convex problem over `{0 <= w <= 1, sum w <= m0}`.
//!
//! Indices are 0-based; `m0_lower` and `m0_upper` are 1-based positions in the
//! sorted gradient, with 0 and `m + 1` standing for empty sets.

use serde::{Deserialize, Serialize};

use crate::aoptimal::{check_feasible, LipschitzConstants};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapCase {
    /// `g_(m0) < g_(m0+1)`: the optimum is the unique vertex of the m0 best.
    StrictGap,
    /// `g_(m0) = g_(m0+1)`: free indices share the threshold gradient.
    Tie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub dominant: Vec<usize>,
    pub redundant: Vec<usize>,
    pub free: Vec<usize>,
    pub m0_lower: usize,
    pub m0_upper: usize,
    pub tie_tol: f64,
    pub case: GapCase,
    /// Indices in ascending gradient order (stable, index tiebreak).
    pub order: Vec<usize>,
}

/// Ascending order of `g`, ties broken by index.
pub fn sorted_order(g: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)));
    idx
}

/// `1e-6 * max |g_(k)|` over the `m0` smallest entries.
pub fn default_tie_tol(g: &[f64], m0: usize) -> f64 {
    let order = sorted_order(g);
    let head = if m0 == 0 { &order[..] } else { &order[..m0.min(order.len())] };
    1e-6 * head.iter().map(|&k| g[k].abs()).fold(0.0, f64::max)
}

/// Partitions sensors by the ordering of the gradient at a candidate optimum.
pub fn classify(grad: &[f64], m0: usize, tie_tol: Option<f64>) -> Result<Classification> {
    let m = grad.len();
    if m0 > m {
        return Err(Error::InvalidArgument(format!("m0 = {m0} exceeds m = {m}")));
    }
    if let Some(k) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("gradient entry {k} is not finite")));
    }
    let tol = tie_tol.unwrap_or_else(|| default_tie_tol(grad, m0));
    let order = sorted_order(grad);
    let sorted = |pos: usize| grad[order[pos]];
    let sorted_set = |range: std::ops::Range<usize>| {
        let mut v: Vec<usize> = order[range].to_vec();
        v.sort_unstable();
        v
    };
    let strict = m0 == 0 || m0 == m || sorted(m0) > sorted(m0 - 1) + tol;
    if strict {
        return Ok(Classification {
            dominant: sorted_set(0..m0),
            redundant: sorted_set(m0..m),
            free: Vec::new(),
            m0_lower: m0,
            m0_upper: m0 + 1,
            tie_tol: tol,
            case: GapCase::StrictGap,
            order,
        });
    }
    let c = sorted(m0 - 1);
    let lower = (0..m).take_while(|&p| sorted(p) < c - tol).count();
    let upper = (m0..m).find(|&p| sorted(p) > c + tol).map_or(m + 1, |p| p + 1);
    let upper_pos = (upper - 1).min(m);
    Ok(Classification {
        dominant: sorted_set(0..lower),
        redundant: sorted_set(upper_pos..m),
        free: sorted_set(lower..upper_pos),
        m0_lower: lower,
        m0_upper: upper,
        tie_tol: tol,
        case: GapCase::Tie,
        order,
    })
}

/// Vertex of `{0 <= s <= 1, sum s <= m0}` minimizing `<grad, s>`.
pub fn lmo(grad: &[f64], m0: usize) -> Vec<f64> {
    let mut s = vec![0.0; grad.len()];
    for &k in sorted_order(grad).iter().take(m0) {
        if grad[k] < 0.0 {
            s[k] = 1.0;
        }
    }
    s
}

/// Frank-Wolfe gap `<grad, w - lmo(grad)>`; by convexity an upper bound on
/// `J(w) - min J`.
pub fn fw_gap(w: &[f64], grad: &[f64], m0: usize) -> f64 {
    let s = lmo(grad, m0);
    w.iter().zip(&s).zip(grad).map(|((a, b), g)| g * (a - b)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub indices: Vec<usize>,
}

pub const DOMINANT_NOT_SATURATED: &str = "(a) dominant not saturated";
pub const REDUNDANT_NOT_ZERO: &str = "(b) redundant not zero";
pub const BUDGET_NOT_EXHAUSTED: &str = "(c) budget not exhausted";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub is_global: bool,
    pub fw_gap: f64,
    pub sum_w: f64,
    pub violations: Vec<Violation>,
    pub classification: Classification,
    /// False when some gradient entry is non-negative, i.e. the monotonicity
    /// assumption behind the certificate fails at this design.
    pub monotone: bool,
}

/// Checks the optimality conditions at `w` with weights compared at `tol`.
pub fn verify_global(w: &[f64], grad: &[f64], m0: usize, tol: f64, tie_tol: Option<f64>) -> Result<OptimalityReport> {
    if w.len() != grad.len() {
        return Err(Error::Dimension {
            context: "design vs gradient",
            expected: grad.len(),
            actual: w.len(),
        });
    }
    check_feasible(w, m0, tol)?;
    let classification = classify(grad, m0, tie_tol)?;
    let sum_w: f64 = w.iter().sum();
    let mut violations = Vec::new();
    let bad: Vec<usize> = classification.dominant.iter().copied().filter(|&k| w[k] < 1.0 - tol).collect();
    if !bad.is_empty() {
        violations.push(Violation {
            condition: DOMINANT_NOT_SATURATED.into(),
            indices: bad,
        });
    }
    let bad: Vec<usize> = classification.redundant.iter().copied().filter(|&k| w[k] > tol).collect();
    if !bad.is_empty() {
        violations.push(Violation {
            condition: REDUNDANT_NOT_ZERO.into(),
            indices: bad,
        });
    }
    if classification.case == GapCase::Tie && (sum_w - m0 as f64).abs() > tol {
        violations.push(Violation {
            condition: BUDGET_NOT_EXHAUSTED.into(),
            indices: classification.free.clone(),
        });
    }
    Ok(OptimalityReport {
        is_global: violations.is_empty(),
        fw_gap: fw_gap(w, grad, m0),
        sum_w,
        violations,
        classification,
        monotone: grad.iter().all(|&g| g < 0.0),
    })
}

/// Indices fixed before solving, from gradients at auxiliary points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialClassification {
    pub dominant: Vec<usize>,
    pub redundant: Vec<usize>,
}

impl PartialClassification {
    pub fn is_empty(&self) -> bool {
        self.dominant.is_empty() && self.redundant.is_empty()
    }
}

/// A-priori classification from gradients at `0`, at `1` and optionally at a
/// feasible `w`, each with its own Lipschitz radius (`L0`, `L1`, `L2`).
pub fn apriori_classify(
    grad_at_0: &[f64],
    grad_at_1: &[f64],
    grad_at_w: Option<&[f64]>,
    constants: &LipschitzConstants,
    m0: usize,
) -> Result<PartialClassification> {
    let m = grad_at_0.len();
    if grad_at_1.len() != m || grad_at_w.is_some_and(|g| g.len() != m) {
        return Err(Error::InvalidArgument("gradients must share one length".into()));
    }
    if m0 > m {
        return Err(Error::InvalidArgument(format!("m0 = {m0} exceeds m = {m}")));
    }
    let mut probes: Vec<(&[f64], f64)> = vec![(grad_at_0, constants.l0), (grad_at_1, constants.l1)];
    if let Some(g) = grad_at_w {
        probes.push((g, constants.l2));
    }
    let mut out = PartialClassification::default();
    for k in 0..m {
        let dominant = probes.iter().any(|(g, l)| {
            let beaten = (0..m).filter(|&j| g[k] + 2.0 * l < g[j]).count();
            beaten >= m - m0
        });
        let redundant = probes.iter().any(|(g, l)| {
            let beating = (0..m).filter(|&j| g[k] - 2.0 * l > g[j]).count();
            beating >= m0
        });
        // both can only hold in degenerate budgets (m0 = 0 or m0 = m), where
        // the budget itself decides
        if dominant && (!redundant || m0 == m) {
            out.dominant.push(k);
        } else if redundant {
            out.redundant.push(k);
        }
    }
    Ok(out)
}
