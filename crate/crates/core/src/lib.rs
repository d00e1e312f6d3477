//! Frozen low-rank A-optimal sensor placement.
//!
//! The prior-preconditioned operator is factored once as `F^T = QR`; every
//! objective, gradient and Hessian evaluation afterwards costs only dense
//! `l x (m * m_obs)` algebra. On top of that sit the capped-simplex solver,
//! the dominant/redundant certificate and the p-continuation binarization.

pub mod aoptimal;
pub mod error;
pub mod exec;
pub mod io;
pub mod lowrank;
pub mod model;
pub mod optimality;
pub mod oracle;
pub mod pipeline;
pub mod solve;

pub use aoptimal::{Design, LowRankObjective, Workspace};
pub use error::{Error, Result};
pub use exec::Execution;
pub use lowrank::QRModel;
pub use pipeline::{build_problem, ExperimentConfig, Problem};
