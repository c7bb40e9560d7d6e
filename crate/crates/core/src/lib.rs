//! Predictive recursion (PR) for finite mixtures with known or unknown support.
//!
//! - [`kernel`]: component families `p(y|u)` evaluated in log space.
//! - [`engine`]: the PR update and full passes over a data stream.
//! - [`diagnostics`]: mean-field map, Lyapunov function, Jacobian and the
//!   KL-projection oracle that the stochastic-approximation theory is built on.
//! - [`search`]: support selection by minimizing the PR predictive objective
//!   over subsets of a grid (exhaustively or by simulated annealing).
//! - [`bench`]: synthetic data and convergence-rate experiments.

pub mod bench;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod math;
pub mod quadrature;
pub mod search;

pub use engine::{
    data_orders, mixture_log_density, pr_run, pr_run_averaged, pr_step, LogLikTable, MixingVector, PrTrace,
    SnapshotPlan, SupportSet, WeightSchedule,
};
pub use error::{PrError, Result};
pub use kernel::{Kernel, KernelFamily, ObservationSpace};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
