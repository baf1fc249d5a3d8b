//! Multi-target tracking over trajectories.
//!
//! The library estimates sets of trajectories from cluttered point
//! measurements with missed detections. Posterior families implemented:
//! Poisson multi-Bernoulli mixture, multi-Bernoulli mixture, and the
//! restriction of the latter to existence probabilities in {0, 1}. All three
//! share a scan window over which measurement-to-track associations stay
//! unresolved; the window problem is solved by Lagrangian dual decomposition
//! over per-scan assignment subproblems.
//!
//! Beyond the filters themselves, the crate ships the evaluation metrics
//! (GOSPA and a multi-scan trajectory distance) and a simulation harness with
//! the two benchmark scenarios.

pub mod assignment;
pub mod error;
pub mod harness;
pub mod hypothesis;
pub mod mbm;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod pmbm;
pub mod smoothing;
pub mod trajectory;

pub use error::{Error, Result};
pub use harness::{run_monte_carlo, FilterKind, ScenarioConfig, ScenarioKind, Tracker};
pub use metrics::{gospa, lp_trajectory_metric, GospaResult, TrajMetricResult};
pub use models::{
    BirthComponent, BirthKind, BirthModel, GaussianState, MeasurementModel, MotionModel, MEAS_DIM,
    STATE_DIM,
};
pub use smoothing::TrajectoryEstimate;
pub use trajectory::{BernoulliTrajectory, TrajectoryGaussian, TrajectoryMixture, Variant};
