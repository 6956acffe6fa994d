//! Human-oriented cooperative driving: intention-aware trajectory planning,
//! learned steering-authority allocation and a closed-loop shared-control
//! simulator.
//!
//! The most used types are re-exported at the crate root; everything else
//! lives in its module.

pub mod geometry;
pub mod planner;
pub mod vehicle;
pub mod driver;
pub mod controller;
pub mod arbitration;
pub mod rl;
pub mod metrics;
pub mod harness;

pub use arbitration::{blend, DccdParams};
pub use controller::{MpcConfig, MpcController};
pub use driver::{DriverModel, DriverModelConfig, DriverStateKind};
pub use geometry::{CartesianPose, FrenetState, Point2, ReferenceLine};
pub use harness::{EpisodeLog, HarnessError, Mode, RunConfig, Scenario, SimConfig, Simulation};
pub use metrics::{compute_metrics, MetricsReport};
pub use planner::{CandidateTrajectory, DriverIntent, IntentDirection, ObstacleView, PlannerConfig};
pub use rl::{Observation, PolicyParams, PpoConfig, RewardConfig};
pub use vehicle::{VehicleParams, VehicleState};
