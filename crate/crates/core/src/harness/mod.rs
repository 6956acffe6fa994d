//! Scenarios, the closed-loop simulation, experiment runners and the live
//! session protocol.

pub mod latency;
pub mod live;
pub mod log;
pub mod run;
pub mod scenario;
pub mod sim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbitration::{ArbitrationError, DccdParams};
use crate::controller::{ControllerError, MpcConfig};
use crate::driver::DriverModelConfig;
use crate::geometry::GeometryError;
use crate::metrics::MetricsError;
use crate::planner::PlannerError;
use crate::rl::{RewardConfig, RlError};
use crate::vehicle::{VehicleError, VehicleParams};

pub use latency::{measure_latency, LatencyReport};
pub use live::{
    parse_client, parse_server, ClientMessage, HelloFrame, IntentDir, LiveConfig, LiveSession, ObstacleFrame, ServerMessage, StateFrame,
};
pub use log::{fill_rates, EpisodeLog, Event, EventKind, LogRow, Termination};
pub use run::{
    compare_modes, episode_stem, hmc_bars, resolve_output_dir, route2_env_factory, run_episode, run_scenario, write_hmc_bars_csv,
    write_run, write_summary_csv, HmcBar, RunConfig, RunOutput, TrainingSetup, OUT_DIR_ENV,
};
pub use scenario::{builtin_route, builtin_scenario, obstacles_at, Road, Scenario, BUILTIN_ROUTES, BUILTIN_SCENARIOS};
pub use sim::{Pending, SimEnv, Simulation, TickOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("at t = {t:.2} s: {message}")]
    Runtime { t: f64, message: String },
    #[error("episode already finished")]
    Finished,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<HarnessError> for RlError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Rl(inner) => inner,
            other => RlError::Env(other.to_string()),
        }
    }
}

/// Authority law used for an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    /// Manual driving, λ = 0.
    Md,
    Facd,
    Dccd,
    /// Learned policy.
    Hocd,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Md, Mode::Facd, Mode::Dccd, Mode::Hocd];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Md => "MD",
            Mode::Facd => "FACD",
            Mode::Dccd => "DCCD",
            Mode::Hocd => "HOCD",
        })
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MD" => Ok(Mode::Md),
            "FACD" => Ok(Mode::Facd),
            "DCCD" => Ok(Mode::Dccd),
            "HOCD" => Ok(Mode::Hocd),
            _ => Err(HarnessError::Config(format!("unknown mode {s:?} (expected MD, FACD, DCCD or HOCD)"))),
        }
    }
}

/// Everything tunable about the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub replan_period: f64,
    pub vehicle: VehicleParams,
    pub driver: DriverModelConfig,
    pub mpc: MpcConfig,
    pub reward: RewardConfig,
    pub dccd: DccdParams,
    pub speed_gain: f64,
    pub max_accel: f64,
    /// Replanning starts from the previous plan while the vehicle is this
    /// close to it laterally.
    pub stitch_tolerance: f64,
    /// An intent completes once the vehicle is this close to the lane centre.
    pub intent_tolerance: f64,
    /// Distance beyond the road edge that ends an episode.
    pub off_road_margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            replan_period: 0.1,
            vehicle: VehicleParams::default(),
            driver: DriverModelConfig::default(),
            mpc: MpcConfig::default(),
            reward: RewardConfig::default(),
            dccd: DccdParams::default(),
            speed_gain: 1.0,
            max_accel: 3.0,
            stitch_tolerance: 0.5,
            intent_tolerance: 0.2,
            off_road_margin: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.dt > 0.0 && self.dt <= 0.05) {
            return Err(HarnessError::Config(format!("dt must lie in (0, 0.05], got {}", self.dt)));
        }
        if !(self.replan_period >= self.dt) {
            return Err(HarnessError::Config("replan period must be at least one step".into()));
        }
        let pos = [self.speed_gain, self.max_accel, self.stitch_tolerance, self.intent_tolerance, self.off_road_margin];
        if pos.iter().any(|v| !(*v > 0.0)) {
            return Err(HarnessError::Config("gains, tolerances and margins must be positive".into()));
        }
        self.driver.validate().map_err(HarnessError::Config)?;
        self.mpc.validate()?;
        self.reward.validate()?;
        Ok(())
    }

    pub fn replan_every(&self) -> u64 {
        (self.replan_period / self.dt).round().max(1.0) as u64
    }
}
