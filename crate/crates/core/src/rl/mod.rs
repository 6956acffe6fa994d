//! Authority-allocation MDP pieces: observation, reward, PPO agent, training.

pub mod checkpoint;
pub mod mlp;
pub mod ppo;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use ppo::{
    actor_forward, clipped_surrogate, compute_gae, critic_forward, deterministic_action, normalize_advantages, ppo_update,
    sample_action, ActionSample, PolicyParams, PpoConfig, RolloutBuffer, RolloutSample, UpdateDiagnostics,
};
pub use train::{evaluate, train, write_learning_curve, CurvePoint, EnvRole, TrainOptions, TrainResult};

pub const OBS_DIM: usize = 6;
pub const COLLISION_PENALTY: f64 = -200.0;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid RL configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("length mismatch: {rewards} rewards, {values} values, {terminals} terminal flags")]
    LengthMismatch { rewards: usize, values: usize, terminals: usize },
    #[error("environment: {0}")]
    Env(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `[δ_a, δ_h, s_h, a_y, e_d, e_yaw]` in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub delta_a: f64,
    pub delta_h: f64,
    pub s_h: f64,
    pub a_y: f64,
    pub e_d: f64,
    pub e_yaw: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [self.delta_a, self.delta_h, self.s_h, self.a_y, self.e_d, self.e_yaw]
    }

    /// Network input with fixed per-field scales.
    pub fn normalized(&self) -> [f64; OBS_DIM] {
        [self.delta_a / 0.5, self.delta_h / 0.5, self.s_h, self.a_y / 5.0, self.e_d / 3.5, self.e_yaw / 0.5]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_tracking: f64,
    pub w_comfort: f64,
    pub w_collision: f64,
    pub w_conflict: f64,
    /// Unit factor applied to the steering discrepancy `|δ − δ_h|`
    /// (degrees per radian by default).
    pub steer_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_tracking: 1.0,
            w_comfort: 0.2,
            w_collision: 1.0,
            w_conflict: 1.0,
            steer_scale: 180.0 / std::f64::consts::PI,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let w = [self.w_tracking, self.w_comfort, self.w_collision, self.w_conflict, self.steer_scale];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(RlError::Config("reward weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Unweighted reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub tracking: f64,
    pub comfort: f64,
    pub collision: f64,
    pub conflict: f64,
}

impl RewardBreakdown {
    pub fn total(&self, cfg: &RewardConfig) -> f64 {
        cfg.w_tracking * self.tracking + cfg.w_comfort * self.comfort + cfg.w_collision * self.collision + cfg.w_conflict * self.conflict
    }
}

/// Quantities for one reward evaluation; `prev_*` are one control step old.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardInput {
    pub e_d: f64,
    pub e_yaw: f64,
    pub a_y: f64,
    pub prev_a_y: f64,
    pub lambda: f64,
    pub prev_lambda: f64,
    pub collided: bool,
    /// Executed (post-clamp) steering.
    pub delta: f64,
    pub delta_h: f64,
    pub s_h: f64,
    pub dt: f64,
}

pub fn reward_step(x: &RewardInput, cfg: &RewardConfig) -> (f64, RewardBreakdown) {
    let jerk = (x.a_y - x.prev_a_y) / x.dt;
    let lambda_rate = (x.lambda - x.prev_lambda) / x.dt;
    let b = RewardBreakdown {
        tracking: -(x.e_d.abs() + x.e_yaw.abs()),
        comfort: -(x.a_y.abs() + jerk.abs() + lambda_rate.abs()),
        collision: if x.collided { COLLISION_PENALTY } else { 0.0 },
        conflict: -(cfg.steer_scale * (x.delta - x.delta_h).abs() + (x.s_h - x.lambda).abs()),
    };
    (b.total(cfg), b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub lambda: f64,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: bool,
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    /// Episode ended by collision or leaving the road.
    pub terminal: bool,
    /// Episode cut by the time limit.
    pub truncated: bool,
}

/// Environment driven by the authority λ each control step.
pub trait Environment {
    fn reset(&mut self) -> Result<Observation, RlError>;
    fn step(&mut self, lambda: f64) -> Result<StepOutcome, RlError>;
}
