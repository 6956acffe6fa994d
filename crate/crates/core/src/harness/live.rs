//! Live session: JSON text messages between the simulation and one client.
//!
//! The transport only moves strings; this type owns message parsing,
//! pausing, NDRT scheduling and frame decimation.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::metrics::{compute_metrics, MetricsReport};
use crate::planner::IntentDirection;
use crate::rl::PolicyParams;

use super::log::{Event, EventKind};
use super::run::RunOutput;
use super::scenario::Scenario;
use super::sim::Simulation;
use super::{HarnessError, Mode, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentDir {
    Left,
    Right,
}

impl From<IntentDir> for IntentDirection {
    fn from(d: IntentDir) -> Self {
        match d {
            IntentDir::Left => IntentDirection::Left,
            IntentDir::Right => IntentDirection::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Steer { angle_rad: f64 },
    Intent { dir: IntentDir },
    NdrtAck { latency_ms: f64 },
    Pause,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFrame {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub e_d: f64,
    pub lambda: f64,
    pub delta_h: f64,
    pub delta_a: f64,
    pub delta: f64,
    /// Events since the previous frame.
    pub events: Vec<Event>,
    pub ndrt_on: bool,
    pub obstacles: Vec<ObstacleFrame>,
    /// Active plan, one point every 2 m.
    pub plan: Vec<Point2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleFrame {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloFrame {
    pub scenario: String,
    pub mode: Mode,
    pub lanes: usize,
    pub lane_width: f64,
    pub dt: f64,
    /// Road reference line, one point every 2 m.
    pub road: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    Hello(HelloFrame),
    State(StateFrame),
    Error { message: String },
    End { reason: String, metrics: Option<MetricsReport> },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

/// Strict parse of a client message.
pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| e.to_string())?;
    match msg {
        ClientMessage::Steer { angle_rad } if !angle_rad.is_finite() || angle_rad.abs() > std::f64::consts::PI => {
            Err(format!("angle_rad {angle_rad} outside [-pi, pi]"))
        }
        ClientMessage::NdrtAck { latency_ms } if !(latency_ms.is_finite() && latency_ms >= 0.0) => {
            Err(format!("latency_ms {latency_ms} must be non-negative"))
        }
        m => Ok(m),
    }
}

/// Strict parse of a server message.
pub fn parse_server(text: &str) -> Result<ServerMessage, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    pub max_frame_rate: f64,
    /// NDRT highlights are spaced uniformly within this range, seconds.
    pub ndrt_min_interval: f64,
    pub ndrt_max_interval: f64,
    pub seed: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self { max_frame_rate: 60.0, ndrt_min_interval: 5.0, ndrt_max_interval: 15.0, seed: 0 }
    }
}

pub struct LiveSession {
    sim: Simulation,
    policy: Option<PolicyParams>,
    queue: VecDeque<ClientMessage>,
    connected: bool,
    paused: bool,
    frame_every: u64,
    ticks: u64,
    events_sent: usize,
    ndrt_rng: ChaCha8Rng,
    ndrt_next: f64,
    ndrt_on: bool,
    range: (f64, f64),
}

impl LiveSession {
    /// The human steers from the first tick (straight ahead until a steer
    /// message arrives).
    pub fn new(scenario: &Scenario, sim_cfg: &SimConfig, mode: Mode, policy: Option<PolicyParams>, cfg: &LiveConfig) -> Result<Self, HarnessError> {
        if mode == Mode::Hocd && policy.is_none() {
            return Err(HarnessError::Config("HOCD mode requires a policy".into()));
        }
        if !(cfg.max_frame_rate > 0.0 && cfg.ndrt_min_interval > 0.0 && cfg.ndrt_max_interval >= cfg.ndrt_min_interval) {
            return Err(HarnessError::Config("frame rate and NDRT intervals must be positive and ordered".into()));
        }
        let mut sim = Simulation::new(scenario, sim_cfg, mode, None, cfg.seed)?;
        sim.set_human_steer(Some(0.0));
        let frame_every = (1.0 / (cfg.max_frame_rate * sim_cfg.dt) - 1e-9).ceil().max(1.0) as u64;
        let mut ndrt_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e64_7274);
        let range = (cfg.ndrt_min_interval, cfg.ndrt_max_interval);
        let ndrt_next = draw(&mut ndrt_rng, range);
        Ok(Self {
            sim,
            policy,
            queue: VecDeque::new(),
            connected: false,
            paused: false,
            frame_every,
            ticks: 0,
            events_sent: 0,
            ndrt_rng,
            ndrt_next,
            ndrt_on: false,
            range,
        })
    }

    pub fn hello(&self) -> ServerMessage {
        let r = &self.sim.road().reference;
        let n = (r.total_length() / 2.0).ceil() as usize;
        let road = (0..=n).map(|i| r.sample((i as f64 * 2.0).min(r.total_length())).position).collect();
        ServerMessage::Hello(HelloFrame {
            scenario: self.sim.scenario().name.clone(),
            mode: self.sim.mode(),
            lanes: self.sim.road().lanes,
            lane_width: self.sim.road().lane_width,
            dt: self.sim.config().dt,
            road,
        })
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    /// Frames are sent every this many ticks.
    pub fn frame_every(&self) -> u64 {
        self.frame_every
    }

    pub fn set_connected(&mut self, connected: bool) {
        self.connected = connected;
    }

    /// Stepping happens only with a client connected and not paused.
    pub fn is_running(&self) -> bool {
        self.connected && !self.paused && !self.sim.is_done()
    }

    pub fn is_finished(&self) -> bool {
        self.sim.is_done()
    }

    pub fn ndrt_on(&self) -> bool {
        self.ndrt_on
    }

    /// Parses and queues a client message; malformed ones produce an error
    /// frame. Pause and resume act immediately.
    pub fn handle_text(&mut self, text: &str) -> Option<ServerMessage> {
        let msg = match parse_client(text) {
            Ok(m) => m,
            Err(e) => return Some(ServerMessage::Error { message: format!("malformed message: {e}") }),
        };
        match msg {
            ClientMessage::Pause => self.paused = true,
            ClientMessage::Resume => self.paused = false,
            ClientMessage::NdrtAck { .. } if !self.ndrt_on => {
                return Some(ServerMessage::Error { message: "no NDRT indicator is highlighted".into() });
            }
            m => self.queue.push_back(m),
        }
        None
    }

    fn apply_queue(&mut self) -> Result<(), HarnessError> {
        while let Some(m) = self.queue.pop_front() {
            match m {
                ClientMessage::Steer { angle_rad } => self.sim.set_human_steer(Some(angle_rad)),
                ClientMessage::Intent { dir } => {
                    self.sim.issue_intent(dir.into(), false)?;
                }
                ClientMessage::NdrtAck { latency_ms } => {
                    if self.ndrt_on {
                        self.ndrt_on = false;
                        self.sim.add_reaction_time(latency_ms / 1000.0);
                        self.ndrt_next = self.sim.time() + draw(&mut self.ndrt_rng, self.range);
                    }
                }
                ClientMessage::Pause | ClientMessage::Resume => {}
            }
        }
        Ok(())
    }

    /// Advances one tick when running. Returns a state frame when one is
    /// due, and always on the final tick.
    pub fn tick(&mut self) -> Result<Option<ServerMessage>, HarnessError> {
        if !self.is_running() {
            return Ok(None);
        }
        self.apply_queue()?;
        if !self.ndrt_on && self.sim.time() + 1e-9 >= self.ndrt_next {
            self.ndrt_on = true;
            self.sim.record_event(EventKind::NdrtOn, String::new());
        }
        let p = self.sim.prepare()?;
        let lambda = self.sim.mode_lambda(&p, self.policy.as_ref())?;
        self.sim.apply(lambda)?;
        self.ticks += 1;
        if self.ticks % self.frame_every == 0 || self.sim.is_done() {
            return Ok(Some(self.frame()));
        }
        Ok(None)
    }

    fn frame(&mut self) -> ServerMessage {
        let log = self.sim.log();
        let r = log.rows.last().copied().unwrap_or_default();
        let events = log.events[self.events_sent..].to_vec();
        self.events_sent = log.events.len();
        ServerMessage::State(StateFrame {
            t: r.t,
            x: r.x,
            y: r.y,
            yaw: r.yaw,
            e_d: r.e_d,
            lambda: r.lambda,
            delta_h: r.delta_h,
            delta_a: r.delta_a,
            delta: r.delta,
            events,
            ndrt_on: self.ndrt_on,
            obstacles: self
                .sim
                .obstacles()
                .iter()
                .map(|o| ObstacleFrame { x: o.position.x, y: o.position.y, radius: o.radius })
                .collect(),
            plan: self.sim.plan_polyline(2.0),
        })
    }

    /// Ends the session (early if needed) and returns the log and metrics.
    pub fn finish(mut self) -> Result<RunOutput, HarnessError> {
        self.sim.stop();
        let log = self.sim.into_log();
        let metrics = compute_metrics(&log)?;
        Ok(RunOutput { log, metrics })
    }

    pub fn end_message(out: &RunOutput) -> ServerMessage {
        let reason = out.log.termination.map(|t| serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default());
        ServerMessage::End { reason: reason.unwrap_or_else(|| "stopped".into()), metrics: Some(out.metrics) }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
