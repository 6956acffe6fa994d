//! The 10 ms closed loop: schedule, planning, driver, MPC, authority, blend,
//! dynamics, reward, log.

use std::time::{Duration, Instant};

use crate::arbitration::{blend, dccd_lambda, driving_ability, facd_lambda};
use crate::controller::{ErrorState, MpcController};
use crate::driver::{quantify_state, DriverModel, DriverStateKind};
use crate::geometry::{CartesianPose, FrenetState, Point2, ReferenceLine};
use crate::planner::{plan, plan_all, safety_gate, CandidateRejection, CandidateTrajectory, DriverIntent, IntentDirection, ObstacleView, PlannerConfig, PlannerError, RejectReason};
use crate::rl::{deterministic_action, reward_step, Environment, Observation, PolicyParams, RewardBreakdown, RewardInput, RlError, StepOutcome};
use crate::vehicle::{lateral_acceleration, lateral_outputs, speed_hold, step_dynamics, VehicleState};

use super::log::{EpisodeLog, Event, EventKind, LogRow, Termination};
use super::scenario::{obstacles_at, Road, Scenario, ScheduledIntent};
use super::{HarnessError, Mode, SimConfig};

const EGO_RADIUS: f64 = 1.5;
const PROJECTION_WINDOW: f64 = 30.0;
/// Length of the plan path kept before the plan start.
const PLAN_TAIL: f64 = 3.0;
/// Plan paths continue past the horizon at the terminal state for this long.
const PLAN_EXTENSION: f64 = 2.0;
const PLAN_SAMPLE_DT: f64 = 0.005;
const FALLBACK_LENGTH: f64 = 100.0;
/// Obstacles farther than this are ignored by the planner.
const PLANNER_RANGE: f64 = 200.0;

/// Commands and observation for the tick about to be applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub obs: Observation,
    pub delta_h: f64,
    pub delta_a: f64,
    pub kind: DriverStateKind,
    pub s_h: f64,
    pub error: ErrorState,
    pub lane_offset: f64,
    /// Wall time of this tick's MPC solve.
    pub mpc_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutcome {
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub lambda: f64,
    pub delta: f64,
    pub collided: bool,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ActiveIntent {
    lane: usize,
    direction: IntentDirection,
    issued_at: f64,
}

#[derive(Debug, Clone)]
struct ActivePlan {
    path: ReferenceLine,
    candidate: Option<CandidateTrajectory>,
    start: f64,
    id: u64,
    s_hint: f64,
}

pub struct Simulation {
    scenario: Scenario,
    road: Road,
    cfg: SimConfig,
    mode: Mode,
    planner: PlannerConfig,
    state: VehicleState,
    step: u64,
    total_steps: u64,
    s_road: f64,
    l_road: f64,
    driver: DriverModel,
    mpc: MpcController,
    plan: ActivePlan,
    next_plan_id: u64,
    replan_now: bool,
    current_lane: usize,
    intent: Option<ActiveIntent>,
    /// Lane a committed driver keeps heading for after a rejection.
    committed_lane: Option<usize>,
    kinds: Vec<(f64, DriverStateKind)>,
    intents: Vec<ScheduledIntent>,
    next_kind: usize,
    next_intent: usize,
    takeover_at: Option<f64>,
    takeover: bool,
    human_steer: Option<f64>,
    prev_a_y: f64,
    prev_lambda: Option<f64>,
    prev_delta_h: Option<f64>,
    pending: Option<Pending>,
    log: EpisodeLog,
}

fn runtime(t: f64, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime { t, message: e.to_string() }
}

impl Simulation {
    /// `kind` overrides the scenario's initial driver state.
    pub fn new(scenario: &Scenario, cfg: &SimConfig, mode: Mode, kind: Option<DriverStateKind>, seed: u64) -> Result<Self, HarnessError> {
        scenario.validate()?;
        cfg.validate()?;
        let road = scenario.build_road()?;
        let kind = kind.unwrap_or_else(|| scenario.initial_kind());
        let planner = PlannerConfig::for_road(
            road.lane_center(0),
            road.lane_center(road.lanes - 1),
            road.lane_width,
            scenario.cruise_speed,
        );
        planner.validate()?;
        let l0 = road.lane_center(scenario.ego_lane);
        let p0 = road.reference.offset_point(scenario.start_s, l0);
        let heading = road.reference.sample(scenario.start_s).heading;
        let state = VehicleState { x: p0.x, y: p0.y, yaw: heading, vx: scenario.cruise_speed, vy: 0.0, yaw_rate: 0.0 };
        let mut kinds: Vec<(f64, DriverStateKind)> = scenario.schedule.kinds.iter().map(|k| (k.t, k.kind)).collect();
        kinds.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut intents = scenario.schedule.intents.clone();
        intents.sort_by(|a, b| a.t.total_cmp(&b.t));
        let total_steps = (scenario.duration / cfg.dt).round() as u64;
        let placeholder = ReferenceLine::build(&[p0, Point2::new(p0.x + heading.cos(), p0.y + heading.sin())], 0.5)?;
        let mut sim = Self {
            road,
            cfg: cfg.clone(),
            mode,
            planner,
            state,
            step: 0,
            total_steps,
            s_road: scenario.start_s,
            l_road: l0,
            driver: DriverModel::new(cfg.driver, kind, cfg.dt, seed),
            mpc: MpcController::new(cfg.mpc, cfg.vehicle)?,
            plan: ActivePlan { path: placeholder, candidate: None, start: 0.0, id: 0, s_hint: 0.0 },
            next_plan_id: 0,
            replan_now: true,
            current_lane: scenario.ego_lane,
            intent: None,
            committed_lane: None,
            kinds,
            intents,
            next_kind: 0,
            next_intent: 0,
            takeover_at: scenario.schedule.takeover,
            takeover: false,
            human_steer: None,
            prev_a_y: 0.0,
            prev_lambda: None,
            prev_delta_h: None,
            pending: None,
            log: EpisodeLog::new(&scenario.name, mode, kind, seed, cfg.dt),
            scenario: scenario.clone(),
        };
        sim.replan(0.0)?;
        sim.replan_now = false;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn road(&self) -> &Road {
        &self.road
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }

    pub fn is_done(&self) -> bool {
        self.log.termination.is_some()
    }

    pub fn driver_kind(&self) -> DriverStateKind {
        self.driver.kind()
    }

    pub fn takeover_active(&self) -> bool {
        self.takeover
    }

    /// Plan path points, for display.
    pub fn plan_polyline(&self, spacing: f64) -> Vec<Point2> {
        let path = &self.plan.path;
        let n = (path.total_length() / spacing).ceil().max(1.0) as usize;
        (0..=n).map(|i| path.sample((i as f64 * spacing).min(path.total_length())).position).collect()
    }

    /// Obstacles at the current time.
    pub fn obstacles(&self) -> Vec<ObstacleView> {
        obstacles_at(&self.scenario, &self.road, self.time())
    }

    /// Replaces the driver model's command with a live steering angle;
    /// `None` hands steering back to the model.
    pub fn set_human_steer(&mut self, angle: Option<f64>) {
        self.human_steer = angle.map(|a| a.clamp(-self.cfg.vehicle.max_steer, self.cfg.vehicle.max_steer));
    }

    pub fn add_reaction_time(&mut self, seconds: f64) {
        self.log.reaction_times.push(seconds);
        self.event(EventKind::NdrtAck, format!("{seconds:.3}"));
    }

    pub fn record_event(&mut self, kind: EventKind, detail: String) {
        self.event(kind, detail);
    }

    fn event(&mut self, kind: EventKind, detail: String) {
        log::debug!("t={:.2} {:?} {}", self.time(), kind, detail);
        self.log.events.push(Event { t: self.time(), kind, detail });
    }

    /// Forces manual control from now on; a no-op in MD mode.
    pub fn takeover(&mut self) {
        if self.mode == Mode::Md || self.takeover {
            return;
        }
        self.takeover = true;
        self.event(EventKind::Takeover, String::new());
    }

    fn planner_obstacles(&self, t: f64) -> Vec<ObstacleView> {
        let ego = self.state.position();
        obstacles_at(&self.scenario, &self.road, t).into_iter().filter(|o| o.position.distance(&ego) < PLANNER_RANGE).collect()
    }

    /// Frenet state to plan from: the vehicle's, with the lateral profile
    /// taken from the running plan while the vehicle is close to it.
    fn init_state(&self, t: f64) -> Result<FrenetState, HarnessError> {
        let st = &self.state;
        let speed = st.vx.hypot(st.vy);
        let pose = CartesianPose {
            position: st.position(),
            heading: st.yaw + st.vy.atan2(st.vx),
            speed,
            acceleration: 0.0,
            curvature: if speed > 0.1 { st.yaw_rate / speed } else { 0.0 },
        };
        let actual = self.road.reference.project_to_frenet_near(&pose, self.s_road, PROJECTION_WINDOW).map_err(|e| runtime(t, e))?;
        if let Some(c) = &self.plan.candidate {
            let f = c.frenet_extended(t - self.plan.start);
            if (f.l - actual.l).abs() < self.cfg.stitch_tolerance {
                return Ok(FrenetState::from_time_domain(actual.s, actual.s_dot, f.s_ddot, f.l, f.l_dot, f.l_ddot));
            }
        }
        Ok(FrenetState::from_time_domain(actual.s, actual.s_dot, 0.0, actual.l, actual.l_dot, 0.0))
    }

    fn keep_intent(&self) -> DriverIntent {
        DriverIntent::keep(self.road.lane_center(self.current_lane), self.scenario.cruise_speed)
    }

    fn lane_intent(&self, a: &ActiveIntent) -> DriverIntent {
        DriverIntent {
            target_offset: self.road.lane_center(a.lane),
            target_speed: self.scenario.cruise_speed,
            issued_at: a.issued_at,
            direction: a.direction,
        }
    }

    fn replan(&mut self, t: f64) -> Result<(), HarnessError> {
        let init = self.init_state(t)?;
        let obstacles = self.planner_obstacles(t);
        if let Some(a) = self.intent {
            let intent = self.lane_intent(&a);
            let cfg = self.planner.restricted_to_lane(intent.target_offset);
            match plan(&init, &intent, &obstacles, &self.road.reference, &cfg) {
                Ok(c) => return self.install(c, t),
                Err(PlannerError::Infeasible { .. }) => {
                    self.intent = None;
                    self.event(EventKind::IntentAbandoned, a.direction.to_string());
                }
                Err(e) => return Err(runtime(t, e)),
            }
        }
        match plan(&init, &self.keep_intent(), &obstacles, &self.road.reference, &self.planner) {
            Ok(c) => self.install(c, t),
            Err(PlannerError::Infeasible { rejections }) => {
                self.event(EventKind::PlanFallback, rejection_summary(&rejections));
                self.install_fallback(t)
            }
            Err(e) => Err(runtime(t, e)),
        }
    }

    fn install(&mut self, c: CandidateTrajectory, t: f64) -> Result<(), HarnessError> {
        let r = &self.road.reference;
        let f0 = c.frenet_at(0.0);
        let mut pts = tail_points(r, f0.s, f0.l);
        let n = ((c.horizon + PLAN_EXTENSION) / PLAN_SAMPLE_DT).round() as usize;
        for i in 0..=n {
            let f = c.frenet_extended(i as f64 * PLAN_SAMPLE_DT);
            if f.s > r.total_length() {
                break;
            }
            push_distinct(&mut pts, r.offset_point(f.s, f.l));
        }
        self.set_path(pts, Some(c), t)
    }

    fn install_fallback(&mut self, t: f64) -> Result<(), HarnessError> {
        let r = &self.road.reference;
        let l = self.road.lane_center(self.current_lane);
        let mut pts = tail_points(r, self.s_road, l);
        let end = (self.s_road + FALLBACK_LENGTH).min(r.total_length());
        let mut s = self.s_road;
        while s <= end {
            push_distinct(&mut pts, r.offset_point(s, l));
            s += 0.1;
        }
        self.set_path(pts, None, t)
    }

    fn set_path(&mut self, pts: Vec<Point2>, candidate: Option<CandidateTrajectory>, t: f64) -> Result<(), HarnessError> {
        if pts.len() < 2 {
            return Err(runtime(t, "plan path ran off the end of the route"));
        }
        let path = ReferenceLine::build(&pts, 0.5).map_err(|e| runtime(t, e))?;
        let (s_hint, _) = path.project_point(&self.state.position()).unwrap_or((PLAN_TAIL, 0.0));
        self.next_plan_id += 1;
        self.plan = ActivePlan { path, candidate, start: t, id: self.next_plan_id, s_hint };
        Ok(())
    }

    /// Every candidate the planner would score right now, checked and costed.
    /// With a direction, candidates target the neighbouring lane.
    pub fn candidates(&self, dir: Option<IntentDirection>) -> Result<Vec<CandidateTrajectory>, HarnessError> {
        let t = self.time();
        let init = self.init_state(t)?;
        let obstacles = self.planner_obstacles(t);
        let lane = match dir {
            Some(IntentDirection::Left) => Some(self.current_lane + 1).filter(|l| *l < self.road.lanes),
            Some(IntentDirection::Right) => self.current_lane.checked_sub(1),
            _ => return Ok(plan_all(&init, &self.keep_intent(), &obstacles, &self.road.reference, &self.planner)?),
        };
        let (Some(lane), Some(direction)) = (lane, dir) else {
            return Err(HarnessError::Config(format!("no lane to the {}", dir.unwrap_or(IntentDirection::Keep))));
        };
        let intent = self.lane_intent(&ActiveIntent { lane, direction, issued_at: t });
        let cfg = self.planner.restricted_to_lane(intent.target_offset);
        Ok(plan_all(&init, &intent, &obstacles, &self.road.reference, &cfg)?)
    }

    /// Handles a lane-change request through the intention gate.
    pub fn issue_intent(&mut self, dir: IntentDirection, committed: bool) -> Result<bool, HarnessError> {
        let t = self.time();
        self.event(EventKind::IntentIssued, dir.to_string());
        let lane = match dir {
            IntentDirection::Left if self.current_lane + 1 < self.road.lanes => Some(self.current_lane + 1),
            IntentDirection::Right => self.current_lane.checked_sub(1),
            _ => None,
        };
        let Some(lane) = lane else {
            self.event(EventKind::GateReject, format!("{dir}: no lane"));
            return Ok(false);
        };
        if self.intent.is_some() {
            self.event(EventKind::GateReject, format!("{dir}: lane change in progress"));
            return Ok(false);
        }
        let candidate = ActiveIntent { lane, direction: dir, issued_at: t };
        let intent = self.lane_intent(&candidate);
        let init = self.init_state(t)?;
        let obstacles = self.planner_obstacles(t);
        let accepted = safety_gate(&intent, &init, &obstacles, &self.road.reference, &self.planner);
        if accepted {
            self.event(EventKind::GateAccept, format!("{dir}: lane {lane}"));
            self.intent = Some(candidate);
            self.committed_lane = None;
        } else {
            self.event(EventKind::GateReject, format!("{dir}: lane {lane} unsafe"));
            if committed {
                self.committed_lane = Some(lane);
            }
        }
        self.replan_now = true;
        Ok(accepted)
    }

    fn apply_schedule(&mut self, t: f64) -> Result<(), HarnessError> {
        let eps = 0.5 * self.cfg.dt;
        while self.next_kind < self.kinds.len() && self.kinds[self.next_kind].0 <= t + eps {
            let kind = self.kinds[self.next_kind].1;
            self.next_kind += 1;
            if kind != self.driver.kind() {
                self.driver.set_kind(kind);
                self.event(EventKind::DriverState, kind.to_string());
            }
        }
        while self.next_intent < self.intents.len() && self.intents[self.next_intent].t <= t + eps {
            let si = self.intents[self.next_intent];
            self.next_intent += 1;
            self.issue_intent(si.dir, si.committed)?;
        }
        if self.takeover_at.is_some_and(|at| at <= t + eps) {
            self.takeover_at = None;
            self.takeover();
        }
        Ok(())
    }

    fn update_lanes(&mut self) {
        let nearest = self.road.nearest_lane(self.l_road);
        if (self.l_road - self.road.lane_center(nearest)).abs() < self.road.lane_width / 4.0 {
            self.current_lane = nearest;
        }
        if let Some(a) = self.intent {
            if (self.l_road - self.road.lane_center(a.lane)).abs() < self.cfg.intent_tolerance {
                self.current_lane = a.lane;
                self.intent = None;
                self.event(EventKind::IntentComplete, a.direction.to_string());
            }
        }
        if self.committed_lane == Some(self.current_lane) {
            self.committed_lane = None;
        }
    }

    /// Lane the driver model steers for.
    fn driver_lane(&self) -> usize {
        if let Some(a) = self.intent {
            return a.lane;
        }
        if let Some(l) = self.committed_lane {
            return l;
        }
        match &self.plan.candidate {
            Some(c) => self.road.nearest_lane(c.target_offset),
            None => self.current_lane,
        }
    }

    /// Computes this tick's commands. Idempotent until [`apply`](Self::apply).
    pub fn prepare(&mut self) -> Result<Pending, HarnessError> {
        if let Some(p) = self.pending {
            return Ok(p);
        }
        if self.is_done() {
            return Err(HarnessError::Finished);
        }
        let t = self.time();
        self.apply_schedule(t)?;
        if self.replan_now || self.step % self.cfg.replan_every() == 0 {
            self.replan_now = false;
            self.replan(t)?;
        }
        let (s, l) = self.road.reference.project_point_near(&self.state.position(), self.s_road, PROJECTION_WINDOW).map_err(|e| runtime(t, e))?;
        self.s_road = s;
        self.l_road = l;
        self.update_lanes();
        let lane_offset = l - self.road.lane_center(self.current_lane);

        let (out, s_plan) = lateral_outputs(&self.state, self.prev_a_y, &self.plan.path, self.plan.s_hint).map_err(|e| runtime(t, e))?;
        self.plan.s_hint = s_plan;
        let error = ErrorState::from_vehicle(&out, &self.state, self.plan.path.curvature_at(s_plan));

        let faults = self.scenario.schedule.faults.iter().filter(|f| f.start <= t && t < f.end);
        let (bias, blind) = faults.fold((0.0, false), |(b, blind), f| (b + f.bias, blind || !f.attentive));
        let delta_h = match self.human_steer {
            Some(a) => a,
            None if blind => self.driver.step_blind(bias),
            None => {
                let target = self.road.lane_center(self.driver_lane());
                self.driver.step(&self.state, &self.road.reference, self.s_road, target, bias)
            }
        };

        let vx = self.state.vx;
        let horizon = self.cfg.mpc.prediction_steps;
        let curvature: Vec<f64> =
            (0..horizon).map(|k| self.plan.path.curvature_at(s_plan + vx * self.cfg.mpc.step * k as f64)).collect();
        let started = Instant::now();
        let delta_a = self.mpc.solve(&error, quantize_speed(vx), &curvature).map_err(|e| runtime(t, e))?;
        let mpc_time = started.elapsed();

        let kind = self.driver.kind();
        let s_h = quantify_state(kind);
        let obs = Observation { delta_a, delta_h, s_h, a_y: self.prev_a_y, e_d: error.e_d, e_yaw: error.e_yaw };
        if !obs.is_finite() {
            return Err(runtime(t, format!("non-finite observation {obs:?}")));
        }
        let p = Pending { obs, delta_h, delta_a, kind, s_h, error, lane_offset, mpc_time };
        self.pending = Some(p);
        Ok(p)
    }

    /// Authority from the episode's law.
    pub fn mode_lambda(&self, p: &Pending, policy: Option<&PolicyParams>) -> Result<f64, HarnessError> {
        Ok(match self.mode {
            Mode::Md => 0.0,
            Mode::Facd => facd_lambda(p.kind),
            Mode::Dccd => {
                let d = &self.cfg.dccd;
                dccd_lambda(d.involvement(p.kind), driving_ability(p.error.e_d, p.error.e_yaw, d), d)
            }
            Mode::Hocd => {
                let policy = policy.ok_or_else(|| HarnessError::Config("HOCD needs a policy".into()))?;
                deterministic_action(&p.obs, policy)?
            }
        })
    }

    fn target_speed(&self, t: f64) -> f64 {
        match &self.plan.candidate {
            Some(c) => {
                let tau = (t - self.plan.start).min(c.horizon);
                c.longitudinal.derivative(1, tau)
            }
            None => self.scenario.cruise_speed,
        }
    }

    /// Blends with authority `lambda`, advances one step and logs it.
    pub fn apply(&mut self, lambda: f64) -> Result<TickOutcome, HarnessError> {
        let t = self.time();
        let p = self.pending.take().ok_or_else(|| runtime(t, "apply called without prepare"))?;
        let lambda = if self.takeover { 0.0 } else { lambda };
        let vp = self.cfg.vehicle;
        let delta = blend(p.delta_a, p.delta_h, lambda, vp.max_steer)?;
        self.mpc.set_applied(delta);
        let a_y = lateral_acceleration(&self.state, delta, &vp);
        let dt = self.cfg.dt;
        let jerk = if self.step == 0 { 0.0 } else { (a_y - self.prev_a_y) / dt };
        let delta_h_rate = self.prev_delta_h.map_or(0.0, |d| (p.delta_h - d) / dt);

        let mut next = step_dynamics(&self.state, delta, &vp, dt).map_err(|e| runtime(t, e))?;
        next.vx = speed_hold(self.state.vx, self.target_speed(t + dt), self.cfg.speed_gain, self.cfg.max_accel, dt);
        let t_next = t + dt;
        let ego = next.position();
        let hit = obstacles_at(&self.scenario, &self.road, t_next)
            .iter()
            .position(|o| o.position.distance(&ego) < EGO_RADIUS + o.radius);
        let (s_next, l_next) =
            self.road.reference.project_point_near(&ego, self.s_road, PROJECTION_WINDOW).map_err(|e| runtime(t_next, e))?;
        let off_road = l_next.abs() > self.road.half_width() + self.cfg.off_road_margin || s_next >= self.road.reference.total_length() - 1e-6;
        let (e_next, _) = match lateral_outputs(&next, a_y, &self.plan.path, self.plan.s_hint) {
            Ok(v) => v,
            Err(_) => (crate::vehicle::LateralOutputs { e_d: l_next - self.l_road + p.error.e_d, e_yaw: p.error.e_yaw, a_y, v_y: next.vy }, 0.0),
        };

        let (reward, breakdown) = reward_step(
            &RewardInput {
                e_d: e_next.e_d,
                e_yaw: e_next.e_yaw,
                a_y,
                prev_a_y: self.prev_a_y,
                lambda,
                prev_lambda: self.prev_lambda.unwrap_or(lambda),
                collided: hit.is_some(),
                delta,
                delta_h: p.delta_h,
                s_h: p.s_h,
                dt,
            },
            &self.cfg.reward,
        );

        let st = self.state;
        self.log.rows.push(LogRow {
            t,
            x: st.x,
            y: st.y,
            yaw: st.yaw,
            vx: st.vx,
            vy: st.vy,
            yaw_rate: st.yaw_rate,
            e_d: p.error.e_d,
            e_yaw: p.error.e_yaw,
            lane_offset: p.lane_offset,
            a_y,
            jerk,
            delta_h: p.delta_h,
            delta_h_rate,
            delta_a: p.delta_a,
            delta,
            lambda,
            s_h: p.s_h,
            r_tracking: breakdown.tracking,
            r_comfort: breakdown.comfort,
            r_collision: breakdown.collision,
            r_conflict: breakdown.conflict,
            reward,
            plan_id: self.plan.id,
        });

        self.state = next;
        self.step += 1;
        self.prev_a_y = a_y;
        self.prev_lambda = Some(lambda);
        self.prev_delta_h = Some(p.delta_h);

        let termination = if let Some(k) = hit {
            self.event(EventKind::Collision, format!("obstacle {k}"));
            Some(Termination::Collision)
        } else if off_road {
            self.event(EventKind::OffRoad, format!("l = {l_next:.2}"));
            Some(Termination::OffRoad)
        } else if self.step >= self.total_steps {
            Some(Termination::Horizon)
        } else {
            None
        };
        self.log.termination = termination;
        Ok(TickOutcome { reward, breakdown, lambda, delta, collided: hit.is_some(), termination })
    }

    /// Stops the episode early, e.g. when a live client leaves.
    pub fn stop(&mut self) {
        self.pending = None;
        if self.log.termination.is_none() {
            self.log.termination = Some(Termination::Stopped);
        }
    }
}

/// Cached MPC discretisations are keyed by speed; quantising keeps the
/// cache warm while the speed controller settles.
fn quantize_speed(vx: f64) -> f64 {
    (vx / 0.05).round() * 0.05
}

fn rejection_summary(rejections: &[CandidateRejection]) -> String {
    let mut counts = [0usize; 4];
    for r in rejections {
        counts[match r.rejection.reason {
            RejectReason::Curvature => 0,
            RejectReason::Acceleration => 1,
            RejectReason::Collision { .. } => 2,
            RejectReason::Geometry => 3,
        }] += 1;
    }
    format!(
        "{} candidates rejected: curvature {}, acceleration {}, collision {}, geometry {}",
        rejections.len(),
        counts[0],
        counts[1],
        counts[2],
        counts[3]
    )
}

fn tail_points(r: &ReferenceLine, s0: f64, l: f64) -> Vec<Point2> {
    let mut pts = Vec::new();
    let mut k = PLAN_TAIL;
    while k > 1e-9 {
        if s0 - k >= 0.0 {
            pts.push(r.offset_point(s0 - k, l));
        }
        k -= 0.5;
    }
    pts
}

fn push_distinct(pts: &mut Vec<Point2>, p: Point2) {
    if pts.last().is_none_or(|q| q.distance(&p) > 1e-3) {
        pts.push(p);
    }
}

/// Authority-allocation environment over one scenario: the agent's λ is
/// held for `action_repeat` control ticks and the reward is their mean.
pub struct SimEnv {
    pub scenario: Scenario,
    pub cfg: SimConfig,
    pub kind: DriverStateKind,
    pub seed: u64,
    pub action_repeat: usize,
    sim: Option<Simulation>,
}

impl SimEnv {
    pub fn new(scenario: Scenario, cfg: SimConfig, kind: DriverStateKind, seed: u64, action_repeat: usize) -> Self {
        Self { scenario, cfg, kind, seed, action_repeat: action_repeat.max(1), sim: None }
    }

    pub fn simulation(&self) -> Option<&Simulation> {
        self.sim.as_ref()
    }
}

impl Environment for SimEnv {
    fn reset(&mut self) -> Result<Observation, RlError> {
        let mut sim = Simulation::new(&self.scenario, &self.cfg, Mode::Hocd, Some(self.kind), self.seed)?;
        let obs = sim.prepare()?.obs;
        self.sim = Some(sim);
        Ok(obs)
    }

    fn step(&mut self, lambda: f64) -> Result<StepOutcome, RlError> {
        let sim = self.sim.as_mut().ok_or_else(|| RlError::Env("step before reset".into()))?;
        let mut total = 0.0;
        let mut parts = RewardBreakdown::default();
        let mut end = None;
        for _ in 0..self.action_repeat {
            sim.prepare()?;
            let out = sim.apply(lambda)?;
            total += out.reward;
            parts.tracking += out.breakdown.tracking;
            parts.comfort += out.breakdown.comfort;
            parts.collision += out.breakdown.collision;
            parts.conflict += out.breakdown.conflict;
            if out.termination.is_some() {
                end = out.termination;
                break;
            }
        }
        let k = self.action_repeat as f64;
        let breakdown = RewardBreakdown {
            tracking: parts.tracking / k,
            comfort: parts.comfort / k,
            collision: parts.collision / k,
            conflict: parts.conflict / k,
        };
        let obs = if end.is_none() { sim.prepare()?.obs } else { sim.log().rows.last().map_or_else(Observation::default, |r| Observation {
            delta_a: r.delta_a,
            delta_h: r.delta_h,
            s_h: r.s_h,
            a_y: r.a_y,
            e_d: r.e_d,
            e_yaw: r.e_yaw,
        }) };
        Ok(StepOutcome {
            obs,
            reward: total / k,
            breakdown,
            terminal: matches!(end, Some(Termination::Collision | Termination::OffRoad)),
            truncated: matches!(end, Some(Termination::Horizon | Termination::Stopped)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::builtin_scenario;

    fn run(id: &str, mode: Mode, seconds: f64) -> EpisodeLog {
        let mut sc = builtin_scenario(id).unwrap();
        sc.duration = seconds;
        let mut sim = Simulation::new(&sc, &SimConfig::default(), mode, None, 3).unwrap();
        while !sim.is_done() {
            let p = sim.prepare().unwrap();
            let l = sim.mode_lambda(&p, None).unwrap();
            sim.apply(l).unwrap();
        }
        sim.into_log()
    }

    #[test]
    fn manual_mode_passes_driver_through() {
        let log = run("route1", Mode::Md, 3.0);
        assert_eq!(log.rows.len(), 300);
        assert!(log.rows.iter().all(|r| r.lambda == 0.0 && r.delta == r.delta_h));
        assert_eq!(log.termination, Some(Termination::Horizon));
    }

    #[test]
    fn facd_holds_its_constant() {
        let log = run("route2", Mode::Facd, 3.0);
        assert!(log.rows.iter().all(|r| r.lambda == 0.5));
        assert_eq!(log.blend_violation(0.5), None);
    }

    #[test]
    fn timestamps_are_uniform() {
        let log = run("route2", Mode::Dccd, 2.0);
        for (i, r) in log.rows.iter().enumerate() {
            assert!((r.t - i as f64 * 0.01).abs() < 1e-9);
        }
        assert!(log.rows.iter().all(|r| (0.1..=1.0).contains(&r.lambda)));
    }

    #[test]
    fn lane_keeping_on_straight_road() {
        let log = run("route1", Mode::Facd, 10.0);
        let worst = log.rows.iter().map(|r| r.lane_offset.abs()).fold(0.0, f64::max);
        assert!(worst < 0.3, "offset {worst}");
        let v = log.rows.last().unwrap().vx;
        assert!((v - 60.0 / 3.6).abs() < 0.5, "speed {v}");
    }

    #[test]
    fn prepare_is_idempotent_and_apply_needs_it() {
        let sc = builtin_scenario("route1").unwrap();
        let mut sim = Simulation::new(&sc, &SimConfig::default(), Mode::Facd, None, 1).unwrap();
        assert!(sim.apply(0.5).is_err());
        let a = sim.prepare().unwrap();
        let b = sim.prepare().unwrap();
        assert_eq!(a, b);
        sim.apply(0.5).unwrap();
        assert_eq!(sim.log().rows.len(), 1);
    }

    #[test]
    fn same_seed_same_log() {
        assert_eq!(run("scenario5", Mode::Dccd, 4.0), run("scenario5", Mode::Dccd, 4.0));
    }

    #[test]
    fn human_steer_replaces_model() {
        let sc = builtin_scenario("route1").unwrap();
        let mut sim = Simulation::new(&sc, &SimConfig::default(), Mode::Md, None, 1).unwrap();
        sim.set_human_steer(Some(0.1));
        sim.prepare().unwrap();
        let out = sim.apply(0.0).unwrap();
        assert_eq!(out.delta, 0.1);
        sim.set_human_steer(Some(3.0));
        assert_eq!(sim.prepare().unwrap().delta_h, 0.5);
    }

    #[test]
    fn takeover_is_noop_in_manual() {
        let sc = builtin_scenario("route1").unwrap();
        let mut sim = Simulation::new(&sc, &SimConfig::default(), Mode::Md, None, 1).unwrap();
        sim.takeover();
        assert!(!sim.takeover_active());
        assert!(sim.log().events.is_empty());
    }

    #[test]
    fn env_repeats_actions() {
        let mut sc = builtin_scenario("route2").unwrap();
        sc.duration = 1.0;
        let mut env = SimEnv::new(sc, SimConfig::default(), DriverStateKind::Normal, 2, 10);
        env.reset().unwrap();
        let mut steps = 0;
        loop {
            let out = env.step(0.4).unwrap();
            steps += 1;
            if out.truncated || out.terminal {
                assert!(out.truncated);
                break;
            }
        }
        assert_eq!(steps, 10);
        assert_eq!(env.simulation().unwrap().log().rows.len(), 100);
    }
}
