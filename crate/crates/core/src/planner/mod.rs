//! Intention-aware trajectory planning in the Frenet frame.
//!
//! Every `(terminal offset, horizon, terminal speed)` grid cell yields one
//! candidate: a quintic lateral profile and a quartic longitudinal profile.
//! Candidates are scored on comfort, consistency with the driver's intent and
//! convergence time, checked for curvature, acceleration and collisions in
//! the Cartesian frame, and the cheapest valid one is selected.

mod polynomial;

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CartesianPose, FrenetState, Point2, ReferenceLine};
pub use polynomial::{fit_quartic, fit_quintic, QuarticCoefficients, QuinticCoefficients};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("non-finite boundary condition")]
    NonFinite,
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("no valid candidate among {} evaluated", rejections.len())]
    Infeasible { rejections: Vec<CandidateRejection> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentDirection {
    Left,
    Right,
    Keep,
}

impl std::fmt::Display for IntentDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IntentDirection::Left => "left",
            IntentDirection::Right => "right",
            IntentDirection::Keep => "keep",
        })
    }
}

/// What the driver wants: a lane (as a lateral offset from the reference
/// line) and a speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverIntent {
    pub target_offset: f64,
    pub target_speed: f64,
    pub issued_at: f64,
    pub direction: IntentDirection,
}

impl DriverIntent {
    pub fn keep(target_offset: f64, target_speed: f64) -> Self {
        Self { target_offset, target_speed, issued_at: 0.0, direction: IntentDirection::Keep }
    }
}

/// Inclusive sampling range `min, min + step, ..., <= max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridRange {
    pub fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor().max(0.0) as usize;
        (0..=n).map(|k| self.min + k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub lateral: GridRange,
    pub horizon: GridRange,
    pub speed: GridRange,
    pub max_curvature: f64,
    pub max_accel: f64,
    pub ego_radius: f64,
    pub dt: f64,
    pub w_comfort: f64,
    pub w_consistency: f64,
    pub w_efficiency: f64,
    /// Width of a lane; the intention gate restricts terminal offsets to the
    /// middle half of the intended lane.
    pub lane_width: f64,
}

impl PlannerConfig {
    /// Defaults for a road whose lane centres span `[min_center, max_center]`
    /// around the reference line, driven at `cruise` m/s.
    pub fn for_road(min_center: f64, max_center: f64, lane_width: f64, cruise: f64) -> Self {
        let half = 0.5;
        let lo = ((min_center - half) / 0.5).ceil() * 0.5;
        let hi = ((max_center + half) / 0.5).floor() * 0.5;
        Self {
            lateral: GridRange::new(lo, hi, 0.5),
            horizon: GridRange::new(3.0, 5.0, 0.5),
            speed: GridRange::new((cruise - 2.0).max(0.0), cruise + 2.0, 1.0),
            max_curvature: 0.2,
            max_accel: 4.0,
            ego_radius: 1.5,
            dt: 0.1,
            w_comfort: 0.1,
            w_consistency: 1.0,
            w_efficiency: 0.1,
            lane_width,
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::Config(m.to_string()));
        for (name, g) in [("lateral", self.lateral), ("horizon", self.horizon), ("speed", self.speed)] {
            if !(g.step > 0.0) || g.max < g.min {
                return bad(&format!("{name} grid must have step > 0 and max >= min"));
            }
        }
        if !(self.horizon.min > 0.0) {
            return bad("horizons must be positive");
        }
        if !(self.max_curvature > 0.0 && self.max_accel > 0.0 && self.ego_radius > 0.0 && self.dt > 0.0) {
            return bad("curvature/acceleration limits, radius and dt must be positive");
        }
        let w = [self.w_comfort, self.w_consistency, self.w_efficiency];
        if w.iter().any(|v| *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return bad("weights must be non-negative and not all zero");
        }
        Ok(())
    }

    /// Same configuration with terminal offsets limited to the middle of the
    /// lane centred at `center`.
    pub fn restricted_to_lane(&self, center: f64) -> Self {
        let quarter = self.lane_width / 4.0;
        let step = self.lateral.step;
        let lo = ((center - quarter - self.lateral.min) / step - 1e-9).ceil() * step + self.lateral.min;
        let hi = ((center + quarter - self.lateral.min) / step + 1e-9).floor() * step + self.lateral.min;
        Self { lateral: GridRange::new(lo, hi, step), ..*self }
    }
}

/// Obstacle as seen by the planner: a disc moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleView {
    pub position: Point2,
    pub radius: f64,
    pub velocity: (f64, f64),
}

impl ObstacleView {
    pub fn at_time(&self, t: f64) -> Point2 {
        Point2::new(self.position.x + self.velocity.0 * t, self.position.y + self.velocity.1 * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Curvature,
    Acceleration,
    Collision { obstacle: usize },
    /// The candidate leaves the reference line or crosses a Frenet singularity.
    Geometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: RejectReason,
    pub index: usize,
    pub value: f64,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.reason {
            RejectReason::Curvature => write!(f, "curvature {:.4} at point {}", self.value, self.index),
            RejectReason::Acceleration => write!(f, "acceleration {:.3} at point {}", self.value, self.index),
            RejectReason::Collision { obstacle } => {
                write!(f, "collision with obstacle {obstacle} at point {} (gap^2 {:.3})", self.index, self.value)
            }
            RejectReason::Geometry => write!(f, "geometry failure at point {}", self.index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRejection {
    pub target_offset: f64,
    pub horizon: f64,
    pub target_speed: f64,
    pub rejection: Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostTerms {
    pub comfort: f64,
    pub consistency: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTrajectory {
    pub target_offset: f64,
    pub target_speed: f64,
    pub lateral: QuinticCoefficients,
    pub longitudinal: QuarticCoefficients,
    pub horizon: f64,
    pub dt: f64,
    /// `round(horizon / dt) + 1` samples; empty until materialised.
    pub points: Vec<CartesianPose>,
    pub costs: CostTerms,
    pub cost_total: f64,
    /// `None` until checked, then `Some(Ok(()))` or the first failure.
    pub validity: Option<Result<(), Rejection>>,
}

impl CandidateTrajectory {
    /// Fits both profiles from `init` to the terminal cell `(offset, horizon, speed)`.
    pub fn fit(init: &FrenetState, target_offset: f64, horizon: f64, target_speed: f64, dt: f64) -> Result<Self, PlannerError> {
        let lateral = fit_quintic([init.l, init.l_dot, init.l_ddot], [target_offset, 0.0, 0.0], horizon)?;
        let longitudinal = fit_quartic([init.s, init.s_dot, init.s_ddot], [target_speed, 0.0], horizon)?;
        Ok(Self {
            target_offset,
            target_speed,
            lateral,
            longitudinal,
            horizon,
            dt,
            points: Vec::new(),
            costs: CostTerms::default(),
            cost_total: 0.0,
            validity: None,
        })
    }

    pub fn sample_count(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }

    /// Frenet state at time `t` after the plan start.
    pub fn frenet_at(&self, t: f64) -> FrenetState {
        let (lat, lon) = (&self.lateral, &self.longitudinal);
        FrenetState::from_time_domain(
            lon.value(t),
            lon.derivative(1, t),
            lon.derivative(2, t),
            lat.value(t),
            lat.derivative(1, t),
            lat.derivative(2, t),
        )
    }

    /// Frenet state at `t`, continued past the horizon at constant offset
    /// and terminal speed.
    pub fn frenet_extended(&self, t: f64) -> FrenetState {
        if t <= self.horizon {
            return self.frenet_at(t);
        }
        let end = self.frenet_at(self.horizon);
        let s = end.s + end.s_dot * (t - self.horizon);
        FrenetState::from_time_domain(s, end.s_dot, 0.0, end.l, 0.0, 0.0)
    }

    /// Converts the sampled Frenet profile into Cartesian points.
    pub fn materialize(&mut self, reference: &ReferenceLine) -> Result<(), Rejection> {
        let n = self.sample_count();
        self.points.clear();
        self.points.reserve(n);
        for i in 0..n {
            let f = self.frenet_at(i as f64 * self.dt);
            match reference.frenet_to_cartesian(&f) {
                Ok(p) => self.points.push(p),
                Err(_) => return Err(Rejection { reason: RejectReason::Geometry, index: i, value: f.s }),
            }
        }
        Ok(())
    }

    fn sort_key(&self, l_target: f64) -> (f64, f64, f64, f64) {
        (self.cost_total, self.costs.consistency, self.horizon, (self.target_offset - l_target).abs())
    }

    pub fn is_valid(&self) -> bool {
        matches!(self.validity, Some(Ok(())))
    }
}

/// Checks curvature, then acceleration, then collisions over every sample;
/// the first failing check is reported with its first failing index.
pub fn check_candidate(c: &CandidateTrajectory, obstacles: &[ObstacleView], cfg: &PlannerConfig) -> Result<(), Rejection> {
    for (i, p) in c.points.iter().enumerate() {
        if p.curvature.abs() > cfg.max_curvature {
            return Err(Rejection { reason: RejectReason::Curvature, index: i, value: p.curvature });
        }
    }
    for (i, p) in c.points.iter().enumerate() {
        if p.acceleration.abs() > cfg.max_accel {
            return Err(Rejection { reason: RejectReason::Acceleration, index: i, value: p.acceleration });
        }
    }
    for (i, p) in c.points.iter().enumerate() {
        let t = i as f64 * c.dt;
        for (k, ob) in obstacles.iter().enumerate() {
            let q = ob.at_time(t);
            let d2 = (p.position.x - q.x).powi(2) + (p.position.y - q.y).powi(2);
            let reach = cfg.ego_radius + ob.radius;
            if d2 < reach * reach {
                return Err(Rejection { reason: RejectReason::Collision { obstacle: k }, index: i, value: d2 });
            }
        }
    }
    Ok(())
}

/// Comfort, consistency and efficiency costs over `[0, horizon]`.
///
/// The integrals are evaluated with composite Simpson's rule on the `dt`
/// sample grid (a 3/8 panel closes an odd number of intervals); the
/// integrands are low-degree polynomials, so the rule is near exact.
pub fn cost_terms(c: &CandidateTrajectory, intent: &DriverIntent, dt: f64) -> CostTerms {
    let n = (c.horizon / dt).round() as usize;
    let h = c.horizon / n as f64;
    let comfort_at = |t: f64| {
        let jl = c.lateral.derivative(3, t);
        let js = c.longitudinal.derivative(3, t);
        jl * jl + js * js
    };
    let consistency_at = |t: f64| {
        let dl = c.lateral.value(t) - intent.target_offset;
        let dv = c.longitudinal.derivative(1, t) - intent.target_speed;
        dl * dl + dv * dv
    };
    CostTerms {
        comfort: simpson(comfort_at, n, h),
        consistency: simpson(consistency_at, n, h),
        efficiency: c.horizon,
    }
}

fn simpson(f: impl Fn(f64) -> f64, n: usize, h: f64) -> f64 {
    let y = |i: usize| f(i as f64 * h);
    match n {
        0 => 0.0,
        1 => 0.5 * h * (y(0) + y(1)),
        _ => {
            let even = if n % 2 == 0 { n } else { n - 3 };
            let mut acc = 0.0;
            if even > 0 {
                let mut inner = 0.0;
                for i in 1..even {
                    inner += if i % 2 == 1 { 4.0 } else { 2.0 } * y(i);
                }
                acc += h / 3.0 * (y(0) + inner + y(even));
            }
            if even != n {
                let k = even;
                acc += 3.0 * h / 8.0 * (y(k) + 3.0 * y(k + 1) + 3.0 * y(k + 2) + y(k + 3));
            }
            acc
        }
    }
}

pub fn total_cost(costs: &CostTerms, cfg: &PlannerConfig) -> f64 {
    cfg.w_comfort * costs.comfort + cfg.w_consistency * costs.consistency + cfg.w_efficiency * costs.efficiency
}

fn compare_candidates(a: &CandidateTrajectory, b: &CandidateTrajectory, l_target: f64) -> Ordering {
    let (ka, kb) = (a.sort_key(l_target), b.sort_key(l_target));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.total_cmp(&kb.2))
        .then(ka.3.total_cmp(&kb.3))
        .then(a.target_offset.total_cmp(&b.target_offset))
        .then(a.target_speed.total_cmp(&b.target_speed))
}

/// Enumerates the grid and returns every fitted, costed candidate in
/// enumeration order (offset, horizon, speed). Points are not materialised.
pub fn enumerate(init: &FrenetState, intent: &DriverIntent, cfg: &PlannerConfig) -> Result<Vec<CandidateTrajectory>, PlannerError> {
    cfg.validate()?;
    let offsets = cfg.lateral.values();
    let horizons = cfg.horizon.values();
    let speeds = cfg.speed.values();
    let mut out = Vec::with_capacity(offsets.len() * horizons.len() * speeds.len());
    for &d in &offsets {
        for &tau in &horizons {
            for &v in &speeds {
                let mut c = CandidateTrajectory::fit(init, d, tau, v, cfg.dt)?;
                c.costs = cost_terms(&c, intent, cfg.dt);
                c.cost_total = total_cost(&c.costs, cfg);
                out.push(c);
            }
        }
    }
    Ok(out)
}

fn evaluate(c: &mut CandidateTrajectory, obstacles: &[ObstacleView], reference: &ReferenceLine, cfg: &PlannerConfig) {
    let verdict = c.materialize(reference).and_then(|_| check_candidate(c, obstacles, cfg));
    c.validity = Some(verdict);
}

fn rejection_of(c: &CandidateTrajectory) -> Option<CandidateRejection> {
    match c.validity {
        Some(Err(rejection)) => Some(CandidateRejection {
            target_offset: c.target_offset,
            horizon: c.horizon,
            target_speed: c.target_speed,
            rejection,
        }),
        _ => None,
    }
}

/// Every candidate, materialised and checked, in enumeration order.
pub fn plan_all(
    init: &FrenetState,
    intent: &DriverIntent,
    obstacles: &[ObstacleView],
    reference: &ReferenceLine,
    cfg: &PlannerConfig,
) -> Result<Vec<CandidateTrajectory>, PlannerError> {
    let mut all = enumerate(init, intent, cfg)?;
    for c in &mut all {
        evaluate(c, obstacles, reference, cfg);
    }
    Ok(all)
}

/// Selects the minimum-cost valid candidate.
///
/// Ties are broken by smaller consistency cost, then shorter horizon, then
/// terminal offset closer to the intended lane. Candidates are checked in
/// cost order, so only the winner and the cheaper rejected ones are
/// materialised.
pub fn plan(
    init: &FrenetState,
    intent: &DriverIntent,
    obstacles: &[ObstacleView],
    reference: &ReferenceLine,
    cfg: &PlannerConfig,
) -> Result<CandidateTrajectory, PlannerError> {
    let mut all = enumerate(init, intent, cfg)?;
    all.sort_by(|a, b| compare_candidates(a, b, intent.target_offset));
    let mut rejections = Vec::new();
    for mut c in all {
        evaluate(&mut c, obstacles, reference, cfg);
        if c.is_valid() {
            return Ok(c);
        }
        rejections.extend(rejection_of(&c));
    }
    Err(PlannerError::Infeasible { rejections })
}

/// Accepts a lane-change intent iff planning restricted to the intended
/// lane yields at least one valid candidate.
pub fn safety_gate(
    intent: &DriverIntent,
    init: &FrenetState,
    obstacles: &[ObstacleView],
    reference: &ReferenceLine,
    cfg: &PlannerConfig,
) -> bool {
    let restricted = cfg.restricted_to_lane(intent.target_offset);
    if restricted.lateral.max < restricted.lateral.min {
        return false;
    }
    plan(init, intent, obstacles, reference, &restricted).is_ok()
}

/// Writes one CSV row per candidate: grid cell, cost terms, validity.
pub fn write_candidates_csv<W: Write>(out: W, candidates: &[CandidateTrajectory]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["d", "tau", "v", "comfort", "consistency", "efficiency", "total", "valid", "reason"])?;
    for c in candidates {
        let reason = match &c.validity {
            Some(Err(r)) => r.to_string(),
            Some(Ok(())) => String::new(),
            None => "unchecked".to_string(),
        };
        w.write_record([
            c.target_offset.to_string(),
            c.horizon.to_string(),
            c.target_speed.to_string(),
            c.costs.comfort.to_string(),
            c.costs.consistency.to_string(),
            c.costs.efficiency.to_string(),
            c.cost_total.to_string(),
            c.is_valid().to_string(),
            reason,
        ])?;
    }
    w.flush()?;
    Ok(())
}
