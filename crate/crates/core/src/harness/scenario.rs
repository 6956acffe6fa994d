//! Scenario files (TOML) and the built-in routes and scenarios.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::driver::DriverStateKind;
use crate::geometry::{load_route, Point2, ReferenceLine};
use crate::planner::{IntentDirection, ObstacleView};

use super::HarnessError;

/// Waypoint spacing of generated routes.
const ROUTE_SPACING: f64 = 0.1;
/// Resampling step of every road reference line.
pub const ROAD_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticObstacle {
    pub s: f64,
    pub lane: usize,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingVehicle {
    /// Arc length at t = 0.
    pub s: f64,
    pub lane: usize,
    #[serde(default)]
    pub offset: f64,
    /// Constant speed along the lane, m/s.
    pub speed: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    1.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindChange {
    pub t: f64,
    pub kind: DriverStateKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledIntent {
    pub t: f64,
    pub dir: IntentDirection,
    /// A committed driver heads for the lane even if the gate rejects it.
    #[serde(default)]
    pub committed: bool,
}

/// Scripted steering fault: an additive bias, optionally with the driver's
/// preview switched off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub start: f64,
    pub end: f64,
    pub bias: f64,
    #[serde(default = "yes")]
    pub attentive: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverSchedule {
    pub initial: Option<DriverStateKind>,
    pub kinds: Vec<KindChange>,
    pub intents: Vec<ScheduledIntent>,
    pub faults: Vec<Fault>,
    pub takeover: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Route file path, or `builtin:<name>`.
    pub route: String,
    #[serde(default = "one")]
    pub lanes: usize,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
    /// Lane index, 0 is the rightmost lane.
    #[serde(default)]
    pub ego_lane: usize,
    pub cruise_speed: f64,
    #[serde(default = "default_start")]
    pub start_s: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub obstacles: Vec<StaticObstacle>,
    #[serde(default)]
    pub vehicles: Vec<MovingVehicle>,
    #[serde(default)]
    pub schedule: DriverSchedule,
}

fn one() -> usize {
    1
}
fn default_lane_width() -> f64 {
    3.5
}
fn default_start() -> f64 {
    5.0
}
fn default_duration() -> f64 {
    30.0
}

/// Road geometry shared by everything in an episode.
#[derive(Debug, Clone)]
pub struct Road {
    pub reference: ReferenceLine,
    pub lanes: usize,
    pub lane_width: f64,
}

impl Road {
    /// Lateral offset of the centre of `lane` (0 = rightmost).
    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 - (self.lanes as f64 - 1.0) / 2.0) * self.lane_width
    }

    pub fn half_width(&self) -> f64 {
        self.lanes as f64 * self.lane_width / 2.0
    }

    /// Lane whose centre is nearest to offset `l`.
    pub fn nearest_lane(&self, l: f64) -> usize {
        let idx = (l / self.lane_width + (self.lanes as f64 - 1.0) / 2.0).round();
        idx.clamp(0.0, self.lanes as f64 - 1.0) as usize
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(format!("{}: {m}", self.name)));
        if self.lanes == 0 || !(self.lane_width > 0.0) {
            return bad("need at least one lane of positive width".into());
        }
        if self.ego_lane >= self.lanes {
            return bad(format!("ego lane {} out of range", self.ego_lane));
        }
        if !(self.cruise_speed > 0.0) || !(self.duration > 0.0) || !(self.start_s >= 0.0) {
            return bad("cruise speed and duration must be positive, start_s non-negative".into());
        }
        if self.obstacles.iter().map(|o| o.lane).chain(self.vehicles.iter().map(|v| v.lane)).any(|l| l >= self.lanes) {
            return bad("obstacle lane out of range".into());
        }
        if self.vehicles.iter().any(|v| !(v.speed >= 0.0)) {
            return bad("vehicle speeds must be non-negative".into());
        }
        if self.obstacles.iter().map(|o| o.radius).chain(self.vehicles.iter().map(|v| v.radius)).any(|r| !(r > 0.0)) {
            return bad("radii must be positive".into());
        }
        let sch = &self.schedule;
        let times = sch
            .kinds
            .iter()
            .map(|k| k.t)
            .chain(sch.intents.iter().map(|i| i.t))
            .chain(sch.faults.iter().flat_map(|f| [f.start, f.end]))
            .chain(sch.takeover);
        for t in times {
            if !(t.is_finite() && t >= 0.0) {
                return bad(format!("schedule time {t} must be non-negative"));
            }
        }
        if sch.faults.iter().any(|f| f.end < f.start) {
            return bad("fault ends before it starts".into());
        }
        if sch.intents.iter().any(|i| i.dir == IntentDirection::Keep) {
            return bad("scheduled intents must be left or right".into());
        }
        Ok(())
    }

    /// Parses a scenario; relative route paths resolve against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self, HarnessError> {
        let mut sc: Scenario = toml::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        if let (Some(base), false) = (base, sc.route.starts_with("builtin:")) {
            let p = PathBuf::from(&sc.route);
            if p.is_relative() {
                sc.route = base.join(p).to_string_lossy().into_owned();
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// A built-in scenario id, or a path to a scenario file.
    pub fn resolve(id: &str) -> Result<Self, HarnessError> {
        if let Some(sc) = builtin_scenario(id) {
            return Ok(sc);
        }
        let path = Path::new(id);
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Scenario(format!("{id}: {e}")))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn build_road(&self) -> Result<Road, HarnessError> {
        let points = match self.route.strip_prefix("builtin:") {
            Some(name) => builtin_route(name).ok_or_else(|| HarnessError::Scenario(format!("unknown built-in route {name:?}")))?,
            None => load_route(Path::new(&self.route))?,
        };
        let reference = ReferenceLine::build(&points, ROAD_STEP)?;
        if self.start_s >= reference.total_length() {
            return Err(HarnessError::Scenario(format!("start_s {} beyond route length", self.start_s)));
        }
        Ok(Road { reference, lanes: self.lanes, lane_width: self.lane_width })
    }

    pub fn initial_kind(&self) -> DriverStateKind {
        self.schedule.initial.unwrap_or(DriverStateKind::Normal)
    }
}

/// Obstacle positions at time `t`, for the planner and collision checks.
pub fn obstacles_at(sc: &Scenario, road: &Road, t: f64) -> Vec<ObstacleView> {
    let r = &road.reference;
    let length = r.total_length();
    let statics = sc.obstacles.iter().map(|o| ObstacleView {
        position: r.offset_point(o.s, road.lane_center(o.lane) + o.offset),
        radius: o.radius,
        velocity: (0.0, 0.0),
    });
    let moving = sc.vehicles.iter().filter_map(|v| {
        let s = v.s + v.speed * t;
        if !(0.0..=length).contains(&s) {
            return None;
        }
        let h = r.sample(s).heading;
        Some(ObstacleView {
            position: r.offset_point(s, road.lane_center(v.lane) + v.offset),
            radius: v.radius,
            velocity: (v.speed * h.cos(), v.speed * h.sin()),
        })
    });
    statics.chain(moving).collect()
}

/// Polyline builder that appends straight runs and arcs with a fixed
/// waypoint spacing.
struct PathBuilder {
    points: Vec<Point2>,
    heading: f64,
}

impl PathBuilder {
    fn new() -> Self {
        Self { points: vec![Point2::new(0.0, 0.0)], heading: 0.0 }
    }

    fn last(&self) -> Point2 {
        *self.points.last().unwrap()
    }

    fn straight(mut self, length: f64) -> Self {
        let n = (length / ROUTE_SPACING).round() as usize;
        let p0 = self.last();
        let (s, c) = self.heading.sin_cos();
        for i in 1..=n {
            let d = length * i as f64 / n as f64;
            self.points.push(Point2::new(p0.x + d * c, p0.y + d * s));
        }
        self
    }

    /// Arc of `radius` turning by `angle` (positive is left).
    fn arc(mut self, radius: f64, angle: f64) -> Self {
        let n = (radius * angle.abs() / ROUTE_SPACING).round() as usize;
        let p0 = self.last();
        let side = angle.signum();
        let (cx, cy) = (p0.x - side * radius * self.heading.sin(), p0.y + side * radius * self.heading.cos());
        let start = self.heading - side * PI / 2.0;
        for i in 1..=n {
            let a = start + angle * i as f64 / n as f64;
            self.points.push(Point2::new(cx + radius * a.cos(), cy + radius * a.sin()));
        }
        self.heading += angle;
        self
    }
}

pub const BUILTIN_ROUTES: [&str; 4] = ["route1", "route2", "route3", "route4"];

/// Waypoints of a built-in route.
pub fn builtin_route(name: &str) -> Option<Vec<Point2>> {
    let b = PathBuilder::new();
    let b = match name {
        "route1" | "route3" => b.straight(600.0),
        "route2" => b.straight(100.0).arc(200.0, PI / 4.0).straight(40.0).arc(60.0, -PI / 2.0).straight(200.0),
        "route4" => b.straight(150.0).arc(40.0, 2.0 * PI).straight(250.0),
        _ => return None,
    };
    Some(b.points)
}

pub const BUILTIN_SCENARIOS: [&str; 9] =
    ["route1", "route2", "route3", "route4", "scenario1", "scenario2", "scenario3", "scenario4", "scenario5"];

const KMH: f64 = 1.0 / 3.6;

fn base(name: &str, route: &str, lanes: usize, ego_lane: usize, cruise: f64) -> Scenario {
    Scenario {
        name: name.to_string(),
        route: format!("builtin:{route}"),
        lanes,
        lane_width: 3.5,
        ego_lane,
        cruise_speed: cruise,
        start_s: 5.0,
        duration: 30.0,
        obstacles: Vec::new(),
        vehicles: Vec::new(),
        schedule: DriverSchedule::default(),
    }
}

fn vehicle(s: f64, lane: usize, kmh: f64) -> MovingVehicle {
    MovingVehicle { s, lane, offset: 0.0, speed: kmh * KMH, radius: 1.5 }
}

fn intent(t: f64, dir: IntentDirection, committed: bool) -> ScheduledIntent {
    ScheduledIntent { t, dir, committed }
}

pub fn builtin_scenario(id: &str) -> Option<Scenario> {
    use DriverStateKind::*;
    use IntentDirection::*;
    let v60 = 60.0 * KMH;
    let sc = match id {
        "route1" => base(id, "route1", 3, 1, v60),
        "route2" => base(id, "route2", 1, 0, 50.0 * KMH),
        "route3" => {
            let mut sc = base(id, "route3", 3, 2, v60);
            sc.vehicles = vec![vehicle(60.0, 1, 50.0), vehicle(150.0, 0, 45.0)];
            sc
        }
        "route4" => {
            let mut sc = base(id, "route4", 2, 0, 40.0 * KMH);
            sc.vehicles = vec![vehicle(40.0, 1, 40.0), vehicle(-60.0, 1, 40.0)];
            sc
        }
        // Drifting distracted driver; the automation holds the lane.
        "scenario1" => {
            let mut sc = base(id, "route1", 3, 1, v60);
            sc.schedule.initial = Some(Distracted);
            sc.schedule.faults = vec![Fault { start: 3.0, end: 12.0, bias: -0.006, attentive: false }];
            sc.duration = 20.0;
            sc
        }
        // Overtaking a 40 km/h vehicle at 60 km/h with an accepted left intent.
        "scenario2" => {
            let mut sc = base(id, "route1", 3, 1, v60);
            sc.vehicles = vec![vehicle(65.0, 1, 40.0)];
            sc.schedule.intents = vec![intent(2.0, Left, true)];
            sc.duration = 20.0;
            sc
        }
        // Left intent rejected for a vehicle in the blind spot; the plan
        // moves right instead.
        "scenario3" => {
            let mut sc = base(id, "route1", 3, 1, v60);
            sc.start_s = 50.0;
            sc.vehicles = vec![vehicle(120.0, 1, 40.0), vehicle(40.0, 2, 70.0)];
            sc.schedule.intents = vec![intent(2.0, Left, false)];
            sc.duration = 20.0;
            sc
        }
        // Automation fault ahead of a stopped obstacle; the driver takes over.
        "scenario4" => {
            let mut sc = base(id, "route1", 3, 1, v60);
            sc.obstacles = vec![StaticObstacle { s: 200.0, lane: 1, offset: 0.0, radius: 1.5 }];
            sc.schedule.takeover = Some(6.0);
            sc.schedule.intents = vec![intent(6.5, Left, true)];
            sc.duration = 20.0;
            sc
        }
        // Unsafe right intent with a drifting driver, then a safe one.
        "scenario5" => {
            let mut sc = base(id, "route1", 3, 1, v60);
            sc.start_s = 50.0;
            sc.vehicles = vec![vehicle(140.0, 1, 40.0), vehicle(65.0, 2, 50.0), vehicle(10.0, 0, 100.0)];
            sc.schedule.intents = vec![intent(1.0, Right, false), intent(6.0, Right, true)];
            sc.schedule.faults = vec![Fault { start: 1.0, end: 3.0, bias: -0.01, attentive: true }];
            sc.duration = 20.0;
            sc
        }
        _ => return None,
    };
    Some(sc)
}
