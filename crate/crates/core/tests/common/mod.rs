#![allow(dead_code)]

use std::f64::consts::PI;

use hocd_core::geometry::{FrenetState, Point2, ReferenceLine};
use hocd_core::planner::{CandidateTrajectory, ObstacleView, PlannerConfig};
use rand::Rng;

/// Reference shapes with closed-form geometry.
#[derive(Debug, Clone, Copy)]
pub enum Shape {
    /// Along +x from the origin.
    Straight { length: f64 },
    /// Counter-clockwise from the origin around `(0, radius)`.
    Arc { radius: f64, length: f64 },
}

impl Shape {
    pub fn point(&self, s: f64, l: f64) -> Point2 {
        match *self {
            Shape::Straight { .. } => Point2::new(s, l),
            Shape::Arc { radius, .. } => {
                let th = s / radius;
                Point2::new((radius - l) * th.sin(), radius - (radius - l) * th.cos())
            }
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            Shape::Straight { length } | Shape::Arc { length, .. } => length,
        }
    }

    pub fn build(&self) -> ReferenceLine {
        let n = (self.length() / 0.05).round() as usize;
        let pts: Vec<Point2> = (0..=n).map(|i| self.point(self.length() * i as f64 / n as f64, 0.0)).collect();
        ReferenceLine::build(&pts, 0.5).unwrap()
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, k| acc * t + k)
}

/// Validity by brute force: the candidate is resampled at `dt / 10`, mapped
/// through the closed-form shape, and curvature / tangential acceleration
/// are recovered from central differences of the positions.
pub fn dense_valid(c: &CandidateTrajectory, shape: &Shape, obstacles: &[ObstacleView], cfg: &PlannerConfig) -> bool {
    let h = c.dt / 10.0;
    let n = (c.horizon / h).round() as usize;
    let lat = c.lateral.coefficients();
    let lon = c.longitudinal.coefficients();
    let at = |j: isize| {
        let t = j as f64 * h;
        shape.point(horner(lon, t), horner(lat, t))
    };
    let speed = |j: isize| {
        let (a, b) = (at(j - 1), at(j + 1));
        ((b.x - a.x) / (2.0 * h)).hypot((b.y - a.y) / (2.0 * h))
    };
    for j in 0..=n as isize {
        let (a, p, b) = (at(j - 1), at(j), at(j + 1));
        let (dx, dy) = ((b.x - a.x) / (2.0 * h), (b.y - a.y) / (2.0 * h));
        let (ddx, ddy) = ((b.x - 2.0 * p.x + a.x) / (h * h), (b.y - 2.0 * p.y + a.y) / (h * h));
        let kappa = (dx * ddy - dy * ddx) / (dx * dx + dy * dy).powf(1.5);
        if kappa.abs() > cfg.max_curvature {
            return false;
        }
        let accel = (speed(j + 1) - speed(j - 1)) / (2.0 * h);
        if accel.abs() > cfg.max_accel {
            return false;
        }
        let t = j as f64 * h;
        for o in obstacles {
            let q = Point2::new(o.position.x + o.velocity.0 * t, o.position.y + o.velocity.1 * t);
            if p.distance(&q) < cfg.ego_radius + o.radius {
                return false;
            }
        }
    }
    true
}

pub struct RandomCase {
    pub shape: Shape,
    pub init: FrenetState,
    pub target: (f64, f64, f64),
    pub obstacles: Vec<ObstacleView>,
}

/// A random initial state, terminal cell and obstacle set placed near the
/// candidate's own path so that all three checks get exercised.
pub fn random_case<R: Rng>(rng: &mut R) -> RandomCase {
    let shape = if rng.random_bool(0.5) {
        Shape::Straight { length: 300.0 }
    } else {
        Shape::Arc { radius: rng.random_range(30.0..150.0), length: 300.0 }
    };
    let v0: f64 = rng.random_range(5.0..20.0);
    let init = FrenetState::from_time_domain(
        rng.random_range(10.0..50.0),
        v0,
        rng.random_range(-1.0..1.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-0.5..0.5),
    );
    let target = (rng.random_range(-3.5..3.5), rng.random_range(3.0..5.0), v0 + rng.random_range(-2.0..2.0));
    let mut obstacles = Vec::new();
    for _ in 0..rng.random_range(0..3) {
        let t: f64 = rng.random_range(0.0..target.1);
        let s = init.s + v0 * t;
        let p = shape.point(s, rng.random_range(-4.0..4.0));
        let velocity = (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
        let position = Point2::new(p.x - velocity.0 * t, p.y - velocity.1 * t);
        obstacles.push(ObstacleView { position, radius: rng.random_range(0.5..2.0), velocity });
    }
    RandomCase { shape, init, target, obstacles }
}

pub fn default_planner() -> PlannerConfig {
    PlannerConfig::for_road(-3.5, 3.5, 3.5, 16.0)
}

/// Closed-form composite line: straight, left arc, right arc.
pub fn composite_points() -> Vec<Point2> {
    let mut pts = Vec::new();
    let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.0f64);
    let ds = 0.05;
    let segments = [(80.0, 0.0), (60.0 * PI / 3.0, 1.0 / 60.0), (40.0, 0.0), (100.0 * PI / 4.0, -1.0 / 100.0), (50.0, 0.0)];
    pts.push(Point2::new(x, y));
    for (len, k) in segments {
        let n = (len / ds).round() as usize;
        for _ in 0..n {
            let step = len / n as f64;
            let mid = h + 0.5 * k * step;
            x += step * mid.cos();
            y += step * mid.sin();
            h += k * step;
            pts.push(Point2::new(x, y));
        }
    }
    pts
}
